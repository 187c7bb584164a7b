import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional

MODULE_DIR = Path(__file__).resolve().parent


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        return default


def _env_optional_float(name: str, default: Optional[float]) -> Optional[float]:
    raw = os.getenv(name)
    if raw is None:
        return default
    if raw.strip().lower() in ("", "off", "none", "no"):
        return None
    try:
        return float(raw)
    except ValueError:
        return default


def parse_bool(raw: object) -> Optional[bool]:
    """True/False para las grafias habituales; None si no se reconoce."""
    if isinstance(raw, bool):
        return raw
    normalized = str(raw).strip().lower()
    if normalized in ("1", "true", "yes", "y", "on", "si"):
        return True
    if normalized in ("0", "false", "no", "n", "off"):
        return False
    return None


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    parsed = parse_bool(raw)
    return default if parsed is None else parsed


class ShdError(Exception):
    exit_code = 1
    tag = "error"

    def cli_line(self) -> str:
        return f"E{self.exit_code} {self.tag}: {self}"


class ShdConfigError(ShdError, ValueError):
    exit_code = 2
    tag = "config"


class ShdIOError(ShdError, OSError):
    exit_code = 3
    tag = "io"


class ShdNumericError(ShdError, ArithmeticError):
    exit_code = 4
    tag = "numeric"


@dataclass(frozen=True)
class AppConfig:
    output_dir: str = field(default_factory=lambda: os.getenv("SHD_OUTPUT_DIR", "results"))
    event_log_file: str = field(default_factory=lambda: os.getenv("SHD_EVENT_LOG_FILE", "shd_events.jsonl"))
    enable_event_logging: bool = field(default_factory=lambda: _env_bool("SHD_ENABLE_EVENT_LOGGING", True))
    max_log_text_chars: int = field(default_factory=lambda: _env_int("SHD_MAX_LOG_TEXT_CHARS", 4000))
    geometry_file: str = field(
        default_factory=lambda: os.getenv("SHD_GEOMETRY_FILE", str(MODULE_DIR / "array_32ch.yaml"))
    )

    speed_of_sound_m_s: float = field(default_factory=lambda: _env_float("SHD_SPEED_OF_SOUND_M_S", 343.0))
    sample_rate_hz: int = field(default_factory=lambda: _env_int("SHD_SAMPLE_RATE_HZ", 8000))
    window_size: int = field(default_factory=lambda: _env_int("SHD_WINDOW_SIZE", 512))
    overlap: float = field(default_factory=lambda: _env_float("SHD_OVERLAP", 0.5))
    fft_size: int = field(default_factory=lambda: _env_int("SHD_FFT_SIZE", 512))
    band_lo_hz: float = field(default_factory=lambda: _env_float("SHD_BAND_LO_HZ", 1000.0))
    band_hi_hz: float = field(default_factory=lambda: _env_float("SHD_BAND_HI_HZ", 2500.0))
    block_duration_s: float = field(default_factory=lambda: _env_float("SHD_BLOCK_DURATION_S", 0.3))

    sh_order: int = field(default_factory=lambda: _env_int("SHD_SH_ORDER", 3))
    max_eq_gain_db: Optional[float] = field(default_factory=lambda: _env_optional_float("SHD_MAX_EQ_GAIN_DB", 40.0))
    elev_step_deg: float = field(default_factory=lambda: _env_float("SHD_ELEV_STEP_DEG", 3.0))
    azim_step_deg: float = field(default_factory=lambda: _env_float("SHD_AZIM_STEP_DEG", 2.0))

    anomaly_threshold_deg: float = field(default_factory=lambda: _env_float("SHD_ANOMALY_THRESHOLD_DEG", 10.0))
    trim_threshold_db: float = field(default_factory=lambda: _env_float("SHD_TRIM_THRESHOLD_DB", -35.0))
    image_gain_floor_db: float = field(default_factory=lambda: _env_float("SHD_IMAGE_GAIN_FLOOR_DB", -60.0))
    max_image_order: int = field(default_factory=lambda: _env_int("SHD_MAX_IMAGE_ORDER", 40))
    jobs: int = field(default_factory=lambda: _env_int("SHD_JOBS", 4))

    @property
    def hop_size(self) -> int:
        return int(round(self.window_size * (1.0 - self.overlap)))


def load_yaml_mapping(path: str) -> Dict[str, object]:
    try:
        import yaml  # type: ignore
    except ModuleNotFoundError as exc:
        raise ShdConfigError("PyYAML no instalado. Usa: pip install pyyaml") from exc

    if not path or not os.path.exists(path):
        raise ShdIOError(f"No existe el fichero {path!r}.")
    try:
        with open(path, "r", encoding="utf-8") as file:
            data = yaml.safe_load(file.read())
    except OSError as exc:
        raise ShdIOError(f"No se pudo leer {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ShdConfigError(f"No se pudo parsear YAML de {path}: {exc}") from exc

    if not isinstance(data, dict):
        raise ShdConfigError(f"{path} no tiene estructura valida (dict raiz).")
    return data


class EventLogger:
    def __init__(self, config: Optional[AppConfig] = None):
        self.config = config or AppConfig()
        self._lock = threading.Lock()
        self._log_warning_printed = False

    def clip(self, text: str) -> str:
        if len(text) <= self.config.max_log_text_chars:
            return text
        clipped = text[: self.config.max_log_text_chars]
        remaining = len(text) - len(clipped)
        return f"{clipped}... [truncated {remaining} chars]"

    def log(self, event: str, **payload: object) -> None:
        if not self.config.enable_event_logging:
            return
        if not self.config.event_log_file:
            return
        row: Dict[str, object] = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "event": event,
        }
        for key, value in payload.items():
            row[key] = self.clip(value) if isinstance(value, str) else value
        try:
            with self._lock:
                with open(self.config.event_log_file, "a", encoding="utf-8") as file:
                    file.write(json.dumps(row, ensure_ascii=False, default=str) + "\n")
        except OSError as exc:
            if not self._log_warning_printed:
                print(f"[!] No se pudo escribir log en {self.config.event_log_file}: {exc}")
                self._log_warning_printed = True
