import hashlib
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from doa_pipeline import ENCODERS, METHODS, localize_signal, parse_methods
from lra_localizer import linalg_counters
from room_sim import DEFAULT_ROOM_DIMS_M, RoomSpec, random_scene, sabine_beta, simulate_scene
from sh_basis import Direction, MdpDictionary, build_dictionary
from sh_encoder import ArrayGeometry
from shd_config import AppConfig, EventLogger, ShdConfigError, load_yaml_mapping, parse_bool

DEFAULT_T60_S = (0.0, 0.5, 1.0)
DEFAULT_SNR_DB = (5.0, 10.0, 20.0, 40.0)
DEFAULT_RUNS = 10


def angular_error(est: Direction, truth: Direction) -> float:
    dot = float(np.dot(est.unit_vector, truth.unit_vector))
    return float(np.rad2deg(np.arccos(np.clip(dot, -1.0, 1.0))))


@dataclass(frozen=True)
class TrialResult:
    method: str
    t60_s: float
    snr_db: Optional[float]
    run: int
    block_index: int
    psi_e_deg: float
    anomalous: bool
    truth: Optional[Direction] = None
    estimate: Optional[Direction] = None
    time_s: float = 0.0

    @classmethod
    def build(
        cls,
        method: str,
        t60_s: float,
        snr_db: Optional[float],
        run: int,
        block_index: int,
        truth: Direction,
        estimate: Direction,
        time_s: float = 0.0,
        threshold_deg: float = 10.0,
    ) -> "TrialResult":
        psi = angular_error(estimate, truth)
        return cls(
            method=method,
            t60_s=t60_s,
            snr_db=snr_db,
            run=run,
            block_index=block_index,
            psi_e_deg=psi,
            anomalous=not psi < threshold_deg,
            truth=truth,
            estimate=estimate,
            time_s=time_s,
        )


ErrorSource = Union[TrialResult, float]


def _errors(results: Sequence[ErrorSource]) -> np.ndarray:
    return np.abs(
        np.array([item.psi_e_deg if isinstance(item, TrialResult) else float(item) for item in results], dtype=float)
    )


def probability_of_detection(results: Sequence[ErrorSource], threshold_deg: float = 10.0) -> float:
    """Fraccion de estimaciones con |psi_e| estrictamente menor que el umbral."""
    errors = _errors(results)
    if errors.size == 0:
        raise ShdConfigError("PD indefinida: no hay estimaciones.")
    return float(np.count_nonzero(errors < threshold_deg) / errors.size)


def doa_rmse(results: Sequence[ErrorSource], threshold_deg: float = 10.0) -> Optional[float]:
    """RMSE sobre las estimaciones no anomalas; None si no hay ninguna."""
    errors = _errors(results)
    good = errors[errors < threshold_deg]
    if good.size == 0:
        return None
    return float(np.sqrt(np.mean(good**2)))


def derive_seed(master_seed: int, *labels: object) -> int:
    """Semilla de 63 bits derivada por cadena sha256 de la semilla maestra y etiquetas."""
    digest = hashlib.sha256(str(int(master_seed)).encode("utf-8")).digest()
    for label in labels:
        digest = hashlib.sha256(digest + b"|" + str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


@dataclass(frozen=True)
class SummaryRow:
    method: str
    t60_s: float
    snr_db: Optional[float]
    runs: int
    pd_mean: float
    pd_std: float
    rmse_mean: Optional[float]
    rmse_std: Optional[float]
    n_trials: int
    n_nonanomalous: int


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    data = np.asarray(values, dtype=float)
    return float(np.mean(data)), float(np.std(data))


def aggregate(
    trials: Sequence[TrialResult],
    threshold_deg: float = 10.0,
    methods: Optional[Sequence[str]] = None,
) -> List[SummaryRow]:
    """PD y RMSE por (metodo, T60, SNR): media y desviacion tipica entre runs."""
    order = {name: index for index, name in enumerate(methods or METHODS)}
    groups: Dict[Tuple[str, float, Optional[float]], Dict[int, List[TrialResult]]] = {}
    for trial in trials:
        key = (trial.method, trial.t60_s, trial.snr_db)
        groups.setdefault(key, {}).setdefault(trial.run, []).append(trial)

    def sort_key(key: Tuple[str, float, Optional[float]]) -> Tuple[int, str, float, float]:
        method, t60_s, snr_db = key
        snr = math.inf if snr_db is None else snr_db
        return order.get(method, len(order)), method, t60_s, snr

    rows: List[SummaryRow] = []
    for key in sorted(groups, key=sort_key):
        by_run = groups[key]
        pds = [probability_of_detection(by_run[run], threshold_deg) for run in sorted(by_run)]
        rmses = [value for value in (doa_rmse(by_run[run], threshold_deg) for run in sorted(by_run)) if value is not None]
        all_trials = [trial for run in by_run.values() for trial in run]
        pd_mean, pd_std = _mean_std(pds)
        rmse_mean, rmse_std = _mean_std(rmses) if rmses else (None, None)
        rows.append(
            SummaryRow(
                method=key[0],
                t60_s=key[1],
                snr_db=key[2],
                runs=len(by_run),
                pd_mean=pd_mean,
                pd_std=pd_std,
                rmse_mean=rmse_mean,
                rmse_std=rmse_std,
                n_trials=len(all_trials),
                n_nonanomalous=int(np.count_nonzero(_errors(all_trials) < threshold_deg)),
            )
        )
    return rows


_SWEEP_KEYS = {
    "name",
    "t60_s",
    "snr_db",
    "runs",
    "methods",
    "master_seed",
    "room_dims_m",
    "source_distance_m",
    "duration_s",
    "trim_threshold_db",
    "encoder",
    "analysis",
}


@dataclass(frozen=True)
class SweepConfig:
    t60_values_s: Tuple[float, ...] = DEFAULT_T60_S
    snr_values_db: Tuple[Optional[float], ...] = DEFAULT_SNR_DB
    runs: int = DEFAULT_RUNS
    methods: Tuple[str, ...] = METHODS
    master_seed: int = 0
    room_dims_m: Tuple[float, float, float] = DEFAULT_ROOM_DIMS_M
    source_distance_m: float = 2.0
    duration_s: float = 3.5
    trim_threshold_db: Optional[float] = -35.0
    encoder: str = "quadrature"
    name: str = "sweep"
    analysis: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ShdConfigError(f"runs debe ser >= 1 (recibido {self.runs}).")
        if not self.t60_values_s or not self.snr_values_db:
            raise ShdConfigError("La rejilla de condiciones no puede estar vacia.")
        if any(value < 0.0 for value in self.t60_values_s):
            raise ShdConfigError("Todos los T60 deben ser >= 0.")
        object.__setattr__(self, "methods", tuple(parse_methods(self.methods)))
        if self.encoder not in ENCODERS:
            raise ShdConfigError(f"Codificador desconocido: {self.encoder!r} (usa {' | '.join(ENCODERS)}).")
        if self.duration_s <= 0.0:
            raise ShdConfigError(f"duration_s debe ser > 0 (recibido {self.duration_s}).")
        if self.source_distance_m <= 0.0:
            raise ShdConfigError(f"source_distance_m debe ser > 0 (recibido {self.source_distance_m}).")
        for t60 in self.t60_values_s:
            sabine_beta(RoomSpec(tuple(self.room_dims_m), t60))
        # Colocacion de prueba: sala y distancia deben admitir al menos una escena.
        random_scene(
            derive_seed(self.master_seed, "scene", 0),
            self.t60_values_s[0],
            None,
            room_dims_m=self.room_dims_m,
            source_distance_m=self.source_distance_m,
            duration_s=self.duration_s,
        )

    @property
    def conditions(self) -> List[Tuple[float, Optional[float]]]:
        return [(t60, snr) for t60 in self.t60_values_s for snr in self.snr_values_db]

    def scene_keys(self) -> List[Tuple[int, float, Optional[float], int]]:
        return [
            (index, t60, snr, run)
            for index, (t60, snr) in enumerate(self.conditions)
            for run in range(self.runs)
        ]

    def apply_analysis(self, config: AppConfig) -> AppConfig:
        return apply_overrides(config, self.analysis, source=f"sweep {self.name}")

    @classmethod
    def from_mapping(cls, data: Dict[str, object], source: str = "sweep") -> "SweepConfig":
        unknown = sorted(set(data) - _SWEEP_KEYS)
        if unknown:
            raise ShdConfigError(f"{source}: claves desconocidas {unknown}")
        kwargs: Dict[str, object] = {}
        try:
            if "t60_s" in data:
                kwargs["t60_values_s"] = tuple(float(value) for value in _as_list(data["t60_s"]))
            if "snr_db" in data:
                kwargs["snr_values_db"] = tuple(
                    None if value is None else float(value) for value in _as_list(data["snr_db"])
                )
            if "methods" in data:
                kwargs["methods"] = tuple(str(value) for value in _as_list(data["methods"]))
            if "room_dims_m" in data:
                kwargs["room_dims_m"] = tuple(float(value) for value in _as_list(data["room_dims_m"]))
            for key, cast in (("runs", int), ("master_seed", int), ("source_distance_m", float), ("duration_s", float)):
                if key in data:
                    kwargs[key] = cast(data[key])
            if "trim_threshold_db" in data:
                raw = data["trim_threshold_db"]
                kwargs["trim_threshold_db"] = None if raw is None else float(raw)
            for key in ("encoder", "name"):
                if key in data:
                    kwargs[key] = str(data[key])
        except (TypeError, ValueError) as exc:
            raise ShdConfigError(f"{source}: valor invalido ({exc})") from exc
        analysis = data.get("analysis") or {}
        if not isinstance(analysis, dict):
            raise ShdConfigError(f"{source}: 'analysis' debe ser un mapa.")
        kwargs["analysis"] = dict(analysis)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str) -> "SweepConfig":
        return cls.from_mapping(load_yaml_mapping(path), source=path)


def _as_list(value: object) -> List[object]:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def apply_overrides(config: AppConfig, overrides: Dict[str, object], source: str = "config") -> AppConfig:
    """Sobrescribe campos de AppConfig desde un mapa (seccion 'analysis')."""
    if not overrides:
        return config
    known = {item.name: item for item in fields(AppConfig)}
    unknown = sorted(set(overrides) - set(known))
    if unknown:
        raise ShdConfigError(f"{source}: parametros de analisis desconocidos {unknown}")
    values: Dict[str, object] = {}
    for key, raw in overrides.items():
        current = getattr(config, key)
        try:
            if raw is None or (key == "max_eq_gain_db" and str(raw).strip().lower() in ("off", "none", "no")):
                values[key] = None
            elif isinstance(current, bool):
                parsed = parse_bool(raw)
                if parsed is None:
                    raise ValueError(raw)
                values[key] = parsed
            elif isinstance(current, int):
                values[key] = int(raw)
            elif isinstance(current, float) or key == "max_eq_gain_db":
                values[key] = float(raw)
            else:
                values[key] = str(raw)
        except (TypeError, ValueError) as exc:
            raise ShdConfigError(f"{source}: valor invalido para {key}: {raw!r}") from exc
    for key, value in values.items():
        if value is None and key != "max_eq_gain_db":
            raise ShdConfigError(f"{source}: {key} no admite valor nulo.")
    return replace(config, **values)


@dataclass(frozen=True)
class SweepReport:
    sweep_id: str
    rows: List[SummaryRow]
    trials: List[TrialResult]
    failures: int = 0
    failed_scenes: List[Dict[str, object]] = field(default_factory=list)
    linalg: Dict[str, int] = field(default_factory=dict)


class SweepRunner:
    def __init__(
        self,
        sweep: SweepConfig,
        config: Optional[AppConfig] = None,
        geom: Optional[ArrayGeometry] = None,
        dictionary: Optional[MdpDictionary] = None,
        logger: Optional[EventLogger] = None,
        jobs: Optional[int] = None,
        verbose: bool = False,
    ):
        self.sweep = sweep
        self.config = sweep.apply_analysis(config or AppConfig())
        self.geom = geom or ArrayGeometry.load(self.config.geometry_file)
        self.dictionary = dictionary or build_dictionary(
            self.config.elev_step_deg, self.config.azim_step_deg, self.config.sh_order
        )
        if self.dictionary.order != self.config.sh_order:
            raise ShdConfigError(
                f"Orden del diccionario ({self.dictionary.order}) distinto del orden de analisis ({self.config.sh_order})."
            )
        self.geom.check_order(self.config.sh_order)
        self.logger = logger or EventLogger(self.config)
        self.jobs = max(1, self.config.jobs if jobs is None else jobs)
        self.verbose = verbose
        self._lock = threading.Lock()
        self._sweep_seq = 0

    def _next_sweep_id(self) -> str:
        with self._lock:
            self._sweep_seq += 1
            sweep_seq = self._sweep_seq
        millis = int(time.time() * 1000)
        return f"sweep-{millis}-{sweep_seq}"

    def _say(self, text: str) -> None:
        if self.verbose:
            print(text)

    def scene_seeds(self, t60_s: float, snr_db: Optional[float], run: int) -> Tuple[int, int]:
        # La escena solo depende del run: mismas colocaciones en todas las condiciones.
        scene_seed = derive_seed(self.sweep.master_seed, "scene", run)
        noise_seed = derive_seed(self.sweep.master_seed, "noise", t60_s, snr_db, run)
        return scene_seed, noise_seed

    def run_scene(self, t60_s: float, snr_db: Optional[float], run: int) -> List[TrialResult]:
        scene_seed, noise_seed = self.scene_seeds(t60_s, snr_db, run)
        scene = random_scene(
            scene_seed,
            t60_s,
            snr_db,
            room_dims_m=self.sweep.room_dims_m,
            source_distance_m=self.sweep.source_distance_m,
            noise_seed=noise_seed,
            duration_s=self.sweep.duration_s,
            sample_rate_hz=float(self.config.sample_rate_hz),
            speed_of_sound_m_s=self.config.speed_of_sound_m_s,
            trim_threshold_db=self.sweep.trim_threshold_db,
        )
        simulation = simulate_scene(scene, self.geom, self.config)
        blocks = localize_signal(
            simulation.signal,
            self.geom,
            self.dictionary,
            self.config,
            methods=self.sweep.methods,
            jobs=1,
            encoder=self.sweep.encoder,
        )
        return [
            TrialResult.build(
                method=block.method,
                t60_s=t60_s,
                snr_db=snr_db,
                run=run,
                block_index=block.block_index,
                truth=simulation.truth,
                estimate=block.estimate.direction,
                time_s=block.time_s,
                threshold_deg=self.config.anomaly_threshold_deg,
            )
            for block in blocks
        ]

    def _guarded_scene(self, sweep_id: str, t60_s: float, snr_db: Optional[float], run: int) -> List[TrialResult]:
        self.logger.log("scene_started", sweep_id=sweep_id, t60_s=t60_s, snr_db=snr_db, run=run)
        started = time.time()
        trials = self.run_scene(t60_s, snr_db, run)
        self.logger.log(
            "scene_finished",
            sweep_id=sweep_id,
            t60_s=t60_s,
            snr_db=snr_db,
            run=run,
            n_trials=len(trials),
            elapsed_s=round(time.time() - started, 3),
        )
        return trials

    def run_sweep(self) -> SweepReport:
        sweep_id = self._next_sweep_id()
        keys = self.sweep.scene_keys()
        linalg_before = linalg_counters.snapshot()
        self.logger.log(
            "sweep_started",
            sweep_id=sweep_id,
            name=self.sweep.name,
            conditions=len(self.sweep.conditions),
            runs=self.sweep.runs,
            methods=list(self.sweep.methods),
            master_seed=self.sweep.master_seed,
            jobs=self.jobs,
        )
        self._say(f"[+] {sweep_id}: {len(keys)} escenas, {self.jobs} workers")

        results: Dict[Tuple[int, int], List[TrialResult]] = {}
        failed: List[Dict[str, object]] = []
        with ThreadPoolExecutor(max_workers=min(self.jobs, len(keys))) as executor:
            futures = {
                executor.submit(self._guarded_scene, sweep_id, t60, snr, run): (index, t60, snr, run)
                for index, t60, snr, run in keys
            }
            for future in as_completed(futures):
                index, t60, snr, run = futures[future]
                try:
                    results[(index, run)] = future.result()
                except Exception as exc:
                    failed.append({"t60_s": t60, "snr_db": snr, "run": run, "error": str(exc)})
                    self.logger.log("scene_error", sweep_id=sweep_id, t60_s=t60, snr_db=snr, run=run, error=str(exc))
                    self._say(f"[!] Escena T60={t60} SNR={snr} run={run} descartada: {exc}")
                    continue
                self._say(f"[+] T60={t60} SNR={snr} run={run}: {len(results[(index, run)])} estimaciones")

        method_position = {name: position for position, name in enumerate(self.sweep.methods)}
        trials = [trial for key in sorted(results) for trial in results[key]]
        trials.sort(key=lambda trial: method_position[trial.method])
        failed.sort(key=lambda item: (str(item["t60_s"]), str(item["snr_db"]), int(item["run"])))
        rows = aggregate(trials, self.config.anomaly_threshold_deg, self.sweep.methods)
        linalg_after = linalg_counters.snapshot()
        linalg = {name: linalg_after[name] - linalg_before[name] for name in linalg_after}

        self.logger.log(
            "sweep_finished",
            sweep_id=sweep_id,
            name=self.sweep.name,
            n_trials=len(trials),
            n_rows=len(rows),
            failures=len(failed),
            **linalg,
        )
        return SweepReport(
            sweep_id=sweep_id,
            rows=rows,
            trials=trials,
            failures=len(failed),
            failed_scenes=failed,
            linalg=linalg,
        )


def run_sweep(
    sweep: SweepConfig,
    config: Optional[AppConfig] = None,
    jobs: Optional[int] = None,
    logger: Optional[EventLogger] = None,
    verbose: bool = False,
) -> SweepReport:
    return SweepRunner(sweep, config=config, logger=logger, jobs=jobs, verbose=verbose).run_sweep()
