"""Simulador de sala rectangular por metodo de fuentes imagen.

Renderiza la respuesta de un array esferico (abierto o rigido) a cada imagen
como onda esferica con la respuesta modal b_n(kR) del array, suma las
imagenes por bin y genera senales multicanal por convolucion FFT.
"""

import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sps
from scipy import special

from sh_basis import Direction, i_power, mode_strength_matrix
from sh_encoder import ArrayGeometry
from shd_config import AppConfig, ShdConfigError, ShdIOError, ShdNumericError, load_yaml_mapping
from stft_analysis import MultichannelSignal, read_wav, trim_silence

DEFAULT_ROOM_DIMS_M = (10.0, 8.0, 6.0)
SABINE_CONSTANT = 0.161
MAX_LATTICE_ORDER = 200
PRE_DELAY_SAMPLES = 64
IMAGE_CHUNK = 512
SPEECH_NOISE = "speech_noise"


@dataclass(frozen=True)
class RoomSpec:
    dimensions_m: Tuple[float, float, float]
    t60_s: float
    c: float = 343.0

    def __post_init__(self) -> None:
        dims = tuple(float(value) for value in self.dimensions_m)
        if len(dims) != 3 or min(dims) <= 0.0:
            raise ShdConfigError(f"Dimensiones de sala invalidas: {self.dimensions_m}")
        if self.t60_s is None or self.t60_s < 0.0:
            raise ShdConfigError(f"T60 debe ser >= 0 (recibido {self.t60_s}).")
        if self.c <= 0.0:
            raise ShdConfigError(f"Velocidad del sonido invalida: {self.c}")
        object.__setattr__(self, "dimensions_m", dims)
        object.__setattr__(self, "t60_s", float(self.t60_s))

    @property
    def volume(self) -> float:
        length, width, height = self.dimensions_m
        return length * width * height

    @property
    def surface(self) -> float:
        length, width, height = self.dimensions_m
        return 2.0 * (length * width + length * height + width * height)


@dataclass(frozen=True)
class ScenePlacement:
    array_center_m: np.ndarray
    sources_m: np.ndarray
    array_radius_m: float = 0.0

    def __post_init__(self) -> None:
        center = np.asarray(self.array_center_m, dtype=float).reshape(3)
        sources = np.atleast_2d(np.asarray(self.sources_m, dtype=float))
        if sources.shape[1] != 3 or sources.shape[0] == 0:
            raise ShdConfigError("Las fuentes deben ser una lista de posiciones 3D.")
        object.__setattr__(self, "array_center_m", center)
        object.__setattr__(self, "sources_m", sources)

    @property
    def n_sources(self) -> int:
        return int(self.sources_m.shape[0])

    def validate(self, room: RoomSpec) -> None:
        dims = np.array(room.dimensions_m)
        radius = self.array_radius_m
        if np.any(self.array_center_m - radius <= 0.0) or np.any(self.array_center_m + radius >= dims):
            raise ShdConfigError(f"El array (centro {self.array_center_m.tolist()}, R={radius}) no cabe en la sala.")
        for index, source in enumerate(self.sources_m):
            if np.any(source <= 0.0) or np.any(source >= dims):
                raise ShdConfigError(f"Fuente {index} fuera de la sala: {source.tolist()}")
            if np.linalg.norm(source - self.array_center_m) <= radius:
                raise ShdConfigError(f"Fuente {index} dentro de la esfera del array.")

    def true_directions(self) -> List[Direction]:
        return [Direction.from_vector(source - self.array_center_m) for source in self.sources_m]


@dataclass(frozen=True)
class ImageSource:
    position: np.ndarray
    gain: float
    order: int
    source_index: int = 0


def sabine_beta(room: RoomSpec) -> float:
    """Coeficiente de reflexion uniforme (amplitud) a partir del T60 de Sabine."""
    if room.t60_s == 0.0:
        return 0.0
    absorption = SABINE_CONSTANT * room.volume / (room.surface * room.t60_s)
    if absorption > 1.0:
        raise ShdConfigError(
            f"T60={room.t60_s} s irrealizable en una sala de {room.dimensions_m} m (absorcion {absorption:.3f} > 1)."
        )
    return math.sqrt(1.0 - absorption)


def _axis_images(indices: np.ndarray, length: float, coordinate: float) -> np.ndarray:
    # Indice par: traslacion; impar: reflejo en la pared correspondiente.
    return np.where(indices % 2 == 0, indices * length + coordinate, (indices + 1) * length - coordinate)


def image_sources(
    room: RoomSpec,
    placement: ScenePlacement,
    max_order: Optional[int] = None,
    gain_floor_db: float = -60.0,
    source_index: int = 0,
) -> List[ImageSource]:
    """Imagenes de una fuente ordenadas por orden de reflexion (la directa primero).

    Se conserva una imagen si su amplitud relativa al camino directo,
    beta^orden * d_directo / d, no cae por debajo de gain_floor_db.
    """
    placement.validate(room)
    if not 0 <= source_index < placement.n_sources:
        raise ShdConfigError(f"Indice de fuente {source_index} fuera de rango.")
    if gain_floor_db >= 0.0:
        raise ShdConfigError(f"El suelo de ganancia debe ser negativo (recibido {gain_floor_db} dB).")
    if max_order is not None and max_order < 0:
        raise ShdConfigError(f"max_order debe ser >= 0 (recibido {max_order}).")

    source = placement.sources_m[source_index]
    center = placement.array_center_m
    direct = ImageSource(position=source.copy(), gain=1.0, order=0, source_index=source_index)
    beta = sabine_beta(room)
    if beta == 0.0 or max_order == 0:
        return [direct]

    floor = 10.0 ** (gain_floor_db / 20.0)
    bound = int(math.floor(math.log(floor) / math.log(beta))) if beta < 1.0 else MAX_LATTICE_ORDER
    if max_order is not None:
        bound = min(bound, max_order)
    bound = min(bound, MAX_LATTICE_ORDER)
    if bound == 0:
        return [direct]

    d_direct = float(np.linalg.norm(source - center))
    length, width, height = room.dimensions_m
    positions: List[np.ndarray] = []
    orders: List[np.ndarray] = []
    for a in range(-bound, bound + 1):
        rest = bound - abs(a)
        span = np.arange(-rest, rest + 1)
        b, c = np.meshgrid(span, span, indexing="ij")
        mask = np.abs(b) + np.abs(c) <= rest
        b = b[mask]
        c = c[mask]
        xs = np.full(b.shape, _axis_images(np.array(a), length, source[0]), dtype=float)
        ys = _axis_images(b, width, source[1])
        zs = _axis_images(c, height, source[2])
        pos = np.stack([xs, ys, zs], axis=1)
        order = abs(a) + np.abs(b) + np.abs(c)
        distance = np.linalg.norm(pos - center, axis=1)
        keep = beta ** order * d_direct / distance >= floor * (1.0 - 1e-12)
        positions.append(pos[keep])
        orders.append(order[keep])

    all_positions = np.concatenate(positions)
    all_orders = np.concatenate(orders)
    sequence = np.argsort(all_orders, kind="stable")
    return [
        ImageSource(position=all_positions[i], gain=float(beta ** int(all_orders[i])), order=int(all_orders[i]), source_index=source_index)
        for i in sequence
    ]


def _image_arrays(images: Sequence[ImageSource], center: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not images:
        raise ShdConfigError("Lista de imagenes vacia.")
    positions = np.stack([image.position for image in images])
    gains = np.array([image.gain for image in images], dtype=float)
    offsets = positions - np.asarray(center, dtype=float)[np.newaxis, :]
    distances = np.linalg.norm(offsets, axis=1)
    if np.any(distances == 0.0):
        raise ShdConfigError("Una imagen coincide con el centro del array (d = 0).")
    return offsets / distances[:, np.newaxis], distances, gains


def min_render_order(freqs: np.ndarray, radius_m: float, c: float = 343.0) -> int:
    k_max = 2.0 * np.pi * float(np.max(freqs)) / c
    return int(math.ceil(k_max * radius_m)) + 2


def array_transfer(
    images: Sequence[ImageSource],
    geom: ArrayGeometry,
    freqs: np.ndarray,
    array_center: Sequence[float],
    c: float = 343.0,
    n_render: Optional[int] = None,
) -> np.ndarray:
    """Transferencia F x Q de todas las imagenes a las capsulas.

    H_q(k) = sum_img g e^{-ikd}/(4 pi d) sum_n i^n (2n+1) b_n(kR) P_n(cos gamma_q)
    (teorema de adicion sobre la suma en m).
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    required = min_render_order(freqs, geom.radius_m, c)
    if n_render is None:
        n_render = required
    elif n_render < required:
        raise ShdConfigError(f"N_render={n_render} insuficiente; se requiere >= {required} para esta banda.")

    directions, distances, gains = _image_arrays(images, array_center)
    k = 2.0 * np.pi * freqs / c
    strengths = mode_strength_matrix(n_render, k * geom.radius_m, geom.kind)
    orders = np.arange(n_render + 1)
    modal = i_power(orders)[np.newaxis, :] * (2.0 * orders + 1.0)[np.newaxis, :] * strengths
    capsules = geom.capsule_unit_vectors()

    transfer = np.zeros((freqs.size, geom.n_capsules), dtype=complex)
    for start in range(0, distances.size, IMAGE_CHUNK):
        stop = start + IMAGE_CHUNK
        d = distances[start:stop]
        green = gains[start:stop] * np.exp(-1j * np.outer(k, d)) / (4.0 * np.pi * d)
        cos_gamma = np.clip(directions[start:stop] @ capsules.T, -1.0, 1.0)
        for n in orders:
            legendre = special.eval_legendre(n, cos_gamma)
            partial = green.real @ legendre + 1j * (green.imag @ legendre)
            transfer += modal[:, n, np.newaxis] * partial
    return transfer


def render_array(
    images: Sequence[ImageSource],
    geom: ArrayGeometry,
    freqs: np.ndarray,
    spectrum: np.ndarray,
    array_center: Sequence[float],
    c: float = 343.0,
    n_render: Optional[int] = None,
) -> np.ndarray:
    """Presiones en las capsulas: Q x F para un espectro (F,), Q x F x T para (F, T)."""
    if array_center is None:
        raise ShdConfigError("render_array necesita el centro del array.")
    spectrum = np.asarray(spectrum, dtype=complex)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if spectrum.shape[0] != freqs.size or spectrum.ndim > 2:
        raise ShdConfigError(f"Espectro de forma {spectrum.shape} incompatible con {freqs.size} bins.")
    transfer = array_transfer(images, geom, freqs, array_center, c, n_render).T
    if spectrum.ndim == 1:
        return transfer * spectrum[np.newaxis, :]
    return transfer[:, :, np.newaxis] * spectrum[np.newaxis, :, :]


def render_signals(
    images: Sequence[ImageSource],
    geom: ArrayGeometry,
    samples: np.ndarray,
    sample_rate: float,
    array_center: Sequence[float],
    c: float = 343.0,
    n_render: Optional[int] = None,
    pre_delay: int = PRE_DELAY_SAMPLES,
) -> MultichannelSignal:
    dry = np.asarray(samples, dtype=float).ravel()
    if dry.size == 0:
        raise ShdConfigError("Senal de fuente vacia.")
    _, distances, _ = _image_arrays(images, array_center)
    length = int(math.ceil(float(np.max(distances)) / c * sample_rate)) + 2 * pre_delay
    nfft = sp_fft.next_fast_len(length, real=True)
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    transfer = array_transfer(images, geom, freqs, array_center, c, n_render)
    # Pre-retardo para que la parte acausal de la respuesta no se pliegue al final.
    transfer *= np.exp(-2j * np.pi * freqs * pre_delay / sample_rate)[:, np.newaxis]
    rirs = np.fft.irfft(transfer, n=nfft, axis=0).T
    wet = sps.fftconvolve(dry[np.newaxis, :], rirs, axes=1)
    return MultichannelSignal(samples=wet[:, pre_delay : pre_delay + dry.size], sample_rate=sample_rate)


def room_impulse_response(
    images: Sequence[ImageSource],
    sample_rate: float,
    array_center: Sequence[float],
    c: float = 343.0,
    length_s: Optional[float] = None,
) -> np.ndarray:
    """RIR omnidireccional en el centro del array con retardos redondeados a muestra."""
    _, distances, gains = _image_arrays(images, array_center)
    delays = np.round(distances / c * sample_rate).astype(int)
    n_samples = int(round(length_s * sample_rate)) if length_s is not None else int(delays.max()) + 1
    rir = np.zeros(n_samples)
    inside = delays < n_samples
    np.add.at(rir, delays[inside], gains[inside] / (4.0 * np.pi * distances[inside]))
    return rir


def schroeder_t60(rir: np.ndarray, sample_rate: float, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """T60 extrapolado desde el tramo [start_db, stop_db] de la curva de Schroeder."""
    energy = np.asarray(rir, dtype=float) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    if edc.size == 0 or edc[0] <= 0.0:
        raise ShdNumericError("Respuesta al impulso sin energia.")
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(edc / edc[0])
    fit = np.flatnonzero((edc_db <= start_db) & (edc_db >= stop_db))
    if fit.size < 2 or np.min(edc_db) > stop_db:
        raise ShdNumericError(f"La curva de Schroeder no alcanza {stop_db} dB.")
    times = fit / sample_rate
    slope, _ = np.polyfit(times, edc_db[fit], 1)
    if slope >= 0.0:
        raise ShdNumericError("Pendiente de decaimiento no negativa.")
    return float(-60.0 / slope)


def add_noise_at_snr(signals, snr_db: float, seed: int):
    """Ruido blanco gaussiano i.i.d. por canal con SNR global snr_db.

    Acepta MultichannelSignal o arrays Q x T (reales o complejos) y devuelve
    el mismo tipo. Cada canal usa su propio flujo derivado de la semilla.
    """
    wrapped = isinstance(signals, MultichannelSignal)
    data = signals.samples if wrapped else np.asarray(signals)
    data = np.atleast_2d(data)
    if not np.all(np.isfinite(data)):
        raise ShdNumericError("Senal con valores no finitos.")
    power = float(np.mean(np.abs(data) ** 2))
    if power <= 0.0:
        raise ShdNumericError("Senal de potencia nula; la SNR no esta definida.")
    variance = power / 10.0 ** (snr_db / 10.0)

    streams = np.random.SeedSequence(seed).spawn(data.shape[0])
    noise = np.empty(data.shape, dtype=data.dtype if np.iscomplexobj(data) else float)
    for channel, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        if np.iscomplexobj(data):
            draw = rng.standard_normal((2,) + data.shape[1:])
            noise[channel] = math.sqrt(variance / 2.0) * (draw[0] + 1j * draw[1])
        else:
            noise[channel] = math.sqrt(variance) * rng.standard_normal(data.shape[1:])
    noisy = data + noise
    if wrapped:
        return MultichannelSignal(samples=noisy, sample_rate=signals.sample_rate)
    return noisy


def speech_noise(duration_s: float, sample_rate: float, seed: int = 0) -> np.ndarray:
    """Ruido con espectro y ritmo silabico de voz, con pausas."""
    n_samples = int(round(duration_s * sample_rate))
    if n_samples <= 0:
        raise ShdConfigError(f"Duracion invalida: {duration_s} s")
    rng = np.random.default_rng(seed)
    nyquist = sample_rate / 2.0
    if nyquist <= 200.0:
        raise ShdConfigError(f"Frecuencia de muestreo demasiado baja: {sample_rate} Hz")

    white = rng.standard_normal(n_samples)
    band = sps.butter(4, [100.0, min(3800.0, 0.95 * nyquist)], btype="bandpass", fs=sample_rate, output="sos")
    shaped = sps.sosfilt(band, white)
    tilt_b, tilt_a = sps.butter(1, min(500.0, 0.5 * nyquist), btype="lowpass", fs=sample_rate)
    shaped = sps.lfilter(tilt_b, tilt_a, shaped) + 0.15 * shaped

    t = np.arange(n_samples) / sample_rate
    rate_hz = rng.uniform(3.0, 5.0)
    envelope = 0.25 + 0.75 * 0.5 * (1.0 + np.sin(2.0 * np.pi * rate_hz * t + rng.uniform(0.0, 2.0 * np.pi)))

    gate = np.ones(n_samples)
    cursor = 0
    while cursor < n_samples:
        cursor += int(rng.uniform(0.6, 1.5) * sample_rate)
        pause = int(rng.uniform(0.15, 0.4) * sample_rate)
        gate[cursor : cursor + pause] = 0.0
        cursor += pause
    ramp = max(1, int(0.01 * sample_rate))
    gate = np.convolve(gate, np.hanning(2 * ramp + 1) / np.sum(np.hanning(2 * ramp + 1)), mode="same")

    out = shaped * envelope * gate
    peak = float(np.max(np.abs(out)))
    return out * (0.5 / peak) if peak > 0.0 else out


_SCENE_KEYS = {
    "room_dims_m",
    "t60_s",
    "array_center_m",
    "source_elev_deg",
    "source_azim_deg",
    "source_distance_m",
    "snr_db",
    "seed",
    "noise_seed",
    "signal",
    "duration_s",
    "sample_rate_hz",
    "speed_of_sound_m_s",
    "trim_threshold_db",
}
_SCENE_REQUIRED = ("room_dims_m", "t60_s", "array_center_m", "source_elev_deg", "source_azim_deg", "source_distance_m")


@dataclass(frozen=True)
class SceneSpec:
    room_dims_m: Tuple[float, float, float]
    t60_s: float
    array_center_m: Tuple[float, float, float]
    source_elev_deg: float
    source_azim_deg: float
    source_distance_m: float = 2.0
    snr_db: Optional[float] = None
    seed: int = 0
    noise_seed: Optional[int] = None
    signal: str = SPEECH_NOISE
    duration_s: float = 3.5
    sample_rate_hz: float = 8000.0
    speed_of_sound_m_s: float = 343.0
    trim_threshold_db: Optional[float] = -35.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.source_elev_deg <= 180.0:
            raise ShdConfigError(f"source_elev_deg fuera de [0, 180]: {self.source_elev_deg}")
        if self.source_distance_m <= 0.0:
            raise ShdConfigError(f"source_distance_m debe ser > 0: {self.source_distance_m}")
        if self.duration_s <= 0.0:
            raise ShdConfigError(f"duration_s debe ser > 0: {self.duration_s}")
        if self.sample_rate_hz <= 0.0:
            raise ShdConfigError(f"sample_rate_hz debe ser > 0: {self.sample_rate_hz}")
        for name in ("room_dims_m", "array_center_m"):
            value = tuple(float(item) for item in getattr(self, name))
            if len(value) != 3:
                raise ShdConfigError(f"{name} debe tener 3 componentes.")
            object.__setattr__(self, name, value)

    @property
    def truth(self) -> Direction:
        return Direction.from_degrees(self.source_elev_deg, self.source_azim_deg)

    @property
    def effective_noise_seed(self) -> int:
        if self.noise_seed is not None:
            return int(self.noise_seed)
        return int(np.random.SeedSequence([int(self.seed), 1]).generate_state(1)[0])

    def room(self) -> RoomSpec:
        return RoomSpec(self.room_dims_m, self.t60_s, self.speed_of_sound_m_s)

    def placement(self, array_radius_m: float = 0.0) -> ScenePlacement:
        center = np.array(self.array_center_m)
        source = center + self.source_distance_m * self.truth.unit_vector
        return ScenePlacement(array_center_m=center, sources_m=source[np.newaxis, :], array_radius_m=array_radius_m)

    def to_mapping(self) -> Dict[str, object]:
        data = asdict(self)
        data["room_dims_m"] = list(self.room_dims_m)
        data["array_center_m"] = list(self.array_center_m)
        return data

    @classmethod
    def from_mapping(cls, data: Dict[str, object], source: str = "escena") -> "SceneSpec":
        unknown = sorted(set(data) - _SCENE_KEYS)
        if unknown:
            raise ShdConfigError(f"{source}: claves desconocidas {unknown}")
        missing = [key for key in _SCENE_REQUIRED if key not in data]
        if missing:
            raise ShdConfigError(f"{source}: faltan claves {missing}")
        try:
            kwargs: Dict[str, object] = {
                "room_dims_m": tuple(float(value) for value in data["room_dims_m"]),
                "t60_s": float(data["t60_s"]),
                "array_center_m": tuple(float(value) for value in data["array_center_m"]),
                "source_elev_deg": float(data["source_elev_deg"]),
                "source_azim_deg": float(data["source_azim_deg"]),
                "source_distance_m": float(data["source_distance_m"]),
            }
            for key, cast in (
                ("seed", int),
                ("duration_s", float),
                ("sample_rate_hz", float),
                ("speed_of_sound_m_s", float),
            ):
                if key in data:
                    kwargs[key] = cast(data[key])
            for key, cast in (("snr_db", float), ("noise_seed", int), ("trim_threshold_db", float)):
                if key in data:
                    kwargs[key] = None if data[key] is None else cast(data[key])
            if "signal" in data:
                kwargs["signal"] = str(data["signal"])
        except (TypeError, ValueError) as exc:
            raise ShdConfigError(f"{source}: valor invalido ({exc})") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str) -> "SceneSpec":
        data = load_yaml_mapping(path)
        scene = cls.from_mapping(data, source=path)
        if scene.signal != SPEECH_NOISE and not os.path.isabs(scene.signal):
            base = os.path.dirname(os.path.abspath(path))
            scene = cls(**{**asdict(scene), "signal": os.path.join(base, scene.signal)})
        return scene


def random_scene(
    seed: int,
    t60_s: float,
    snr_db: Optional[float],
    room_dims_m: Sequence[float] = DEFAULT_ROOM_DIMS_M,
    source_distance_m: float = 2.0,
    margin_m: float = 0.5,
    noise_seed: Optional[int] = None,
    duration_s: float = 3.5,
    sample_rate_hz: float = 8000.0,
    speed_of_sound_m_s: float = 343.0,
    trim_threshold_db: Optional[float] = -35.0,
    max_attempts: int = 1000,
) -> SceneSpec:
    """Array y fuente al azar dentro de la sala, a source_distance_m entre si."""
    dims = np.asarray(room_dims_m, dtype=float)
    if np.any(dims <= 2.0 * margin_m):
        raise ShdConfigError(f"Sala {dims.tolist()} demasiado pequena para el margen {margin_m} m.")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        center = rng.uniform(margin_m, dims - margin_m)
        theta = float(np.arccos(1.0 - 2.0 * rng.uniform()))
        phi = float(2.0 * np.pi * rng.uniform())
        direction = Direction(theta, phi)
        source = center + source_distance_m * direction.unit_vector
        if np.all(source >= margin_m) and np.all(source <= dims - margin_m):
            return SceneSpec(
                room_dims_m=tuple(dims.tolist()),
                t60_s=t60_s,
                array_center_m=tuple(center.tolist()),
                source_elev_deg=direction.theta_deg,
                source_azim_deg=direction.phi_deg,
                source_distance_m=source_distance_m,
                snr_db=snr_db,
                seed=int(seed),
                noise_seed=noise_seed,
                duration_s=duration_s,
                sample_rate_hz=sample_rate_hz,
                speed_of_sound_m_s=speed_of_sound_m_s,
                trim_threshold_db=trim_threshold_db,
            )
    raise ShdConfigError(
        f"No se encontro colocacion valida en {max_attempts} intentos (sala {dims.tolist()}, d={source_distance_m} m)."
    )


@dataclass(frozen=True)
class SimulationResult:
    signal: MultichannelSignal
    truth: Direction
    scene: SceneSpec
    n_images: int
    meta: Dict[str, object] = field(default_factory=dict)


def _dry_signal(scene: SceneSpec) -> np.ndarray:
    if scene.signal == SPEECH_NOISE:
        return speech_noise(scene.duration_s, scene.sample_rate_hz, scene.seed)
    recording = read_wav(scene.signal)
    if abs(recording.sample_rate - scene.sample_rate_hz) > 1e-6:
        raise ShdConfigError(
            f"{scene.signal}: muestreo {recording.sample_rate} Hz distinto del de la escena ({scene.sample_rate_hz} Hz)."
        )
    if recording.n_channels > 1:
        warnings.warn(f"{scene.signal}: se usa solo el primer canal como fuente.", RuntimeWarning, stacklevel=3)
    return recording.samples[0]


def simulate_scene(
    scene: SceneSpec,
    geom: ArrayGeometry,
    config: Optional[AppConfig] = None,
) -> SimulationResult:
    config = config or AppConfig()
    dry = _dry_signal(scene)
    if scene.trim_threshold_db is not None:
        dry = trim_silence(dry, scene.sample_rate_hz, scene.trim_threshold_db)
    if dry.size == 0:
        raise ShdConfigError("La senal de fuente queda vacia tras eliminar silencios.")

    room = scene.room()
    placement = scene.placement(geom.radius_m)
    images = image_sources(
        room,
        placement,
        max_order=config.max_image_order,
        gain_floor_db=config.image_gain_floor_db,
    )
    rendered = render_signals(
        images,
        geom,
        dry,
        scene.sample_rate_hz,
        placement.array_center_m,
        c=scene.speed_of_sound_m_s,
    )
    if scene.snr_db is not None:
        rendered = add_noise_at_snr(rendered, scene.snr_db, scene.effective_noise_seed)
    return SimulationResult(
        signal=rendered,
        truth=scene.truth,
        scene=scene,
        n_images=len(images),
        meta={"beta": sabine_beta(room), "dry_samples": int(dry.size)},
    )


def write_truth_sidecar(path: str, result: SimulationResult, block_duration_s: float = 0.3) -> str:
    block_samples = int(round(block_duration_s * result.signal.sample_rate))
    n_blocks = result.signal.n_samples // block_samples if block_samples > 0 else 0
    truth = {"theta_deg": result.truth.theta_deg, "phi_deg": result.truth.phi_deg}
    payload = {
        "scene": result.scene.to_mapping(),
        "truth": truth,
        "sample_rate_hz": result.signal.sample_rate,
        "n_samples": result.signal.n_samples,
        "n_channels": result.signal.n_channels,
        "n_images": result.n_images,
        "block_duration_s": block_duration_s,
        "blocks": [
            {"block_index": index, "time_s": round(index * block_duration_s, 6), **truth}
            for index in range(n_blocks)
        ],
    }
    try:
        with open(path, "w", encoding="utf-8") as file:
            json.dump(payload, file, indent=2, ensure_ascii=False)
    except OSError as exc:
        raise ShdIOError(f"No se pudo escribir {path}: {exc}") from exc
    return path


def read_truth_sidecar(path: str) -> Dict[str, object]:
    try:
        with open(path, "r", encoding="utf-8") as file:
            data = json.load(file)
    except OSError as exc:
        raise ShdIOError(f"No se pudo leer {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ShdIOError(f"{path} no es JSON valido: {exc}") from exc
    if not isinstance(data, dict) or "truth" not in data:
        raise ShdIOError(f"{path} no es un fichero de verdad valido.")
    return data
