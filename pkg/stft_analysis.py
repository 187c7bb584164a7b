from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import signal as sps

from shd_config import ShdConfigError, ShdIOError

try:
    import soundfile as sf
except ModuleNotFoundError:  # pragma: no cover - depende del entorno
    sf = None


@dataclass(frozen=True)
class MultichannelSignal:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2:
            raise ShdConfigError("La senal multicanal debe ser una matriz Q x T.")
        if not self.sample_rate or self.sample_rate <= 0:
            raise ShdConfigError(f"Frecuencia de muestreo invalida: {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @property
    def n_channels(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    bins: np.ndarray
    freqs: np.ndarray
    hop: int
    window_size: int
    fft_size: int
    sample_rate: float
    n_samples: int
    frame_offset: int = 0
    window: str = "hamming"

    @property
    def n_frames(self) -> int:
        return int(self.bins.shape[2])

    @property
    def frame_times(self) -> np.ndarray:
        return (self.frame_offset + np.arange(self.n_frames)) * self.hop / self.sample_rate

    def frames(self, start: int, stop: int) -> "Spectrogram":
        return Spectrogram(
            bins=self.bins[:, :, start:stop],
            freqs=self.freqs,
            hop=self.hop,
            window_size=self.window_size,
            fft_size=self.fft_size,
            sample_rate=self.sample_rate,
            n_samples=self.n_samples,
            frame_offset=self.frame_offset + start,
            window=self.window,
        )


@dataclass(frozen=True)
class BlockRange:
    index: int
    start_frame: int
    stop_frame: int
    time_s: float


def stft_forward(
    sig: MultichannelSignal,
    window_size: int = 512,
    overlap: float = 0.5,
    fft_size: int = 512,
) -> Spectrogram:
    if window_size < 1 or window_size > fft_size:
        raise ShdConfigError(f"Se requiere 1 <= window_size <= fft_size (window={window_size}, fft={fft_size}).")
    if not 0.0 <= overlap < 1.0:
        raise ShdConfigError(f"Solapamiento fuera de [0, 1): {overlap}")
    hop = int(round(window_size * (1.0 - overlap)))
    if hop < 1:
        raise ShdConfigError("El salto entre tramas resulta nulo.")
    if sig.n_samples < window_size:
        raise ShdConfigError(
            f"Senal demasiado corta ({sig.n_samples} muestras) para una ventana de {window_size}."
        )

    # Hamming periodica, tramas alineadas a la izquierda desde la muestra 0.
    window = sps.get_window("hamming", window_size, fftbins=True)
    frames = np.lib.stride_tricks.sliding_window_view(sig.samples, window_size, axis=1)[:, ::hop, :]
    spectra = np.fft.rfft(frames * window, n=fft_size, axis=-1)
    freqs = np.arange(fft_size // 2 + 1) * sig.sample_rate / fft_size
    return Spectrogram(
        bins=np.transpose(spectra, (0, 2, 1)),
        freqs=freqs,
        hop=hop,
        window_size=window_size,
        fft_size=fft_size,
        sample_rate=sig.sample_rate,
        n_samples=sig.n_samples,
    )


def select_band(spec: Spectrogram, f_lo: float, f_hi: float) -> Spectrogram:
    nyquist = spec.sample_rate / 2.0
    if not f_lo < f_hi:
        raise ShdConfigError(f"Banda invertida o vacia: [{f_lo}, {f_hi}] Hz")
    if f_lo < 0.0 or f_hi > nyquist + 1e-9:
        raise ShdConfigError(f"Banda [{f_lo}, {f_hi}] Hz fuera de [0, {nyquist}] Hz")
    tol = 1e-9 * max(1.0, nyquist)
    mask = (spec.freqs >= f_lo - tol) & (spec.freqs <= f_hi + tol)
    if not np.any(mask):
        raise ShdConfigError(f"Ningun bin en la banda [{f_lo}, {f_hi}] Hz")
    return Spectrogram(
        bins=spec.bins[:, mask, :],
        freqs=spec.freqs[mask],
        hop=spec.hop,
        window_size=spec.window_size,
        fft_size=spec.fft_size,
        sample_rate=spec.sample_rate,
        n_samples=spec.n_samples,
        frame_offset=spec.frame_offset,
        window=spec.window,
    )


def block_frame_ranges(spec: Spectrogram, block_duration_s: float) -> List[BlockRange]:
    """Bloques de evaluacion con las tramas completamente contenidas en cada uno."""
    block_samples = int(round(block_duration_s * spec.sample_rate))
    if block_samples < spec.window_size:
        raise ShdConfigError(
            f"Bloque de {block_duration_s} s mas corto que la ventana de {spec.window_size} muestras."
        )
    ranges: List[BlockRange] = []
    for index in range(spec.n_samples // block_samples):
        begin = index * block_samples
        end = begin + block_samples
        start = -(-begin // spec.hop)
        stop = min((end - spec.window_size) // spec.hop + 1, spec.n_frames)
        if stop <= start:
            continue
        ranges.append(BlockRange(index=index, start_frame=start, stop_frame=stop, time_s=begin / spec.sample_rate))
    return ranges


def trim_silence(samples: np.ndarray, sample_rate: float, threshold_db: float = -35.0, frame_s: float = 0.02) -> np.ndarray:
    """Elimina tramos cuya energia queda threshold_db por debajo del tramo mas fuerte."""
    data = np.asarray(samples, dtype=float)
    frame = max(1, int(round(frame_s * sample_rate)))
    n_frames = data.shape[-1] // frame
    if n_frames == 0:
        return data
    framed = data[..., : n_frames * frame].reshape(data.shape[:-1] + (n_frames, frame))
    energy = np.sum(framed**2, axis=-1)
    if energy.ndim > 1:
        energy = np.sum(energy, axis=tuple(range(energy.ndim - 1)))
    peak = float(np.max(energy))
    if peak <= 0.0:
        return data[..., :0]
    keep = energy >= peak * 10.0 ** (threshold_db / 10.0)
    kept = framed[..., keep, :]
    return kept.reshape(data.shape[:-1] + (-1,))


def read_wav(path: str) -> MultichannelSignal:
    if sf is None:
        raise ShdIOError("soundfile no instalado. Usa: pip install soundfile")
    try:
        data, sample_rate = sf.read(path, dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as exc:
        raise ShdIOError(f"No se pudo leer WAV {path}: {exc}") from exc
    if data.shape[0] == 0:
        raise ShdIOError(f"El fichero {path} no contiene muestras.")
    return MultichannelSignal(samples=data.T, sample_rate=float(sample_rate))


def write_wav(path: str, sig: MultichannelSignal) -> str:
    if sf is None:
        raise ShdIOError("soundfile no instalado. Usa: pip install soundfile")
    try:
        sf.write(path, sig.samples.T.astype(np.float32), int(round(sig.sample_rate)), subtype="FLOAT")
    except (RuntimeError, OSError) as exc:
        raise ShdIOError(f"No se pudo escribir WAV {path}: {exc}") from exc
    return path
