from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

from lra_localizer import METHOD_LRA, DoaEstimate, localize_block, map_blocks
from music_baseline import METHOD_MUSIC, shd_music
from sh_basis import MdpDictionary
from sh_encoder import ArrayGeometry, CoefficientMatrix, encode_block, encode_pinv
from shd_config import AppConfig, ShdConfigError
from stft_analysis import MultichannelSignal, block_frame_ranges, select_band, stft_forward

METHODS = (METHOD_LRA, METHOD_MUSIC)
ENCODERS = ("quadrature", "pinv")


@dataclass(frozen=True)
class BlockResult:
    block_index: int
    time_s: float
    estimate: DoaEstimate

    @property
    def method(self) -> str:
        return self.estimate.method

    def to_row(self) -> Dict[str, object]:
        return self.estimate.to_row(self.time_s)


def parse_methods(methods: Sequence[str]) -> List[str]:
    parsed: List[str] = []
    for raw in methods:
        for item in str(raw).split(","):
            name = item.strip().lower()
            if not name:
                continue
            if name not in METHODS:
                raise ShdConfigError(f"Metodo desconocido: {name!r} (disponibles: {', '.join(METHODS)}).")
            if name not in parsed:
                parsed.append(name)
    if not parsed:
        raise ShdConfigError("No se indico ningun metodo.")
    return parsed


def analysis_blocks(
    signal: MultichannelSignal,
    geom: ArrayGeometry,
    config: Optional[AppConfig] = None,
    condon_shortley: bool = False,
    encoder: str = "quadrature",
) -> List[CoefficientMatrix]:
    """STFT, banda y codificacion SH de cada bloque de evaluacion."""
    config = config or AppConfig()
    if signal.n_channels != geom.n_capsules:
        raise ShdConfigError(
            f"La senal tiene {signal.n_channels} canales y la geometria {geom.n_capsules} capsulas."
        )
    if encoder not in ENCODERS:
        raise ShdConfigError(f"Codificador desconocido: {encoder!r} (usa {' | '.join(ENCODERS)}).")
    encode = encode_block if encoder == "quadrature" else encode_pinv

    spec = stft_forward(signal, config.window_size, config.overlap, config.fft_size)
    band = select_band(spec, config.band_lo_hz, config.band_hi_hz)
    matrices: List[CoefficientMatrix] = []
    for block in block_frame_ranges(band, config.block_duration_s):
        matrices.append(
            encode(
                band.frames(block.start_frame, block.stop_frame),
                geom,
                config.sh_order,
                c=config.speed_of_sound_m_s,
                max_eq_gain_db=config.max_eq_gain_db,
                condon_shortley=condon_shortley,
                block_index=block.index,
                time_s=block.time_s,
            )
        )
    return matrices


def _method_function(method: str, dictionary: MdpDictionary, n_sources: int) -> Callable[[CoefficientMatrix], DoaEstimate]:
    if method == METHOD_LRA:
        return lambda matrix: localize_block(matrix, dictionary)
    return lambda matrix: shd_music(matrix, dictionary, n_sources)


def localize_signal(
    signal: MultichannelSignal,
    geom: ArrayGeometry,
    dictionary: MdpDictionary,
    config: Optional[AppConfig] = None,
    methods: Sequence[str] = (METHOD_LRA,),
    jobs: Optional[int] = None,
    encoder: str = "quadrature",
    n_sources: int = 1,
) -> List[BlockResult]:
    """Flujo de DOAs por bloque, ordenado por (bloque, metodo). Bloques vacios se omiten."""
    config = config or AppConfig()
    selected = parse_methods(methods)
    if dictionary.order != config.sh_order:
        raise ShdConfigError(
            f"Orden del diccionario ({dictionary.order}) distinto del orden de analisis ({config.sh_order})."
        )
    jobs = config.jobs if jobs is None else jobs
    matrices = analysis_blocks(signal, geom, config, dictionary.condon_shortley, encoder)

    results: List[BlockResult] = []
    for method in selected:
        estimates = map_blocks(_method_function(method, dictionary, n_sources), matrices, jobs)
        for matrix, estimate in zip(matrices, estimates):
            if estimate is not None:
                results.append(BlockResult(block_index=matrix.block_index, time_s=matrix.time_s, estimate=estimate))
    position = {method: index for index, method in enumerate(selected)}
    results.sort(key=lambda item: (item.block_index, position[item.method]))
    return results
