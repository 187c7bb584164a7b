import warnings
from dataclasses import dataclass

import numpy as np

from lra_localizer import DoaEstimate, EmptyBlockError, linalg_counters
from sh_basis import MdpDictionary
from sh_encoder import CoefficientMatrix
from shd_config import ShdConfigError, ShdNumericError

METHOD_MUSIC = "shd-music"
DIAGONAL_LOADING = 1e-6


@dataclass(frozen=True)
class Pseudospectrum:
    values: np.ndarray
    block_index: int = 0
    residual: float = 0.0
    confidence: float = 0.0

    def __len__(self) -> int:
        return int(self.values.size)

    def peak(self) -> int:
        # argmax devuelve el primer indice en empates.
        return int(np.argmax(self.values))


def music_pseudospectrum(matrix: CoefficientMatrix, dictionary: MdpDictionary, n_sources: int = 1) -> Pseudospectrum:
    """Pseudoespectro MUSIC en el dominio SH sobre las direcciones del diccionario."""
    entries = matrix.entries
    n_rows, n_columns = entries.shape
    if dictionary.order != matrix.order:
        raise ShdConfigError(
            f"Orden del diccionario ({dictionary.order}) distinto del orden de analisis ({matrix.order})."
        )
    if len(dictionary) == 0:
        raise ShdConfigError("Diccionario de MDPs vacio.")
    if not 1 <= n_sources < n_rows:
        raise ShdConfigError(f"n_sources debe estar en [1, {n_rows - 1}] (recibido {n_sources}).")
    if n_columns == 0 or not np.any(entries):
        raise EmptyBlockError(f"Bloque {matrix.block_index} sin columnas no nulas.")
    if n_columns < n_rows:
        warnings.warn(
            f"Bloque {matrix.block_index}: {n_columns} columnas < C={n_rows}; SCM deficiente en rango, "
            "se aplica carga diagonal.",
            RuntimeWarning,
            stacklevel=2,
        )

    scm = entries @ entries.conj().T / n_columns
    trace = float(np.real(np.trace(scm)))
    loading = DIAGONAL_LOADING * trace / n_rows if trace > 0.0 else DIAGONAL_LOADING
    scm = scm + loading * np.eye(n_rows)

    linalg_counters.add_eig()
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(scm)
    except np.linalg.LinAlgError as exc:
        raise ShdNumericError(f"Autodescomposicion sin convergencia en el bloque {matrix.block_index}: {exc}") from exc

    # eigh ordena de menor a mayor.
    noise = eigenvectors[:, : n_rows - n_sources]
    projections = dictionary.patterns.conj() @ noise
    denominators = np.sum(projections.real**2 + projections.imag**2, axis=1)
    tiny = np.finfo(float).tiny
    values = 1.0 / np.maximum(denominators, tiny)

    positive = np.clip(eigenvalues, 0.0, None)
    total = float(np.sum(positive))
    confidence = float(np.sum(positive[n_rows - n_sources :]) / total) if total > 0.0 else 0.0
    return Pseudospectrum(
        values=values,
        block_index=matrix.block_index,
        residual=float(np.min(denominators)),
        confidence=confidence,
    )


def shd_music(matrix: CoefficientMatrix, dictionary: MdpDictionary, n_sources: int = 1) -> DoaEstimate:
    spectrum = music_pseudospectrum(matrix, dictionary, n_sources)
    best = spectrum.peak()
    return DoaEstimate(
        direction=dictionary.direction(best),
        residual=spectrum.residual,
        block_index=matrix.block_index,
        confidence=spectrum.confidence,
        grid_index=best,
        method=METHOD_MUSIC,
    )
