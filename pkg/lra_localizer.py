import math
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, TypeVar, Union

import numpy as np

from sh_basis import Direction, MdpDictionary, n_coeffs
from sh_encoder import CoefficientMatrix
from shd_config import ShdConfigError, ShdNumericError

ZERO_BLOCK_RTOL = 1e-12
METHOD_LRA = "shd-lra"

T = TypeVar("T")


class EmptyBlockError(ShdNumericError):
    pass


class LinalgCounters:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.svd_calls = 0
        self.eig_calls = 0

    def add_svd(self) -> None:
        with self._lock:
            self.svd_calls += 1

    def add_eig(self) -> None:
        with self._lock:
            self.eig_calls += 1

    def reset(self) -> None:
        with self._lock:
            self.svd_calls = 0
            self.eig_calls = 0

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return {"svd_calls": self.svd_calls, "eig_calls": self.eig_calls}


linalg_counters = LinalgCounters()


@dataclass(frozen=True)
class NormalizedMatrix:
    entries: np.ndarray
    magnitudes: np.ndarray
    order: int
    kept_columns: np.ndarray
    zero_blocks: int = 0
    block_index: int = 0

    @property
    def n_columns(self) -> int:
        return int(self.entries.shape[1])


@dataclass(frozen=True)
class MdpEstimate:
    alpha_hat: np.ndarray
    sigma1: float
    energy_ratio: float
    order: int
    block_index: int = 0


@dataclass(frozen=True)
class DoaEstimate:
    direction: Direction
    residual: float
    block_index: int
    confidence: float
    grid_index: int
    method: str = METHOD_LRA

    def to_row(self, time_s: float) -> Dict[str, object]:
        return {
            "block_index": self.block_index,
            "time_s": f"{time_s:.3f}",
            "theta_deg": f"{self.direction.theta_deg:.6f}",
            "phi_deg": f"{self.direction.phi_deg:.6f}",
            "residual": f"{self.residual:.6e}",
            "confidence": f"{self.confidence:.6f}",
            "method": self.method,
        }


def _order_blocks(order: int) -> List[slice]:
    return [slice(n * n, (n + 1) * (n + 1)) for n in range(order + 1)]


def _target_norms(order: int) -> np.ndarray:
    return np.sqrt(4.0 * np.pi * (2.0 * np.arange(order + 1) + 1.0))


def estimate_magnitude(column: np.ndarray, order: int) -> float:
    values = np.asarray(column, dtype=complex).ravel()
    if values.size != n_coeffs(order):
        raise ShdConfigError(f"Columna de longitud {values.size}; se esperaba {n_coeffs(order)}.")
    targets = _target_norms(order)
    total = sum(np.linalg.norm(values[block]) / targets[n] for n, block in enumerate(_order_blocks(order)))
    # Divisor N+1: numero real de sumandos.
    return float(total / (order + 1))


def normalize(matrix: Union[CoefficientMatrix, np.ndarray], order: Optional[int] = None) -> NormalizedMatrix:
    if isinstance(matrix, CoefficientMatrix):
        entries = matrix.entries
        order = matrix.order
        block_index = matrix.block_index
    else:
        entries = np.asarray(matrix, dtype=complex)
        block_index = 0
        if order is None:
            raise ShdConfigError("normalize necesita el orden N para una matriz sin metadatos.")
    if entries.ndim != 2 or entries.shape[0] != n_coeffs(order):
        raise ShdConfigError(f"Matriz {entries.shape} incompatible con N={order}.")

    column_norms = np.linalg.norm(entries, axis=0)
    kept = np.flatnonzero(column_norms > 0.0)
    kept_entries = entries[:, kept]
    kept_norms = column_norms[kept]

    targets = _target_norms(order)
    blocks = _order_blocks(order)
    block_norms = np.stack([np.linalg.norm(kept_entries[block], axis=0) for block in blocks])
    magnitudes = np.mean(block_norms / targets[:, np.newaxis], axis=0)

    normalized = np.zeros_like(kept_entries)
    zero_blocks = 0
    for n, block in enumerate(blocks):
        live = block_norms[n] >= ZERO_BLOCK_RTOL * kept_norms
        zero_blocks += int(np.count_nonzero(~live))
        scale = np.zeros_like(magnitudes)
        scale[live] = magnitudes[live] * targets[n] / block_norms[n, live]
        normalized[block] = kept_entries[block] * scale[np.newaxis, :]

    return NormalizedMatrix(
        entries=normalized,
        magnitudes=magnitudes,
        order=order,
        kept_columns=kept,
        zero_blocks=zero_blocks,
        block_index=block_index,
    )


def _svd(entries: np.ndarray, block_index: int):
    linalg_counters.add_svd()
    try:
        return np.linalg.svd(entries, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ShdNumericError(f"SVD sin convergencia en el bloque {block_index}: {exc}") from exc


def rank1_extract(normalized: NormalizedMatrix, order: Optional[int] = None) -> MdpEstimate:
    order = normalized.order if order is None else order
    if normalized.n_columns == 0:
        raise EmptyBlockError(f"Bloque {normalized.block_index} sin columnas no nulas.")
    u, s, _ = _svd(normalized.entries, normalized.block_index)
    energy = float(np.sum(s**2))
    energy_ratio = float(s[0] ** 2 / energy) if energy > 0.0 else 0.0
    alpha_hat = math.sqrt(4.0 * math.pi) * (order + 1) * u[:, 0]
    return MdpEstimate(
        alpha_hat=alpha_hat,
        sigma1=float(s[0]),
        energy_ratio=energy_ratio,
        order=order,
        block_index=normalized.block_index,
    )


def rank1_approximation(entries: np.ndarray) -> np.ndarray:
    u, s, vh = _svd(np.asarray(entries, dtype=complex), 0)
    return s[0] * np.outer(u[:, 0], vh[0, :])


def match_doa(estimate: MdpEstimate, dictionary: MdpDictionary) -> DoaEstimate:
    if len(dictionary) == 0:
        raise ShdConfigError("Diccionario de MDPs vacio.")
    if dictionary.order != estimate.order:
        raise ShdConfigError(
            f"Orden del diccionario ({dictionary.order}) distinto del de la estimacion ({estimate.order})."
        )
    alpha = np.asarray(estimate.alpha_hat, dtype=complex)
    # Fase global: el elemento n=0 ideal es real positivo.
    reference = alpha[0]
    if abs(reference) > 0.0:
        alpha = alpha * (np.conj(reference) / abs(reference))
    diff = dictionary.patterns - alpha[np.newaxis, :]
    distances = np.sum(diff.real**2 + diff.imag**2, axis=1)
    best = int(np.argmin(distances))
    return DoaEstimate(
        direction=dictionary.direction(best),
        residual=float(distances[best]),
        block_index=estimate.block_index,
        confidence=estimate.energy_ratio,
        grid_index=best,
    )


def localize_block(matrix: CoefficientMatrix, dictionary: MdpDictionary) -> DoaEstimate:
    if dictionary.order != matrix.order:
        raise ShdConfigError(
            f"Orden del diccionario ({dictionary.order}) distinto del orden de analisis ({matrix.order})."
        )
    normalized = normalize(matrix)
    return match_doa(rank1_extract(normalized), dictionary)


def map_blocks(
    func: Callable[[CoefficientMatrix], T],
    matrices: Sequence[CoefficientMatrix],
    jobs: int = 1,
) -> List[Optional[T]]:
    """Aplica func por bloque; orden de salida = orden de entrada. Bloques vacios -> None."""
    results: List[Optional[T]] = [None] * len(matrices)
    if jobs <= 1 or len(matrices) <= 1:
        for position, matrix in enumerate(matrices):
            try:
                results[position] = func(matrix)
            except EmptyBlockError:
                results[position] = None
        return results

    with ThreadPoolExecutor(max_workers=min(jobs, len(matrices))) as executor:
        futures = {executor.submit(func, matrix): position for position, matrix in enumerate(matrices)}
        for future in as_completed(futures):
            position = futures[future]
            try:
                results[position] = future.result()
            except EmptyBlockError:
                results[position] = None
    return results


def localize_blocks(
    matrices: Sequence[CoefficientMatrix],
    dictionary: MdpDictionary,
    jobs: int = 1,
) -> List[Optional[DoaEstimate]]:
    return map_blocks(lambda matrix: localize_block(matrix, dictionary), matrices, jobs)
