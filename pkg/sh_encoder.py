from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from sh_basis import (
    FOUR_PI,
    Direction,
    SphereKind,
    mode_strength_matrix,
    n_coeffs,
    order_of_flat,
    sh_matrix,
)
from shd_config import MODULE_DIR, ShdConfigError, ShdNumericError, load_yaml_mapping
from stft_analysis import Spectrogram

DEFAULT_GEOMETRY_FILE = str(MODULE_DIR / "array_32ch.yaml")


@dataclass(frozen=True)
class ArrayGeometry:
    theta: np.ndarray
    phi: np.ndarray
    radius_m: float
    kind: SphereKind
    weights: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if theta.size == 0:
            raise ShdConfigError("La geometria no tiene capsulas.")
        if theta.shape != phi.shape or theta.shape != weights.shape:
            raise ShdConfigError("theta, phi y pesos deben tener la misma longitud.")
        if not self.radius_m or self.radius_m <= 0.0:
            raise ShdConfigError(f"Radio del array invalido: {self.radius_m}")
        if np.any(theta < 0.0) or np.any(theta > np.pi + 1e-12):
            raise ShdConfigError("Elevaciones de capsula fuera de [0, 180] grados.")
        if not np.all(np.isfinite(weights)):
            raise ShdConfigError("Pesos de cuadratura no finitos.")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "radius_m", float(self.radius_m))
        object.__setattr__(self, "kind", SphereKind.parse(self.kind))

    @property
    def n_capsules(self) -> int:
        return int(self.theta.size)

    def capsule_directions(self) -> List[Direction]:
        return [Direction(float(t), float(p)) for t, p in zip(self.theta, self.phi)]

    def capsule_unit_vectors(self) -> np.ndarray:
        sin_theta = np.sin(self.theta)
        return np.stack([sin_theta * np.cos(self.phi), sin_theta * np.sin(self.phi), np.cos(self.theta)], axis=1)

    def capsule_positions(self, center: Sequence[float]) -> np.ndarray:
        return np.asarray(center, dtype=float)[np.newaxis, :] + self.radius_m * self.capsule_unit_vectors()

    def check_quadrature(self, tolerance: float = 1e-6) -> None:
        total = float(np.sum(self.weights))
        if abs(total - FOUR_PI) > tolerance:
            raise ShdConfigError(f"Los pesos de cuadratura suman {total:.9f}, se esperaba 4*pi.")

    def check_order(self, order: int) -> None:
        if self.n_capsules < n_coeffs(order):
            raise ShdConfigError(
                f"Codificacion infradeterminada: Q={self.n_capsules} capsulas < C={n_coeffs(order)} coeficientes (N={order})."
            )

    @classmethod
    def from_grid(
        cls,
        theta: np.ndarray,
        phi: np.ndarray,
        radius_m: float,
        kind: object = SphereKind.RIGID,
        weights: Optional[np.ndarray] = None,
        name: str = "",
    ) -> "ArrayGeometry":
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if weights is None:
            weights = np.full(theta.size, FOUR_PI / max(theta.size, 1))
        return cls(theta=theta, phi=phi, radius_m=radius_m, kind=SphereKind.parse(kind), weights=weights, name=name)

    @classmethod
    def from_mapping(cls, data: Dict[str, object], source: str = "geometria") -> "ArrayGeometry":
        capsules = data.get("capsules")
        if not isinstance(capsules, list) or not capsules:
            raise ShdConfigError(f"{source}: falta la lista 'capsules'.")
        rows: List[List[float]] = []
        for position, row in enumerate(capsules):
            if not isinstance(row, (list, tuple)) or len(row) not in (2, 3):
                raise ShdConfigError(f"{source}: capsula {position} debe ser [theta_deg, phi_deg, peso?].")
            try:
                rows.append([float(value) for value in row])
            except (TypeError, ValueError) as exc:
                raise ShdConfigError(f"{source}: capsula {position} con valores no numericos.") from exc

        if "radius_m" not in data:
            raise ShdConfigError(f"{source}: falta 'radius_m'.")
        try:
            radius_m = float(data["radius_m"])
        except (TypeError, ValueError) as exc:
            raise ShdConfigError(f"{source}: 'radius_m' no numerico.") from exc

        has_weights = [len(row) == 3 for row in rows]
        if any(has_weights) and not all(has_weights):
            raise ShdConfigError(f"{source}: o todas las capsulas llevan peso o ninguna.")
        theta = np.deg2rad([row[0] for row in rows])
        phi = np.deg2rad([row[1] for row in rows])
        weights = np.array([row[2] for row in rows]) if all(has_weights) else None
        return cls.from_grid(
            theta,
            phi,
            radius_m,
            kind=data.get("kind", "rigid"),
            weights=weights,
            name=str(data.get("name", "") or ""),
        )

    @classmethod
    def load(cls, path: str) -> "ArrayGeometry":
        return cls.from_mapping(load_yaml_mapping(path), source=path)

    @classmethod
    def default(cls) -> "ArrayGeometry":
        return cls.load(DEFAULT_GEOMETRY_FILE)


@dataclass(frozen=True)
class CoefficientMatrix:
    entries: np.ndarray
    order: int
    wavenumbers: np.ndarray
    block_index: int = 0
    time_s: float = 0.0
    n_frames: int = 1
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != n_coeffs(self.order):
            raise ShdConfigError(
                f"Matriz de coeficientes con forma {entries.shape}; se esperaban {n_coeffs(self.order)} filas."
            )
        object.__setattr__(self, "entries", entries)

    @property
    def n_columns(self) -> int:
        return int(self.entries.shape[1])


def _soft_limit(gains: np.ndarray, max_gain_db: Optional[float]) -> np.ndarray:
    if max_gain_db is None:
        return gains
    limit = 10.0 ** (max_gain_db / 20.0)
    magnitude = np.abs(gains)
    limited = np.full_like(magnitude, limit)
    finite = np.isfinite(magnitude) & (magnitude > 0.0)
    limited[finite] = (2.0 * limit / np.pi) * np.arctan(np.pi * magnitude[finite] / (2.0 * limit))
    out = np.empty_like(gains)
    out[finite] = gains[finite] / magnitude[finite] * limited[finite]
    out[~finite] = limited[~finite]
    return out


def equalization_gains(
    freqs: np.ndarray,
    geom: ArrayGeometry,
    order: int,
    c: float = 343.0,
    max_eq_gain_db: Optional[float] = 40.0,
) -> np.ndarray:
    """Filtros radiales 1/b_n(kR) por bin, F x (N+1), con limitacion suave de fase constante."""
    xi = 2.0 * np.pi * np.asarray(freqs, dtype=float) * geom.radius_m / c
    if geom.kind is SphereKind.RIGID and np.any(xi == 0.0):
        raise ShdConfigError("Bin de frecuencia 0 en la banda con array rigido; ajusta la banda.")
    strengths = mode_strength_matrix(order, xi, geom.kind)
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = np.where(strengths != 0.0, 1.0 / strengths, np.inf)
    if max_eq_gain_db is None and not np.all(np.isfinite(gains)):
        raise ShdNumericError("Mode strength nula sin limite de ecualizacion; define max_eq_gain_db.")
    return _soft_limit(gains, max_eq_gain_db)


def _assemble(
    pressure_nm: np.ndarray,
    spec: Spectrogram,
    geom: ArrayGeometry,
    order: int,
    c: float,
    max_eq_gain_db: Optional[float],
    block_index: int,
    time_s: float,
) -> CoefficientMatrix:
    gains = equalization_gains(spec.freqs, geom, order, c, max_eq_gain_db)[:, order_of_flat(order)]
    alpha = pressure_nm * gains.T[:, :, np.newaxis]
    n_rows, n_bins, n_frames = alpha.shape
    # Columnas agrupadas por trama: [trama0 bins..., trama1 bins..., ...].
    entries = alpha.transpose(0, 2, 1).reshape(n_rows, n_frames * n_bins)
    wavenumbers = np.tile(2.0 * np.pi * spec.freqs / c, n_frames)
    return CoefficientMatrix(
        entries=entries,
        order=order,
        wavenumbers=wavenumbers,
        block_index=block_index,
        time_s=time_s,
        n_frames=n_frames,
    )


def _check_channels(spec: Spectrogram, geom: ArrayGeometry) -> None:
    if spec.bins.shape[0] != geom.n_capsules:
        raise ShdConfigError(
            f"La senal tiene {spec.bins.shape[0]} canales y la geometria {geom.n_capsules} capsulas."
        )


def encode_block(
    spec: Spectrogram,
    geom: ArrayGeometry,
    order: int,
    c: float = 343.0,
    max_eq_gain_db: Optional[float] = 40.0,
    condon_shortley: bool = False,
    block_index: int = 0,
    time_s: float = 0.0,
) -> CoefficientMatrix:
    _check_channels(spec, geom)
    geom.check_order(order)
    geom.check_quadrature()
    sh = sh_matrix(order, geom.theta, geom.phi, condon_shortley)
    projector = geom.weights[:, np.newaxis] * np.conj(sh)
    pressure_nm = np.einsum("qc,qft->cft", projector, spec.bins)
    return _assemble(pressure_nm, spec, geom, order, c, max_eq_gain_db, block_index, time_s)


def encode_pinv(
    spec: Spectrogram,
    geom: ArrayGeometry,
    order: int,
    c: float = 343.0,
    max_eq_gain_db: Optional[float] = 40.0,
    condon_shortley: bool = False,
    block_index: int = 0,
    time_s: float = 0.0,
    regularization: float = 1e-12,
    max_condition: float = 1e8,
) -> CoefficientMatrix:
    _check_channels(spec, geom)
    geom.check_order(order)
    sh = sh_matrix(order, geom.theta, geom.phi, condon_shortley)
    u, s, vh = np.linalg.svd(sh, full_matrices=False)
    if s[-1] <= 0.0 or s[0] / s[-1] > max_condition:
        condition = np.inf if s[-1] <= 0.0 else s[0] / s[-1]
        raise ShdNumericError(f"Matriz SH mal condicionada (cond={condition:.3g}) para N={order}.")
    # Tikhonov: V diag(s / (s^2 + lambda)) U^H
    damping = regularization * s[0] ** 2
    projector = (vh.conj().T * (s / (s**2 + damping))) @ u.conj().T
    pressure_nm = np.einsum("cq,qft->cft", projector, spec.bins)
    return _assemble(pressure_nm, spec, geom, order, c, max_eq_gain_db, block_index, time_s)
