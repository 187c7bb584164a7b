"""Armonicos esfericos complejos, funciones de Bessel esfericas, mode strength
y diccionarios de patrones direccionales modales (MDP).

Convenciones:
- Legendre asociado SIN fase de Condon-Shortley (configurable).
- Indice plano ACN: p = n^2 + n + m.
- theta = elevacion medida desde +z (colatitud), phi = azimut.
"""

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Tuple, Union

import numpy as np
from scipy import special

from shd_config import ShdConfigError, ShdIOError, ShdNumericError

FOUR_PI = 4.0 * np.pi
MAX_SH_ORDER = 8
DICTIONARY_VERSION = 1
_I_POWERS = np.array([1.0 + 0.0j, 0.0 + 1.0j, -1.0 + 0.0j, 0.0 - 1.0j])

ArrayLike = Union[float, np.ndarray]


class SphereKind(str, Enum):
    OPEN = "open"
    RIGID = "rigid"

    @classmethod
    def parse(cls, value: object) -> "SphereKind":
        if isinstance(value, SphereKind):
            return value
        normalized = str(value or "").strip().lower()
        for kind in cls:
            if kind.value == normalized:
                return kind
        raise ShdConfigError(f"Tipo de esfera desconocido: {value!r} (usa open|rigid).")


@dataclass(frozen=True)
class OrderIndex:
    n: int
    m: int

    def __post_init__(self) -> None:
        if self.n < 0 or abs(self.m) > self.n:
            raise ShdConfigError(f"Indice SH invalido: n={self.n}, m={self.m}")

    @property
    def flat(self) -> int:
        return self.n * self.n + self.n + self.m

    @classmethod
    def from_flat(cls, p: int) -> "OrderIndex":
        if p < 0:
            raise ShdConfigError(f"Indice plano negativo: {p}")
        n = math.isqrt(p)
        return cls(n, p - n * n - n)


def n_coeffs(order: int) -> int:
    return (order + 1) ** 2


def order_of_flat(order: int) -> np.ndarray:
    orders = np.arange(order + 1)
    return np.repeat(orders, 2 * orders + 1)


def i_power(n: Union[int, np.ndarray]) -> Union[complex, np.ndarray]:
    """i**n exacto (sin redondeo de la potencia compleja)."""
    values = _I_POWERS[np.asarray(n) % 4]
    return complex(values) if np.ndim(values) == 0 else values


@dataclass(frozen=True)
class Direction:
    theta: float
    phi: float

    def __post_init__(self) -> None:
        theta = float(self.theta)
        if not np.isfinite(theta) or theta < -1e-12 or theta > np.pi + 1e-12:
            raise ShdConfigError(f"Elevacion fuera de [0, pi]: {theta}")
        object.__setattr__(self, "theta", min(max(theta, 0.0), np.pi))
        phi = float(self.phi)
        if not np.isfinite(phi):
            raise ShdConfigError(f"Azimut no finito: {phi}")
        phi = phi % (2.0 * np.pi)
        if phi >= 2.0 * np.pi:
            phi = 0.0
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_degrees(cls, theta_deg: float, phi_deg: float) -> "Direction":
        return cls(np.deg2rad(theta_deg), np.deg2rad(phi_deg))

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "Direction":
        v = np.asarray(vector, dtype=float).reshape(3)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ShdConfigError("No se puede obtener direccion de un vector nulo.")
        v = v / norm
        theta = float(np.arccos(np.clip(v[2], -1.0, 1.0)))
        phi = float(np.arctan2(v[1], v[0]))
        return cls(theta, phi)

    @property
    def unit_vector(self) -> np.ndarray:
        sin_theta = np.sin(self.theta)
        return np.array(
            [sin_theta * np.cos(self.phi), sin_theta * np.sin(self.phi), np.cos(self.theta)]
        )

    @property
    def theta_deg(self) -> float:
        return float(np.rad2deg(self.theta))

    @property
    def phi_deg(self) -> float:
        return float(np.rad2deg(self.phi))


def _as_output(values: np.ndarray) -> ArrayLike:
    return values.item() if values.ndim == 0 else values


def assoc_legendre(n: int, m: int, x: ArrayLike, condon_shortley: bool = False) -> ArrayLike:
    if m < 0 or m > n:
        raise ShdConfigError(f"Legendre asociado requiere 0 <= m <= n (n={n}, m={m}).")
    x_arr = np.asarray(x, dtype=float)
    if np.any(np.abs(x_arr) > 1.0 + 1e-12):
        raise ShdNumericError(f"Legendre asociado fuera de dominio: |x| > 1 (max={np.max(np.abs(x_arr))}).")
    x_arr = np.clip(x_arr, -1.0, 1.0)
    # scipy incluye la fase (-1)^m.
    values = special.lpmv(m, n, x_arr)
    if not condon_shortley and m % 2 == 1:
        values = -values
    return _as_output(np.asarray(values, dtype=float))


def _sh_norm(n: int, m_abs: int) -> float:
    return math.sqrt((2 * n + 1) / FOUR_PI * math.factorial(n - m_abs) / math.factorial(n + m_abs))


def sph_harm(idx: OrderIndex, direction: Direction, condon_shortley: bool = False) -> complex:
    m_abs = abs(idx.m)
    legendre = assoc_legendre(idx.n, m_abs, math.cos(direction.theta), condon_shortley)
    value = _sh_norm(idx.n, m_abs) * legendre * complex(math.cos(m_abs * direction.phi), math.sin(m_abs * direction.phi))
    return value.conjugate() if idx.m < 0 else value


def sh_matrix(order: int, theta: ArrayLike, phi: ArrayLike, condon_shortley: bool = False) -> np.ndarray:
    """Matriz Q x (N+1)^2 con Y_nm(theta_q, phi_q) en orden ACN."""
    theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
    phi_arr = np.atleast_1d(np.asarray(phi, dtype=float))
    if theta_arr.shape != phi_arr.shape:
        raise ShdConfigError("theta y phi deben tener la misma forma.")
    cos_theta = np.cos(theta_arr)
    out = np.zeros((theta_arr.size, n_coeffs(order)), dtype=complex)
    for n in range(order + 1):
        for m in range(n + 1):
            base = _sh_norm(n, m) * assoc_legendre(n, m, cos_theta, condon_shortley)
            column = base * (np.cos(m * phi_arr) + 1j * np.sin(m * phi_arr))
            out[:, n * n + n + m] = column
            if m > 0:
                out[:, n * n + n - m] = np.conj(column)
    return out


def spherical_bessel_j(n: int, xi: ArrayLike, derivative: bool = False) -> ArrayLike:
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0.0):
        raise ShdConfigError("Bessel esferica requiere argumento >= 0.")
    return _as_output(np.asarray(special.spherical_jn(n, xi_arr, derivative=derivative), dtype=float))


def spherical_hankel_h1(n: int, xi: ArrayLike, derivative: bool = False) -> ArrayLike:
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0.0):
        raise ShdConfigError("Hankel esferica requiere argumento > 0.")
    if np.any(xi_arr == 0.0):
        raise ShdNumericError("Hankel esferica singular en xi = 0.")
    values = special.spherical_jn(n, xi_arr, derivative=derivative) + 1j * special.spherical_yn(
        n, xi_arr, derivative=derivative
    )
    return _as_output(np.asarray(values, dtype=complex))


def mode_strength(n: int, xi: ArrayLike, kind: Union[SphereKind, str]) -> ArrayLike:
    sphere = SphereKind.parse(kind)
    xi_arr = np.asarray(xi, dtype=float)
    if sphere is SphereKind.OPEN:
        return _as_output(np.asarray(spherical_bessel_j(n, xi_arr), dtype=complex))

    if np.any(xi_arr == 0.0):
        raise ShdNumericError("Mode strength de esfera rigida singular en kR = 0.")
    jn = np.asarray(spherical_bessel_j(n, xi_arr))
    jn_d = np.asarray(spherical_bessel_j(n, xi_arr, derivative=True))
    hn = np.asarray(spherical_hankel_h1(n, xi_arr))
    hn_d = np.asarray(spherical_hankel_h1(n, xi_arr, derivative=True))
    return _as_output(jn - (jn_d / hn_d) * hn)


def mode_strength_matrix(order: int, xi: np.ndarray, kind: Union[SphereKind, str]) -> np.ndarray:
    """F x (N+1) con b_n(xi_f); en xi = 0 usa el limite j_n(0) en ambos tipos."""
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.zeros((xi_arr.size, order + 1), dtype=complex)
    positive = xi_arr > 0.0
    for n in range(order + 1):
        if np.any(positive):
            out[positive, n] = mode_strength(n, xi_arr[positive], kind)
        out[~positive, n] = 1.0 if n == 0 else 0.0
    return out


@dataclass(frozen=True)
class ModalDirectionalPattern:
    coeffs: np.ndarray
    order: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def block(self, n: int) -> np.ndarray:
        return self.coeffs[n * n : (n + 1) * (n + 1)]


def mdp_matrix(order: int, theta: ArrayLike, phi: ArrayLike, condon_shortley: bool = False) -> np.ndarray:
    """E x (N+1)^2 con 4*pi*i^n*conj(Y_nm) por direccion."""
    phase = i_power(order_of_flat(order))
    return FOUR_PI * phase[np.newaxis, :] * np.conj(sh_matrix(order, theta, phi, condon_shortley))


def mdp(direction: Direction, order: int, condon_shortley: bool = False) -> ModalDirectionalPattern:
    if order < 0:
        raise ShdConfigError("El orden del MDP debe ser >= 0.")
    coeffs = mdp_matrix(order, direction.theta, direction.phi, condon_shortley)[0]
    return ModalDirectionalPattern(coeffs=coeffs, order=order)


def convention_tag(condon_shortley: bool) -> str:
    return "acn-cs" if condon_shortley else "acn-nocs"


@dataclass(frozen=True)
class MdpDictionary:
    order: int
    elev_step_deg: float
    azim_step_deg: float
    condon_shortley: bool
    theta: np.ndarray
    phi: np.ndarray
    patterns: np.ndarray

    def __len__(self) -> int:
        return int(self.patterns.shape[0])

    @property
    def convention(self) -> str:
        return convention_tag(self.condon_shortley)

    def direction(self, index: int) -> Direction:
        return Direction(float(self.theta[index]), float(self.phi[index]))

    def entries(self) -> Iterator[Tuple[Direction, ModalDirectionalPattern]]:
        for index in range(len(self)):
            yield self.direction(index), ModalDirectionalPattern(self.patterns[index], self.order)

    def checksum(self) -> str:
        return dictionary_checksum(self)

    def save(self, path: str) -> str:
        try:
            with open(path, "wb") as file:
                np.savez(
                    file,
                    version=np.int64(DICTIONARY_VERSION),
                    order=np.int64(self.order),
                    elev_step_deg=np.float64(self.elev_step_deg),
                    azim_step_deg=np.float64(self.azim_step_deg),
                    convention=np.array(self.convention),
                    theta=self.theta,
                    phi=self.phi,
                    patterns=self.patterns,
                    checksum=np.array(self.checksum()),
                )
        except OSError as exc:
            raise ShdIOError(f"No se pudo escribir el diccionario en {path}: {exc}") from exc
        return path


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    return values


def _steps_per_span(step_deg: float, span_deg: float, label: str) -> int:
    if step_deg <= 0.0:
        raise ShdConfigError(f"Paso de {label} debe ser > 0 (recibido {step_deg}).")
    count = span_deg / step_deg
    rounded = int(round(count))
    if rounded < 1 or abs(count - rounded) > 1e-9:
        raise ShdConfigError(f"Paso de {label} {step_deg} grados no divide {span_deg:g}.")
    return rounded


def build_dictionary(
    elev_step_deg: float,
    azim_step_deg: float,
    order: int,
    condon_shortley: bool = False,
) -> MdpDictionary:
    if order < 0 or order > MAX_SH_ORDER:
        raise ShdConfigError(f"Orden SH fuera de rango [0, {MAX_SH_ORDER}]: {order}")
    n_elev = _steps_per_span(elev_step_deg, 180.0, "elevacion")
    n_azim = _steps_per_span(azim_step_deg, 360.0, "azimut")

    theta_rows = [np.array([0.0])]
    phi_rows = [np.array([0.0])]
    azimuths = np.deg2rad(np.arange(n_azim) * azim_step_deg)
    for row in range(1, n_elev):
        theta_rows.append(np.full(n_azim, np.deg2rad(row * elev_step_deg)))
        phi_rows.append(azimuths)
    # Polos una sola vez, con phi = 0.
    theta_rows.append(np.array([np.pi]))
    phi_rows.append(np.array([0.0]))

    theta = np.concatenate(theta_rows)
    phi = np.concatenate(phi_rows)
    patterns = mdp_matrix(order, theta, phi, condon_shortley)
    return MdpDictionary(
        order=order,
        elev_step_deg=float(elev_step_deg),
        azim_step_deg=float(azim_step_deg),
        condon_shortley=condon_shortley,
        theta=_readonly(theta),
        phi=_readonly(phi),
        patterns=_readonly(patterns),
    )


def dictionary_checksum(dictionary: MdpDictionary) -> str:
    digest = hashlib.sha256()
    header = (
        f"v{DICTIONARY_VERSION}|N={dictionary.order}|el={dictionary.elev_step_deg!r}"
        f"|az={dictionary.azim_step_deg!r}|{dictionary.convention}"
    )
    digest.update(header.encode("utf-8"))
    digest.update(np.ascontiguousarray(dictionary.theta, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(dictionary.phi, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(dictionary.patterns, dtype=np.complex128).tobytes())
    return digest.hexdigest()


def load_dictionary(
    path: str,
    expected_order: Optional[int] = None,
    expected_convention: Optional[str] = "acn-nocs",
) -> MdpDictionary:
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"])
            tag = str(data["convention"])
            stored_checksum = str(data["checksum"])
            dictionary = MdpDictionary(
                order=int(data["order"]),
                elev_step_deg=float(data["elev_step_deg"]),
                azim_step_deg=float(data["azim_step_deg"]),
                condon_shortley=tag == "acn-cs",
                theta=_readonly(np.array(data["theta"], dtype=float)),
                phi=_readonly(np.array(data["phi"], dtype=float)),
                patterns=_readonly(np.array(data["patterns"], dtype=complex)),
            )
    except (OSError, KeyError, ValueError) as exc:
        raise ShdIOError(f"No se pudo leer el diccionario {path}: {exc}") from exc

    if version != DICTIONARY_VERSION:
        raise ShdIOError(f"Version de diccionario {version} no soportada (esperada {DICTIONARY_VERSION}).")
    if tag not in ("acn-nocs", "acn-cs"):
        raise ShdIOError(f"Convencion de diccionario desconocida: {tag!r}")
    if expected_convention is not None and tag != expected_convention:
        raise ShdIOError(f"Convencion del diccionario {tag!r} distinta de la esperada {expected_convention!r}.")
    if expected_order is not None and dictionary.order != expected_order:
        raise ShdConfigError(
            f"Orden del diccionario ({dictionary.order}) distinto del orden de analisis ({expected_order})."
        )
    if dictionary.checksum() != stored_checksum:
        raise ShdIOError(f"Checksum del diccionario {path} no coincide; fichero corrupto.")
    return dictionary


def gauss_product_grid(n_elev: int, n_azim: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Malla Gauss-Legendre x equiangular; pesos suman 4*pi.

    Integra exactamente productos Y_nm conj(Y_n'm') con n, n' <= N si
    n_elev >= N + 1 y n_azim >= 2N + 1.
    """
    nodes, gauss_weights = np.polynomial.legendre.leggauss(n_elev)
    theta_1d = np.arccos(nodes)
    phi_1d = 2.0 * np.pi * np.arange(n_azim) / n_azim
    theta, phi = np.meshgrid(theta_1d, phi_1d, indexing="ij")
    weights = np.repeat(gauss_weights * (2.0 * np.pi / n_azim), n_azim)
    return theta.ravel(), phi.ravel(), weights


def fibonacci_grid(count: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Espiral de Fibonacci casi uniforme con pesos 4*pi/Q."""
    if count < 1:
        raise ShdConfigError("La malla necesita al menos un punto.")
    k = np.arange(count) + 0.5
    theta = np.arccos(1.0 - 2.0 * k / count)
    phi = (np.pi * (1.0 + math.sqrt(5.0)) * k) % (2.0 * np.pi)
    weights = np.full(count, FOUR_PI / count)
    return theta, phi, weights
