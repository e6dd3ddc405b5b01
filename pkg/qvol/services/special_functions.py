import logging
import math
from dataclasses import dataclass

import numpy as np

from qvol.config import EPS, POLE_TOLERANCE
from qvol.errors import DomainError, PoleError, SingularityError

logger = logging.getLogger(__name__)

CROSS_CHECK_TOLERANCE = 1e-11


def _check_nome(t: float) -> None:
    if not 0.0 < t < 1.0:
        raise DomainError(f"Nome t must lie in (0, 1), got {t}")


@dataclass(frozen=True)
class ThetaParams:
    """Nome t with certified series truncations for tolerance eps."""

    t: float
    eps: float = EPS

    def __post_init__(self):
        _check_nome(self.t)
        if not 0.0 < self.eps < 1.0:
            raise DomainError(f"Tolerance must lie in (0, 1), got {self.eps}")

    @property
    def truncation(self) -> int:
        """Smallest M with t^{M(M+1)/2} < eps."""
        bound = math.log(self.eps) / math.log(self.t)
        m = max(1, math.ceil((-1 + math.sqrt(1 + 8 * bound)) / 2))
        while self.t ** (m * (m + 1) / 2) >= self.eps:
            m += 1
        return m

    @property
    def truncation3(self) -> int:
        """Smallest M with t^{M^2/2} < eps."""
        m = max(1, math.ceil(math.sqrt(2 * math.log(self.eps) / math.log(self.t))))
        while self.t ** (m * m / 2) >= self.eps:
            m += 1
        return m

    def range_for(self, modulus: float) -> np.ndarray:
        """Summation range -M..M covering z^m terms with max(|z|, 1/|z|) <= modulus."""
        a = -math.log(self.t)
        b = abs(math.log(max(modulus, 1.0 / modulus)))
        cut = -math.log(self.eps)
        m = math.ceil((b + math.sqrt(b * b + 2 * a * cut)) / a) + 2
        return np.arange(-max(m, self.truncation), max(m, self.truncation) + 1)


def _as_complex(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    if np.any(z == 0):
        raise DomainError("Theta functions are undefined at z = 0")
    return z


def _modulus(z: np.ndarray) -> float:
    mods = np.abs(z)
    return float(max(mods.max(), 1.0 / mods.min())) if mods.size else 1.0


def _scalar(value: np.ndarray):
    return value.item() if value.ndim == 0 else value


def q_pochhammer(a, t: float, eps: float = EPS):
    """(a; t)_inf = prod_{n>=0} (1 - a t^n), vectorized over a.

    The product stops once |a| t^n < eps, leaving a relative remainder of
    order eps / (1 - t).

    Raises:
        DomainError: If |t| >= 1
    """
    if not abs(t) < 1.0:
        raise DomainError(f"q-Pochhammer needs |t| < 1, got {t}")
    a = np.asarray(a, dtype=np.complex128)
    largest = float(np.abs(a).max()) if a.size else 0.0
    if largest == 0.0 or t == 0.0:
        return _scalar(1.0 - a)
    count = max(1, math.ceil(math.log(eps / largest) / math.log(abs(t))) + 1)
    powers = float(t) ** np.arange(count)
    return _scalar(np.prod(1.0 - a[..., None] * powers, axis=-1))


def _reduced_terms(z: np.ndarray, t: float, eps: float) -> np.ndarray:
    m = ThetaParams(t, eps).range_for(_modulus(z))
    return (-1.0) ** m * t ** (m * (m + 1) / 2) * z[..., None] ** m


def _compare_forms(name: str, value: np.ndarray, product: np.ndarray, magnitude: np.ndarray) -> float:
    """Largest disagreement relative to the absolute series size; warns above CROSS_CHECK_TOLERANCE."""
    if not np.size(value):
        return 0.0
    worst = float(np.max(np.abs(value - product) / (magnitude + np.finfo(float).tiny)))
    if worst > CROSS_CHECK_TOLERANCE:
        logger.warning(f"{name} sum and product forms disagree: relative {worst:.3e}")
    return worst


def theta1_reduced(z, t: float, eps: float = EPS):
    """theta_1(z)/z^{1/2} = sum (-1)^m t^{m(m+1)/2} z^m, a single-valued Laurent series."""
    _check_nome(t)
    return _scalar(np.sum(_reduced_terms(_as_complex(z), t, eps), axis=-1))


def theta1(z, t: float, eps: float = EPS, cross_check: bool = True):
    """theta_1(z; t) = sum (-1)^m t^{m(m+1)/2} z^{m+1/2} with the principal z^{1/2}.

    Args:
        z: Nonzero complex argument, scalar or array
        t: Nome in (0, 1)
        eps: Truncation tolerance
        cross_check: Also evaluate the triple product and warn on disagreement

    Raises:
        DomainError: If z = 0 or t is outside (0, 1)
    """
    _check_nome(t)
    z = _as_complex(z)
    terms = _reduced_terms(z, t, eps)
    root = np.sqrt(z)
    value = root * np.sum(terms, axis=-1)
    if cross_check:
        magnitude = np.abs(root) * np.sum(np.abs(terms), axis=-1)
        _compare_forms("theta1", value, np.asarray(theta1_product(z, t, eps)), magnitude)
    return _scalar(np.asarray(value))


def theta1_product(z, t: float, eps: float = EPS):
    """(z^{1/2} - z^{-1/2}) (t;t) (tz;t) (t/z;t)."""
    _check_nome(t)
    z = _as_complex(z)
    root = np.sqrt(z)
    value = (
        (root - 1.0 / root)
        * q_pochhammer(t, t, eps)
        * np.asarray(q_pochhammer(t * z, t, eps))
        * np.asarray(q_pochhammer(t / z, t, eps))
    )
    return _scalar(np.asarray(value))


def theta3(z, t: float, eps: float = EPS, cross_check: bool = True):
    """theta_3(z; t) = sum z^m t^{m^2/2}.

    With `cross_check` the product form is evaluated too and a disagreement
    above CROSS_CHECK_TOLERANCE is logged.
    """
    _check_nome(t)
    z = _as_complex(z)
    m = ThetaParams(t, eps).range_for(_modulus(z))
    terms = t ** (m * m / 2) * z[..., None] ** m
    value = np.sum(terms, axis=-1)
    if cross_check:
        _compare_forms("theta3", value, np.asarray(theta3_product(z, t, eps)), np.sum(np.abs(terms), axis=-1))
    return _scalar(value)


def theta3_product(z, t: float, eps: float = EPS):
    """(t;t) prod_{n in N + 1/2} (1 + t^n z)(1 + t^n / z)."""
    _check_nome(t)
    z = _as_complex(z)
    half = math.sqrt(t)
    value = (
        q_pochhammer(t, t, eps)
        * np.asarray(q_pochhammer(-half * z, t, eps))
        * np.asarray(q_pochhammer(-half / z, t, eps))
    )
    return _scalar(np.asarray(value))


def nome_of(omega: complex) -> float:
    """t = exp(2 pi i omega) for purely imaginary omega with positive imaginary part."""
    omega = complex(omega)
    if abs(omega.real) > 1e-15 or omega.imag <= 0.0:
        raise DomainError(f"omega must be purely imaginary with Im > 0, got {omega}")
    return math.exp(-2 * math.pi * omega.imag)


def _check_lattice(eta: np.ndarray, omega: complex) -> None:
    period = complex(omega).imag
    nearest = np.round(eta.real) + 1j * period * np.round(eta.imag / period)
    if np.any(np.abs(eta - nearest) < POLE_TOLERANCE):
        raise PoleError("Theta vanishes at lattice points n + m*omega")


def _theta_derivatives(eta, omega: complex, order: int, eps: float = EPS) -> list[np.ndarray]:
    """Theta and its first `order` eta-derivatives from the term-wise differentiated series."""
    t = nome_of(omega)
    eta = np.asarray(eta, dtype=np.complex128)
    modulus = math.exp(2 * math.pi * float(np.abs(eta.imag).max())) if eta.size else 1.0
    m = ThetaParams(t, eps).range_for(modulus)
    frequency = 2j * math.pi * (m + 0.5)
    terms = (-1.0) ** m * t ** (m * (m + 1) / 2) * np.exp(frequency * eta[..., None])
    return [np.sum(terms * frequency**p, axis=-1) for p in range(order + 1)]


def Theta(eta, omega: complex, eps: float = EPS):
    """Theta(eta | omega) = theta_1(e^{2 pi i eta}; e^{2 pi i omega}) with z^{1/2} = e^{i pi eta}.

    Odd in eta, and an entire function of eta.
    """
    (value,) = _theta_derivatives(eta, omega, 0, eps)
    return _scalar(value)


def d2_log_Theta(eta, omega: complex, eps: float = EPS):
    """Second eta-derivative of log Theta, Theta''/Theta - (Theta'/Theta)^2.

    Raises:
        PoleError: If eta is (numerically) a lattice point n + m*omega
    """
    eta = np.asarray(eta, dtype=np.complex128)
    _check_lattice(eta, omega)
    value, first, second = _theta_derivatives(eta, omega, 2, eps)
    return _scalar(second / value - (first / value) ** 2)


def log_abs_Theta(eta, omega: complex, eps: float = EPS, check_lattice: bool = True):
    """log|Theta(eta | omega)| from the triple product, accurate next to the zeros."""
    t = nome_of(omega)
    eta = np.asarray(eta, dtype=np.complex128)
    if check_lattice:
        _check_lattice(eta, omega)
    z = np.exp(2j * math.pi * eta)
    mods = np.abs(z)
    largest = float(max(mods.max(), 1.0 / mods.min())) if mods.size else 1.0
    count = max(1, math.ceil(math.log(eps / largest) / math.log(t)) + 1)
    powers = t ** np.arange(1, count + 1)
    value = (
        np.log(np.abs(2.0 * np.sin(math.pi * eta)))
        + np.sum(np.log(np.abs(1.0 - powers * z[..., None])), axis=-1)
        + np.sum(np.log(np.abs(1.0 - powers / z[..., None])), axis=-1)
        + math.log(q_pochhammer(t, t, eps).real)
    )
    return _scalar(value)


def greens(eta1, eta2, omega: complex, eps: float = EPS):
    """Dirichlet Green's function of the cylinder, -(1/2 pi) log|Theta(eta1 - eta2)/Theta(eta1 + conj(eta2))|.

    Args:
        eta1: Point(s) in (0, 1/2) + i (0, |log t|/2 pi]
        eta2: Point(s) in the same domain
        omega: Purely imaginary modular parameter

    Returns:
        Real value(s), symmetric in the two arguments

    Raises:
        SingularityError: If the two points coincide
    """
    eta1 = np.asarray(eta1, dtype=np.complex128)
    eta2 = np.asarray(eta2, dtype=np.complex128)
    difference = eta1 - eta2
    try:
        _check_lattice(difference, omega)
    except PoleError as e:
        raise SingularityError("Green's function evaluated at coincident points") from e
    value = log_abs_Theta(difference, omega, eps) - log_abs_Theta(eta1 + np.conj(eta2), omega, eps)
    return _scalar(np.asarray(-value / (2 * math.pi)))


def frobenius_determinant(u: float, r, z, t: float, eps: float = EPS) -> complex:
    """det[theta_3(u r_j z_i/z_j) / (theta_3(-t^{-1/2} r_j z_i/z_j) theta_3(u))]."""
    r = np.asarray(r, dtype=np.complex128)
    z = np.asarray(z, dtype=np.complex128)
    if len(r) > 3 or len(r) != len(z):
        raise DomainError("The elliptic Cauchy determinant is evaluated for n <= 3 matching r, z")
    ratio = r[None, :] * z[:, None] / z[None, :]
    matrix = np.asarray(theta3(u * ratio, t, eps)) / (
        np.asarray(theta3(-ratio / math.sqrt(t), t, eps)) * theta3(u, t, eps)
    )
    return complex(np.linalg.det(matrix))


def frobenius_product(u: float, r, z, t: float, eps: float = EPS) -> complex:
    """Product side of the elliptic Cauchy determinant identity (principal square roots)."""
    r = np.asarray(r, dtype=np.complex128)
    z = np.asarray(z, dtype=np.complex128)
    n = len(r)
    value = (-1) ** n * theta3(u * np.prod(r), t, eps) / (theta3(u, t, eps) * np.sqrt(np.prod(r)))
    for i in range(n):
        value /= theta1(r[i], t, eps)
        for j in range(i + 1, n):
            value *= (
                theta1(z[i] / z[j], t, eps)
                * theta1(r[i] / r[j] * z[j] / z[i], t, eps)
                / (theta1(r[j] * z[i] / z[j], t, eps) * theta1(r[i] * z[j] / z[i], t, eps))
            )
    return complex(value)


@dataclass(frozen=True)
class DiscreteGaussianTable:
    """Shift support and normalized weights u^S t^{S^2/2} / theta_3(u; t)."""

    shifts: np.ndarray
    probabilities: np.ndarray
    normalizer: float

    def mean(self) -> float:
        return float(np.dot(self.shifts, self.probabilities))

    def variance(self) -> float:
        return float(np.dot(self.shifts**2, self.probabilities) - self.mean() ** 2)


def discrete_gaussian_table(u: float, t: float, tol: float = 1e-14) -> DiscreteGaussianTable:
    """Truncated discrete Gaussian on Z with mass outside the support below `tol`.

    Raises:
        DomainError: If u <= 0 or t is outside (0, 1)
    """
    _check_nome(t)
    if not u > 0.0:
        raise DomainError(f"Shift parameter u must be positive, got {u}")
    log_t, log_u = math.log(t), math.log(u)
    center = round(-log_u / log_t)

    def log_weight(s):
        return s * log_u + s * s * log_t / 2

    peak = log_weight(center)
    # tail terms decay at least geometrically with ratio t^{1/2}
    bound = math.log(tol * (1 - math.sqrt(t)))
    low = center
    while log_weight(low - 1) - peak > bound:
        low -= 1
    high = center
    while log_weight(high + 1) - peak > bound:
        high += 1
    shifts = np.arange(low - 1, high + 2)
    log_weights = shifts * log_u + shifts**2 * log_t / 2
    weights = np.exp(log_weights - peak)
    total = weights.sum()
    normalizer = float(math.exp(peak) * total)
    logger.debug(f"Shift table for u={u}, t={t}: S in [{shifts[0]}, {shifts[-1]}]")
    return DiscreteGaussianTable(shifts, weights / total, normalizer)
