import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import integrate
from scipy.special import comb

from qvol.config import (
    COVARIANCE_NODES,
    GREENS_LEVELS,
    GREENS_TOLERANCE,
    MOMENT_MAX_GRID_POINTS,
    MOMENT_NODES,
    MOMENT_TOLERANCE,
    TANH_SINH_RANGE,
)
from qvol.errors import ConfigurationError, DomainError
from qvol.run import write_csv
from qvol.services.kernel import lower_index_max, upper_index_min
from qvol.services.limit_shape import H_prime, liquid_lower_edge
from qvol.services.partitions import ModularData, SliceObservable
from qvol.services.special_functions import (
    ThetaParams,
    discrete_gaussian_table,
    log_abs_Theta,
    q_pochhammer,
    theta1_reduced,
    theta3,
)

logger = logging.getLogger(__name__)

MOMENT_COLUMNS = ["n", "taus", "ks", "N", "t", "value", "error_budget"]


@dataclass(frozen=True)
class MomentResult:
    """Quadrature value with the last node-doubling change as its error budget."""

    value: float
    error: float
    nodes: int

    def scaled(self, factor: float) -> "MomentResult":
        return MomentResult(self.value * factor, abs(self.error * factor), self.nodes)


@dataclass(frozen=True)
class ContourSpec:
    """Nested circle radii rho_1 > ... > rho_n for the slices sorted by column."""

    radii: tuple[float, ...]
    nodes: int = MOMENT_NODES

    @property
    def ratio(self) -> float:
        """Common modulus of the ratios z_l / z_{l+1} on the geometric ladder."""
        return self.radii[0] / self.radii[1] if len(self.radii) > 1 else 1.0

    @classmethod
    def for_slices(
        cls, slices: Sequence[SliceObservable], md: ModularData, nodes: int = MOMENT_NODES
    ) -> "ContourSpec":
        """Geometric ladder rho_i = t^{-(n-i) gamma} with gamma centered in the feasible interval.

        Raises:
            ConfigurationError: If some k >= N or the nesting constraints have no solution
        """
        ordered = sort_slices(slices, md)
        for s in ordered:
            if s.k >= md.n:
                raise ConfigurationError(f"Moment with k={s.k} >= N={md.n} is infinite")
        n = len(ordered)
        big = -math.log(md.t)
        a = [-math.log(md.r(s.k)) for s in ordered]
        low, high = 0.0, math.inf
        for i, j in itertools.combinations(range(n), 2):
            low = max(low, a[j] / ((j - i) * big))
            high = min(high, (big - a[i]) / ((j - i) * big))
        if n > 1 and not high > low:
            raise ConfigurationError(
                f"No nested contours for k={[s.k for s in ordered]} at N={md.n}"
            )
        gamma = (low + high) / 2 if n > 1 else 0.0
        radii = tuple(md.t ** (-(n - 1 - i) * gamma) for i in range(n))
        return cls(radii, nodes)

    def validate(self, slices: Sequence[SliceObservable], md: ModularData) -> None:
        """r_j^{-1} rho_j < rho_i < t^{-1} r_i rho_j for all i < j."""
        ordered = sort_slices(slices, md)
        if len(self.radii) != len(ordered):
            raise ConfigurationError(f"{len(self.radii)} radii for {len(ordered)} slices")
        for i, j in itertools.combinations(range(len(ordered)), 2):
            ri, rj = md.r(ordered[i].k), md.r(ordered[j].k)
            if not self.radii[j] / rj < self.radii[i] < self.radii[j] * ri / md.t:
                raise ConfigurationError(f"Contours {i + 1} and {j + 1} violate the nesting condition")


def sort_slices(slices: Sequence[SliceObservable], md: ModularData) -> list[SliceObservable]:
    return sorted(slices, key=lambda s: s.column(md.n))


def prefactor(r: float, t: float) -> float:
    """(t;t)^2 / ((rt;t)(r^{-1}t;t)(1 - r^{-1}))."""
    poch = q_pochhammer(t, t).real
    denominator = q_pochhammer(r * t, t).real * q_pochhammer(t / r, t).real * -math.expm1(-math.log(r))
    return poch**2 / denominator


def quotient_coefficients(column: int, k: int, md: ModularData) -> np.ndarray:
    """Laurent coefficients of F(tau, z)/F(tau, q^{-2k} z) at degrees -k..k."""
    coefficients = np.array([1.0])
    for i in np.arange(upper_index_min(column), column + 2 * k + 1e-9, 2.0):
        coefficients = np.convolve(coefficients, [-(md.q**i), 1.0])
    lower = np.arange(lower_index_max(column + 1), column + 2 * k - 1e-9, 2.0)
    for j in lower[lower >= column]:
        coefficients = np.convolve(coefficients, [1.0, -(md.q ** (-j))])
    return coefficients


def cross_factor(w: np.ndarray, ri: float, rj: float, t: float) -> np.ndarray:
    """theta_1(w) theta_1(r_j w/r_i) / (theta_1(r_j w) theta_1(w/r_i)) in the reduced, branch-free form."""
    return (
        np.asarray(theta1_reduced(w, t))
        * np.asarray(theta1_reduced(rj * w / ri, t))
        / (np.asarray(theta1_reduced(rj * w, t)) * np.asarray(theta1_reduced(w / ri, t)))
    )


def set_partitions(items: Sequence[int]) -> Iterator[list[list[int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partition in set_partitions(rest):
        yield [[first]] + partition
        for i in range(len(partition)):
            yield partition[:i] + [[first] + partition[i]] + partition[i + 1 :]


CrossBuilder = Callable[[dict[tuple[int, int], np.ndarray], int], np.ndarray]


def _moment_cross(factors: dict[tuple[int, int], np.ndarray], n: int) -> np.ndarray:
    return np.prod(list(factors.values()), axis=0) if factors else np.array(1.0)


def _cumulant_cross(factors: dict[tuple[int, int], np.ndarray], n: int) -> np.ndarray:
    total = 0.0
    for partition in set_partitions(list(range(n))):
        blocks = len(partition)
        term = (-1) ** (blocks - 1) * math.factorial(blocks - 1)
        for block in partition:
            for i, j in itertools.combinations(sorted(block), 2):
                term = term * factors[(i, j)]
        total = total + term
    return np.asarray(total)


def _constant_term(
    ordered: Sequence[SliceObservable],
    md: ModularData,
    ratio: float,
    nodes: int,
    build: CrossBuilder,
) -> complex:
    """Constant term of cross(z_i/z_j) * prod_i quotient_i(z_i) on the nested circles."""
    n = len(ordered)
    coefficients = [quotient_coefficients(s.column(md.n), s.k, md) for s in ordered]
    if n == 1:
        return complex(coefficients[0][ordered[0].k])

    rs = [md.r(s.k) for s in ordered]
    angles = ratio * np.exp(2j * math.pi * np.arange(nodes) / nodes)
    grids = np.meshgrid(*([angles] * (n - 1)), indexing="ij")
    factors = {}
    for i, j in itertools.combinations(range(n), 2):
        w = np.prod(grids[i:j], axis=0)
        factors[(i, j)] = cross_factor(w, rs[i], rs[j], md.t)
    spectrum = np.fft.fftn(np.broadcast_to(build(factors, n), grids[0].shape)) / nodes ** (n - 1)

    ranges = [range(-s.k, s.k + 1) for s in ordered]
    degrees = np.array([d for d in itertools.product(*ranges) if sum(d) == 0])
    weights = np.prod([coefficients[i][degrees[:, i] + ordered[i].k] for i in range(n)], axis=0)
    exponents = np.cumsum(degrees, axis=1)[:, : n - 1]
    # coefficient of prod w_l^{-e_l}
    values = spectrum[tuple(((-exponents) % nodes).T)] * ratio ** exponents.sum(axis=1)
    return complex(np.sum(weights * values))


def _certified_constant_term(
    slices: Sequence[SliceObservable], md: ModularData, spec: ContourSpec | None, build: CrossBuilder
) -> tuple[complex, float, int]:
    ordered = sort_slices(slices, md)
    if spec is None:
        spec = ContourSpec.for_slices(ordered, md)
    spec.validate(ordered, md)
    for s in ordered:
        if s.k >= md.n:
            raise ConfigurationError(f"Moment with k={s.k} >= N={md.n} is infinite")
    n = len(ordered)
    total_k = sum(s.k for s in ordered)
    nodes = max(spec.nodes, 1 << (4 * total_k + 1).bit_length())
    previous = _constant_term(ordered, md, spec.ratio, nodes, build)
    if n == 1:
        return previous, 0.0, 1
    while True:
        if (2 * nodes) ** (n - 1) > MOMENT_MAX_GRID_POINTS:
            change = math.inf
            logger.warning(f"Moment quadrature not certified: grid cap reached at {nodes} nodes")
            return previous, change, nodes
        nodes *= 2
        current = _constant_term(ordered, md, spec.ratio, nodes, build)
        change = abs(current - previous)
        logger.debug(f"Moment quadrature at {nodes} nodes: change {change:.3e}")
        if change < MOMENT_TOLERANCE * max(1.0, abs(current)):
            return current, change, nodes
        previous = current


def _real(value: complex, label: str) -> float:
    if abs(value.imag) > 1e-9 * max(1.0, abs(value)):
        logger.warning(f"{label} has imaginary residue {value.imag:.3e}")
    return value.real


def contour_moment(
    slices: Sequence[SliceObservable], md: ModularData, spec: ContourSpec | None = None
) -> MomentResult:
    """E[prod F_{r_i}(lambda^(tau_i))], r_i = q^{2 k_i}, from the nested contour integral.

    The cross factor only depends on the ratios z_l / z_{l+1}; its Fourier
    coefficients come from an (n-1)-dimensional FFT, and the entire
    quotients are Laurent polynomials, so the common rotation is summed
    exactly.

    Args:
        slices: Slice observables (any order)
        md: Parameters
        spec: Contours; defaults to `ContourSpec.for_slices`

    Returns:
        MomentResult with the value and the last node-doubling change

    Raises:
        ConfigurationError: If the contours are infeasible or some k >= N
    """
    value, change, nodes = _certified_constant_term(slices, md, spec, _moment_cross)
    factor = math.prod(prefactor(md.r(s.k), md.t) for s in slices)
    return MomentResult(_real(value, "contour moment"), change, nodes).scaled(factor)


def joint_cumulant(
    slices: Sequence[SliceObservable], md: ModularData, spec: ContourSpec | None = None
) -> MomentResult:
    """Joint cumulant of the F_{r_i}, with the moment-cumulant relation applied inside the integrand."""
    value, change, nodes = _certified_constant_term(slices, md, spec, _cumulant_cross)
    factor = math.prod(prefactor(md.r(s.k), md.t) for s in slices)
    return MomentResult(_real(value, "joint cumulant"), change, nodes).scaled(factor)


def shift_ratio(product: float, md: ModularData) -> float:
    """E[product^S] = theta_3(u product; t)/theta_3(u; t) under the shift law."""
    return (theta3(md.u * product, md.t) / theta3(md.u, md.t)).real


def shift_mixed_moment(
    slices: Sequence[SliceObservable], md: ModularData, spec: ContourSpec | None = None
) -> MomentResult:
    """contour_moment times theta_3(u prod r_i; t)/theta_3(u; t)."""
    product = math.prod(md.r(s.k) for s in slices)
    return contour_moment(slices, md, spec).scaled(shift_ratio(product, md))


def statistic_scale(k: int, md: ModularData) -> float:
    """X = statistic_scale * F_r for the slice statistic (1/2N) sum_y h(y) r^y."""
    r = md.r(k)
    return -math.sqrt(r) / (1.0 - r) / (2 * md.n)


def prelimit_mean(k: int, md: ModularData, tau: float = 1.0) -> MomentResult:
    """E[X]/2N for the slice statistic at (tau, k); tends to mean_asymptotic."""
    moment = contour_moment([SliceObservable(tau, k)], md)
    return moment.scaled(statistic_scale(k, md) / (2 * md.n))


def prelimit_covariance(s1: SliceObservable, s2: SliceObservable, md: ModularData) -> MomentResult:
    """Cov(X_1, X_2) of two slice statistics."""
    cumulant = joint_cumulant([s1, s2], md)
    return cumulant.scaled(statistic_scale(s1.k, md) * statistic_scale(s2.k, md))


def prelimit_third_cumulant(
    s1: SliceObservable, s2: SliceObservable, s3: SliceObservable, md: ModularData
) -> MomentResult:
    """kappa_3(X_1, X_2, X_3); of order 1/N."""
    cumulant = joint_cumulant([s1, s2, s3], md)
    scale = math.prod(statistic_scale(s.k, md) for s in (s1, s2, s3))
    return cumulant.scaled(scale)


def mean_asymptotic(k: int, t: float) -> float:
    """C(2k, k)/(2k log t)^2."""
    if k < 1 or not 0.0 < t < 1.0:
        raise DomainError(f"mean_asymptotic needs k >= 1 and t in (0, 1), got k={k}, t={t}")
    return comb(2 * k, k, exact=True) / (2 * k * math.log(t)) ** 2


def wallis_quadrature(k: int, t: float) -> float:
    """Integral of H'(y) t^{2ky} over the liquid region by adaptive quadrature."""
    value, _ = integrate.quad(
        lambda y: H_prime(y, t) * t ** (2 * k * y),
        liquid_lower_edge(t),
        np.inf,
        epsabs=1e-14,
        epsrel=1e-13,
        limit=200,
    )
    return value


def wallis_moment(k: int, t: float, cross_check: bool = True) -> float:
    """-C(2k, k)/(2k log t), checked against `wallis_quadrature`."""
    if k < 1 or not 0.0 < t < 1.0:
        raise DomainError(f"wallis_moment needs k >= 1 and t in (0, 1), got k={k}, t={t}")
    value = -comb(2 * k, k, exact=True) / (2 * k * math.log(t))
    if cross_check:
        quadrature = wallis_quadrature(k, t)
        if abs(quadrature - value) > 1e-10 * max(1.0, abs(value)):
            logger.warning(f"Wallis moment k={k}: closed form {value} vs quadrature {quadrature}")
    return value


def _d2_log_theta_series(w: np.ndarray, t: float) -> np.ndarray:
    """d^2 log Theta as a function of w = e^{2 pi i eta}; 1-periodic in eta, so single-valued in w."""
    m = ThetaParams(t).range_for(float(max(np.abs(w).max(), 1 / np.abs(w).min())))
    base = (-1.0) ** m * t ** (m * (m + 1) / 2)
    frequency = 2j * math.pi * (m + 0.5)
    powers = w[:, None] ** m
    s0 = powers @ base
    s1 = powers @ (base * frequency)
    s2 = powers @ (base * frequency**2)
    return s2 / s0 - (s1 / s0) ** 2


def _slice_polynomial(tau: float, k: int, t: float) -> np.ndarray:
    """Coefficients at degrees -k..k of (1 - t^tau / x)^k (1 - t^{-tau} x)^k."""
    coefficients = np.array([1.0])
    for _ in range(k):
        coefficients = np.convolve(coefficients, [-(t**tau), 1.0])
    for _ in range(k):
        coefficients = np.convolve(coefficients, [1.0, -(t ** (-tau))])
    return coefficients


def covariance_asymptotic(
    s1: SliceObservable,
    s2: SliceObservable,
    md: ModularData,
    c1: float | None = None,
    c2: float | None = None,
) -> float:
    """Limiting covariance from the double integral of d^2 log Theta(eta_1 - eta_2) over horizontal segments.

    The segments sit at Im eta_i = c_i with c_2 - |log t|/2 pi < c_1 < c_2;
    the integral is the constant term of d^2 log Theta(x_1/x_2) times the
    two slice polynomials, taken on |x_1/x_2| = e^{2 pi (c_2 - c_1)}.

    Raises:
        ConfigurationError: If the offsets are not admissible
    """
    if s1.tau > s2.tau:
        s1, s2 = s2, s1
    t = md.t
    span = -math.log(t) / (2 * math.pi)
    if c1 is None and c2 is None:
        gap = span / 2
    elif c1 is None or c2 is None:
        raise ConfigurationError("Give both offsets or neither")
    else:
        gap = c2 - c1
        if not 0.0 < gap < span:
            raise ConfigurationError(f"Offsets c1={c1}, c2={c2} violate c2 - |log t|/2pi < c1 < c2")
    radius = math.exp(2 * math.pi * gap)
    a1 = _slice_polynomial(s1.tau, s1.k, t)
    a2 = _slice_polynomial(s2.tau, s2.k, t)
    reach = min(s1.k, s2.k)
    m = np.arange(-reach, reach + 1)

    def constant_term(nodes: int) -> complex:
        w = radius * np.exp(2j * math.pi * np.arange(nodes) / nodes)
        spectrum = np.fft.fft(_d2_log_theta_series(w, t)) / nodes
        coefficients = spectrum[m % nodes] / radius**m
        return complex(np.sum(coefficients * a1[-m + s1.k] * a2[m + s2.k]))

    nodes = COVARIANCE_NODES
    value = constant_term(nodes)
    check = constant_term(2 * nodes)
    if abs(check - value) > 1e-12 * max(1.0, abs(check)):
        logger.warning(f"Covariance quadrature changed by {abs(check - value):.3e} on doubling")
    total = check / (16 * math.pi**2 * s1.k * s2.k * math.log(t) ** 2)
    return _real(total, "covariance_asymptotic")


@dataclass(frozen=True)
class TanhSinhRule:
    """Tanh-sinh nodes on [0, 1] as distances from both ends, for step h."""

    from_left: np.ndarray
    from_right: np.ndarray
    weights: np.ndarray

    @classmethod
    def with_step(cls, h: float, reach: float = TANH_SINH_RANGE) -> "TanhSinhRule":
        j = np.arange(-math.floor(reach / h), math.floor(reach / h) + 1) * h
        u = math.pi / 2 * np.sinh(j)
        return cls(
            1.0 / (1.0 + np.exp(-2 * u)),
            1.0 / (1.0 + np.exp(2 * u)),
            h * math.pi / 2 * np.cosh(j) / (2 * np.cosh(u) ** 2),
        )


def _slice_weight(s: np.ndarray, k: int) -> np.ndarray:
    """pi 2^{2k} sin^{2k-1}(pi s) cos(pi s), the density of t^{2ky} dy under t^y = 2 sin(pi s)."""
    return math.pi * 4.0**k * np.sin(math.pi * s) ** (2 * k - 1) * np.cos(math.pi * s)


def _greens_double_integral(s1: SliceObservable, s2: SliceObservable, md: ModularData, rule: TanhSinhRule) -> float:
    t = md.t
    big = -math.log(t)
    omega = complex(0.0, big / (2 * math.pi))
    vertical = 1j * (s1.tau - s2.tau) * big / (2 * math.pi)
    half = 0.5
    outer = half * rule.from_left
    outer_weights = half * rule.weights * _slice_weight(outer, s1.k)
    total = 0.0
    chunk = max(1, 200_000 // len(rule.weights))
    for start in range(0, len(outer), chunk):
        x = outer[start : start + chunk, None]
        pieces = []
        # [0, x]: distance to x from the right end; [x, 1/2]: from the left end
        for length, distance, position in (
            (x, x * rule.from_right[None, :], x - x * rule.from_right[None, :]),
            (half - x, -(half - x) * rule.from_left[None, :], x + (half - x) * rule.from_left[None, :]),
        ):
            values = log_abs_Theta(distance + vertical, omega, check_lattice=False) - log_abs_Theta(
                x + position + vertical, omega, check_lattice=False
            )
            pieces.append(np.sum(values * length * rule.weights[None, :] * _slice_weight(position, s2.k), axis=1))
        inner = -(pieces[0] + pieces[1]) / (2 * math.pi)
        total += float(np.sum(inner * outer_weights[start : start + chunk]))
    return total / (math.pi * big**2)


def greens_covariance(s1: SliceObservable, s2: SliceObservable, md: ModularData) -> float:
    """(1/pi) double integral of G(eta(tau_1, y_1), eta(tau_2, y_2)) t^{2k_1 y_1} t^{2k_2 y_2}.

    With t^y = 2 sin(pi s) the points become eta = s + i tau |log t|/2 pi
    and the y-range (log 2/log t, inf) maps to s in (0, 1/2). The inner
    integral is split at the diagonal; both levels use tanh-sinh rules with
    the step halved until the change is below GREENS_TOLERANCE.
    """
    h = 0.5
    previous = _greens_double_integral(s1, s2, md, TanhSinhRule.with_step(h))
    for level in range(1, GREENS_LEVELS + 1):
        h /= 2
        current = _greens_double_integral(s1, s2, md, TanhSinhRule.with_step(h))
        change = abs(current - previous)
        logger.debug(f"Green's covariance at h={h}: change {change:.3e}")
        if change < GREENS_TOLERANCE * max(1.0, abs(current)):
            return current
        previous = current
    logger.warning(f"Green's covariance not certified after {GREENS_LEVELS} halvings: change {change:.3e}")
    return current


@dataclass(frozen=True)
class ShiftMixedVariance:
    """Finite-N variance of the shift-mixed slice statistic and its limit decomposition."""

    exact: float
    asymptotic: float
    shift_variance: float


def shift_mixed_variance(s: SliceObservable, md: ModularData) -> ShiftMixedVariance:
    """Var(r^S X) at finite N, and greens_covariance + wallis_moment^2 Var(S) in the limit."""
    r = md.r(s.k)
    scale = statistic_scale(s.k, md)
    first = contour_moment([s], md).value * scale
    second = contour_moment([s, s], md).value * scale**2
    exact = shift_ratio(r * r, md) * second - shift_ratio(r, md) ** 2 * first**2
    variance = discrete_gaussian_table(md.u, md.t).variance()
    asymptotic = greens_covariance(s, s, md) + wallis_moment(s.k, md.t, cross_check=False) ** 2 * variance
    return ShiftMixedVariance(exact, asymptotic, variance)


def moment_row(slices: Sequence[SliceObservable], md: ModularData, result: MomentResult) -> list:
    return [
        len(slices),
        [s.tau for s in slices],
        [s.k for s in slices],
        md.n,
        md.t,
        result.value,
        result.error,
    ]


def dump_moments(path: Path, config: dict, rows: Sequence[list]) -> Path:
    """CSV rows (n, taus, ks, N, t, value, error_budget)."""
    return write_csv(path, config, MOMENT_COLUMNS, rows)
