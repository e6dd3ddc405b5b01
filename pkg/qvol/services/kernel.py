import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from qvol.config import EPS, KERNEL_MAX_NODES, KERNEL_NODES, KERNEL_TOLERANCE, POLE_TOLERANCE
from qvol.errors import ConfigurationError, DomainError, PoleError
from qvol.run import write_csv
from qvol.services.partitions import ModularData
from qvol.services.special_functions import q_pochhammer, theta3

logger = logging.getLogger(__name__)


def upper_index_min(tau: int) -> float:
    """Smallest i in 2Z + 1/2 with i > tau."""
    return 2 * (math.floor((tau - 0.5) / 2) + 1) + 0.5


def lower_index_max(sigma: int) -> float:
    """Largest j in 2Z - 1/2 with j < sigma."""
    return 2 * (math.ceil((sigma + 0.5) / 2) - 1) - 0.5


def _F_factors(tau: int, z: np.ndarray, md: ModularData, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Factors 1 - q^i/z (i > tau) and 1 - q^{-j} z (j < tau), truncated where they are within eps of one."""
    if np.any(z == 0):
        raise DomainError("F is undefined at z = 0")
    a = -math.log(md.q)
    mods = np.abs(z)
    smallest, largest = float(mods.min()), float(mods.max())
    i_min = upper_index_min(tau)
    # q^i / |z| < eps  <=>  i > (-log eps - log|z|)/a
    i_stop = max(i_min, (-math.log(eps) - math.log(smallest)) / a)
    upper = np.arange(i_min, i_stop + 2, 2.0)
    j_max = lower_index_max(tau)
    # q^{-j} |z| < eps  <=>  j < (log eps - log|z|)/a
    j_stop = min(j_max, (math.log(eps) - math.log(largest)) / a)
    lower = np.arange(j_max, j_stop - 2, -2.0)
    return 1.0 - md.q**upper / z[..., None], 1.0 - md.q ** (-lower) * z[..., None]


def F_of(tau: int, z, md: ModularData, eps: float = EPS):
    """F(tau, z) = prod_{i > tau} (1 - q^i/z) / prod_{j < tau} (1 - q^{-j} z).

    Here i runs over 2Z + 1/2 and j over 2Z - 1/2. Factors that differ
    from one by less than eps are dropped.

    Raises:
        PoleError: If z is within relative distance POLE_TOLERANCE of a pole q^j
    """
    z = np.asarray(z, dtype=np.complex128)
    upper, lower = _F_factors(tau, z, md, eps)
    if np.any(np.abs(lower) < POLE_TOLERANCE):
        raise PoleError(f"F({tau}, z) evaluated at a pole q^j")
    value = np.prod(upper, axis=-1) / np.prod(lower, axis=-1)
    return value.item() if value.ndim == 0 else value


def F_reciprocal(tau: int, z, md: ModularData, eps: float = EPS):
    """1/F(tau, z) from its own product, so the poles of F are plain zeros here.

    Raises:
        PoleError: If z is within relative distance POLE_TOLERANCE of a zero q^i of F
    """
    z = np.asarray(z, dtype=np.complex128)
    upper, lower = _F_factors(tau, z, md, eps)
    if np.any(np.abs(upper) < POLE_TOLERANCE):
        raise PoleError(f"1/F({tau}, z) evaluated at a zero q^i of F")
    value = np.prod(lower, axis=-1) / np.prod(upper, axis=-1)
    return value.item() if value.ndim == 0 else value


def F_quotient(tau: int, k: int, z, md: ModularData):
    """F(tau, z)/F(tau, q^{-2k} z) as the finite product over tau < i <= tau + 2k and tau <= j < tau + 2k."""
    z = np.asarray(z, dtype=np.complex128)
    upper = np.arange(upper_index_min(tau), tau + 2 * k + 1e-9, 2.0)
    lower = np.arange(lower_index_max(tau + 1), tau + 2 * k - 1e-9, 2.0)
    lower = lower[lower >= tau]
    value = np.prod(1.0 - md.q ** upper / z[..., None], axis=-1) * np.prod(
        1.0 - md.q ** (-lower) * z[..., None], axis=-1
    )
    return value.item() if value.ndim == 0 else value


def _check_shift_parameter(md: ModularData) -> None:
    """theta_3(u; t) vanishes at u = -t^{(2l+1)/2}."""
    value = abs(theta3(md.u, md.t))
    if value < POLE_TOLERANCE:
        raise ConfigurationError(f"u = {md.u} is a zero of theta_3(.; t)")


@dataclass(frozen=True)
class KernelRadii:
    """log|zeta| and log|eta| for one (sigma, tau) ordering."""

    log_zeta: float
    log_eta: float

    @property
    def log_product(self) -> float:
        return self.log_zeta + self.log_eta


def kernel_radii(sigma: int, tau: int, md: ModularData, particle: bool | None = None) -> KernelRadii:
    """Circle radii for the coefficient extraction.

    `particle` selects the annulus 1 < |zeta eta| < 1/t (default for
    sigma <= tau) or t < |zeta eta| < 1 (default for sigma > tau).

    Raises:
        ConfigurationError: If no admissible radii exist
    """
    if particle is None:
        particle = sigma <= tau
    a = -math.log(md.q)
    j_max = lower_index_max(sigma)
    i_min = upper_index_min(tau)
    room = a * (i_min - j_max)
    low, high = (0.0, 2 * md.n * a) if particle else (-2 * md.n * a, 0.0)
    high = min(high, room)
    if not high > low:
        raise ConfigurationError(f"No admissible kernel radii for sigma={sigma}, tau={tau}")
    s = (low + high) / 2
    slack = room - s
    return KernelRadii(-a * j_max - slack / 2, a * i_min - slack / 2)


def _generating_grid(sigma: int, tau: int, md: ModularData, radii: KernelRadii, nodes: int) -> np.ndarray:
    """Values of the kernel generating function on the product of the two circles."""
    angles = np.exp(2j * math.pi * np.arange(nodes) / nodes)
    zeta = math.exp(radii.log_zeta) * angles
    eta = math.exp(radii.log_eta) * angles
    # zeta * eta on the grid only depends on (p + s) mod nodes
    w = math.exp(radii.log_product) * angles
    theta_part = (
        -q_pochhammer(md.t, md.t).real ** 3
        * np.asarray(theta3(md.u * w, md.t))
        / (np.asarray(theta3(-w / math.sqrt(md.t), md.t)) * theta3(md.u, md.t).real)
    )
    f = np.asarray(F_of(sigma, zeta, md))
    g = np.asarray(F_reciprocal(tau, 1.0 / eta, md))
    index = (np.arange(nodes)[:, None] + np.arange(nodes)[None, :]) % nodes
    return f[:, None] * g[None, :] * theta_part[index]


def _coefficients(
    sigma: int,
    tau: int,
    xs: np.ndarray,
    ys: np.ndarray,
    md: ModularData,
    nodes: int,
    particle: bool,
) -> np.ndarray:
    """Coefficients of zeta^{x-1/2} eta^{y-1/2} for x in xs, y in ys at a fixed node count."""
    radii = kernel_radii(sigma, tau, md, particle)
    spectrum = np.fft.fft2(_generating_grid(sigma, tau, md, radii, nodes))
    p = np.round(np.asarray(xs) - 0.5).astype(np.int64)
    s = np.round(np.asarray(ys) - 0.5).astype(np.int64)
    scale = np.exp(-(p[:, None] * radii.log_zeta + s[None, :] * radii.log_eta)) / nodes**2
    return spectrum[p[:, None] % nodes, s[None, :] % nodes] * scale


def kernel_block(
    sigma: int,
    tau: int,
    xs: Sequence[float],
    ys: Sequence[float],
    md: ModularData,
    nodes: int = KERNEL_NODES,
    particle: bool | None = None,
) -> np.ndarray:
    """K(sigma, x; tau, y) for all x in xs, y in ys, with node doubling.

    Args:
        sigma: Column of the first point (1..2N)
        tau: Column of the second point (1..2N)
        xs: Half-integer sites of the first point
        ys: Half-integer sites of the second point
        md: Parameters
        nodes: Initial nodes per circle
        particle: Annulus selection, see `kernel_radii`

    Returns:
        Real array of shape (len(xs), len(ys))
    """
    _check_shift_parameter(md)
    if particle is None:
        particle = sigma <= tau
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    previous = _coefficients(sigma, tau, xs, ys, md, nodes, particle)
    while True:
        nodes *= 2
        current = _coefficients(sigma, tau, xs, ys, md, nodes, particle)
        change = float(np.max(np.abs(current - previous))) if current.size else 0.0
        logger.debug(f"Kernel ({sigma},{tau}) at {nodes} nodes: change {change:.3e}")
        if change < KERNEL_TOLERANCE:
            break
        if nodes >= KERNEL_MAX_NODES:
            logger.warning(
                f"Kernel ({sigma},{tau}) not certified at {nodes} nodes: change {change:.3e}"
            )
            break
        previous = current
    residue = float(np.max(np.abs(current.imag))) if current.size else 0.0
    if residue > 1e-9:
        logger.warning(f"Kernel ({sigma},{tau}) has imaginary residue {residue:.3e}")
    return current.real


def kernel_entry(sigma: int, x: float, tau: int, y: float, md: ModularData, nodes: int = KERNEL_NODES) -> float:
    """Correlation kernel K(sigma, x; tau, y) of the shift-mixed process."""
    return float(kernel_block(sigma, tau, [x], [y], md, nodes)[0, 0])


def hole_kernel_entry(sigma: int, x: float, tau: int, y: float, md: ModularData, nodes: int = KERNEL_NODES) -> float:
    """Expansion on t < |zeta eta| < 1 at any ordering; equals K - delta_{xy} at sigma = tau."""
    return float(kernel_block(sigma, tau, [x], [y], md, nodes, particle=False)[0, 0])


def _block_task(args):
    sigma, tau, sites, md, nodes = args
    return (sigma, tau), kernel_block(sigma, tau, sites, sites, md, nodes)


@dataclass
class KernelCache:
    """Kernel table on a window of sites for every pair of columns."""

    md: ModularData
    window: Sequence[float]
    columns: Sequence[int] | None = None
    nodes: int = KERNEL_NODES
    table: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.window = tuple(float(x) for x in self.window)
        if self.columns is None:
            self.columns = tuple(range(1, 2 * self.md.n + 1))
        self._position = {x: i for i, x in enumerate(self.window)}

    def build(self, threads: int = 1) -> "KernelCache":
        """Fill the table, optionally in a process pool."""
        tasks = [
            (sigma, tau, self.window, self.md, self.nodes)
            for sigma in self.columns
            for tau in self.columns
            if (sigma, tau) not in self.table
        ]
        if threads > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_block_task, tasks))
        else:
            results = [_block_task(task) for task in tasks]
        self.table.update(results)
        logger.info(f"Kernel cache built for {len(self.table)} column pairs")
        return self

    def entry(self, sigma: int, x: float, tau: int, y: float) -> float:
        if (sigma, tau) not in self.table:
            self.table[(sigma, tau)] = kernel_block(sigma, tau, self.window, self.window, self.md, self.nodes)
        try:
            return float(self.table[(sigma, tau)][self._position[float(x)], self._position[float(y)]])
        except KeyError as e:
            raise DomainError(f"Site {e} is outside the cached window") from e

    def correlation(self, points: Sequence[tuple[int, float]]) -> float:
        """det[K(tau_i, x_i; tau_j, x_j)] for the listed (column, site) points."""
        matrix = np.array(
            [[self.entry(si, xi, sj, xj) for sj, xj in points] for si, xi in points]
        )
        return float(np.linalg.det(matrix)) if len(points) else 1.0

    def rows(self):
        for (sigma, tau), block in sorted(self.table.items()):
            for i, x in enumerate(self.window):
                for j, y in enumerate(self.window):
                    yield sigma, x, tau, y, float(block[i, j])

    def dump(self, path: Path, config: dict) -> Path:
        """CSV of (sigma, x, tau, y, K) over the window."""
        return write_csv(path, config, ["sigma", "x", "tau", "y", "K"], self.rows())
