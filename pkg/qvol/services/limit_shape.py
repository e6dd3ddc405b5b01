import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

from qvol.errors import DomainError
from qvol.run import write_csv
from qvol.services.partitions import ModularData, Partition

logger = logging.getLogger(__name__)

GRID_COLUMNS = ["tau", "y", "H", "H_prime", "re_zeta", "im_zeta", "re_eta", "im_eta"]
BOUNDARY_TOLERANCE = 1e-12


def liquid_lower_edge(t: float) -> float:
    """log 2 / log t, where t^{2y} = 4."""
    if not 0.0 < t < 1.0:
        raise DomainError(f"t must lie in (0, 1), got {t}")
    return math.log(2.0) / math.log(t)


@dataclass(frozen=True)
class LiquidPoint:
    """Point (tau, y) of the liquid region 0 < t^{2y} < 4."""

    tau: float
    y: float

    def check(self, t: float) -> None:
        """Raises DomainError unless the point is strictly inside the liquid region for t."""
        if not 0.0 < self.tau <= 1.0:
            raise DomainError(f"tau must lie in (0, 1], got {self.tau}")
        gap = 4.0 - t ** (2 * self.y)
        if gap < -BOUNDARY_TOLERANCE:
            raise DomainError(f"({self.tau}, {self.y}) lies in the frozen region for t={t}")
        if gap <= BOUNDARY_TOLERANCE:
            raise DomainError(f"({self.tau}, {self.y}) is on the liquid boundary; zeta is degenerate")


def H_prime(y, t: float):
    """2 arctan(sqrt(4 t^{-2y} - 1))/pi above log 2/log t, zero below."""
    y = np.asarray(y, dtype=np.float64)
    exponent = np.minimum(-2.0 * y * math.log(t), 700.0)
    inside = np.maximum(4.0 * np.exp(exponent) - 1.0, 0.0)
    value = np.where(y > liquid_lower_edge(t), 2.0 * np.arctan(np.sqrt(inside)) / math.pi, 0.0)
    return value.item() if value.ndim == 0 else value


def limit_shape_H(y, t: float):
    """H(y) = integral of H' from the liquid lower edge; zero below it.

    Evaluated on the sorted points with one adaptive quadrature per gap.
    """
    y = np.asarray(y, dtype=np.float64)
    flat = y.ravel()
    order = np.argsort(flat)
    edge = liquid_lower_edge(t)
    values = np.zeros_like(flat)
    running, left = 0.0, edge
    for position in order:
        right = flat[position]
        if right > left:
            piece, _ = integrate.quad(lambda s: H_prime(s, t), left, right, epsabs=1e-13, epsrel=1e-12, limit=200)
            running += piece
            left = right
        values[position] = running
    values = values.reshape(y.shape)
    return values.item() if values.ndim == 0 else values


def zeta_map(p: LiquidPoint, t: float) -> complex:
    """zeta = t^{-tau} (2 - t^{2y} + i sqrt(4 t^{2y} - t^{4y}))/2, in the upper half-plane on |zeta| = t^{-tau}."""
    p.check(t)
    a = t ** (2 * p.y)
    return t ** (-p.tau) * complex(2.0 - a, math.sqrt(4 * a - a * a)) / 2.0


def eta_map(p: LiquidPoint, t: float) -> complex:
    """eta = (1/2 pi i) log(t^{2 tau} zeta) with the argument in (0, pi]."""
    zeta = zeta_map(p, t)
    argument = t ** (2 * p.tau) * zeta
    log = complex(math.log(abs(argument)), math.atan2(argument.imag, argument.real))
    return log / (2j * math.pi)


def ko_conformal_check(p: LiquidPoint, t: float) -> float:
    """Largest residual of |z| = 1, (1 - 1/z)(1 - z) = t^{2y} and Q = (t^{-y'}(1 - z))^2 + t^{-tau} z = 0.

    Here z = t^tau zeta and y' = y + tau/2.
    """
    z = t**p.tau * zeta_map(p, t)
    shifted = p.y + p.tau / 2
    q_residual = abs((t ** (-shifted) * (1 - z)) ** 2 + t ** (-p.tau) * z)
    return max(
        q_residual,
        abs(abs(z) - 1.0),
        abs((1 - 1 / z) * (1 - z) - t ** (2 * p.y)),
    )


@dataclass(frozen=True)
class LozengeDensities:
    """Local proportions of the three lozenge types; they sum to one."""

    horizontal: float
    left: float
    right: float


def lozenge_densities(p: LiquidPoint, t: float) -> LozengeDensities:
    """Angles of the triangle (0, 1, z) over pi; the horizontal one is arg z / pi = 1 - H'."""
    z = t**p.tau * zeta_map(p, t)
    at_zero = abs(np.angle(z))
    at_one = abs(np.angle((z - 1) / -1.0))
    return LozengeDensities(at_zero / math.pi, at_one / math.pi, 1.0 - (at_zero + at_one) / math.pi)


def dirichlet_energy(t: float) -> float:
    """(pi/2) times the integral of |grad g|^2 for g = 2x over (0, 1/2) x (0, |log t|/2 pi).

    The gradient is taken by central differences; the closed form is |log t|/2.
    """
    if not 0.0 < t < 1.0:
        raise DomainError(f"t must lie in (0, 1), got {t}")
    height = -math.log(t) / (2 * math.pi)
    step = 1e-4

    def g(x, y):
        return 2.0 * x

    def gradient_squared(y, x):
        gx = (g(x + step, y) - g(x - step, y)) / (2 * step)
        gy = (g(x, y + step) - g(x, y - step)) / (2 * step)
        return gx * gx + gy * gy

    value, _ = integrate.dblquad(gradient_squared, 0.0, 0.5, 0.0, height, epsabs=1e-13, epsrel=1e-12)
    energy = math.pi / 2 * value
    if abs(energy + math.log(t) / 2) > 1e-8:
        logger.warning(f"Dirichlet energy {energy} differs from |log t|/2 = {-math.log(t) / 2}")
    return energy


def limit_shape_heights(md: ModularData, sites: np.ndarray) -> np.ndarray:
    """Rounded heights max(0, floor(2N H(y/2N) - 1/2)) at half-integer sites y."""
    scaled = 2 * md.n * np.asarray(limit_shape_H(np.asarray(sites, dtype=np.float64) / (2 * md.n), md.t))
    return np.maximum(0, np.floor(scaled - 0.5 + 1e-9)).astype(np.int64)


def limit_shape_partition(md: ModularData, box_l: int, box_r: int) -> Partition:
    """Partition whose height profile is the rounded limit shape, clipped to the box.

    Sites where the rounded height does not increase carry particles; the
    i-th particle from the top at x_i gives lambda_i = x_i + i - 1/2.
    """
    sites = np.arange(-box_l - 1, box_r + 2) + 0.5
    heights = limit_shape_heights(md, sites)
    occupied = sites[:-1][np.diff(heights) == 0][::-1]
    parts = np.zeros(box_l, dtype=np.int64)
    count = min(box_l, len(occupied))
    parts[:count] = occupied[:count] + np.arange(1, count + 1) - 0.5
    parts = np.minimum.accumulate(np.clip(parts, 0, box_r))
    return Partition.from_parts(parts)


def limit_shape_grid(t: float, taus: Sequence[float], ys: Sequence[float]) -> list[list[float]]:
    """Rows (tau, y, H, H', Re zeta, Im zeta, Re eta, Im eta); zeta and eta are NaN off the liquid region."""
    heights = limit_shape_H(np.asarray(ys, dtype=np.float64), t)
    slopes = H_prime(np.asarray(ys, dtype=np.float64), t)
    rows = []
    for tau in taus:
        for y, h, slope in zip(ys, np.atleast_1d(heights), np.atleast_1d(slopes)):
            try:
                point = LiquidPoint(tau, float(y))
                zeta, eta = zeta_map(point, t), eta_map(point, t)
            except DomainError:
                zeta = eta = complex(math.nan, math.nan)
            rows.append([tau, float(y), float(h), float(slope), zeta.real, zeta.imag, eta.real, eta.imag])
    return rows


def dump_grid(path: Path, config: dict, rows: Sequence[Sequence[float]]) -> Path:
    return write_csv(path, config, GRID_COLUMNS, rows)
