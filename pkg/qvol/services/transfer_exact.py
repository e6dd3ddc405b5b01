import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import comb

from qvol.config import MAX_CONFIGS, MAX_STATES, SHIFT_TOLERANCE, TAIL_TARGET
from qvol.errors import DomainError, ResourceError
from qvol.run import write_csv
from qvol.services.partitions import (
    CylindricConfig,
    ModularData,
    Partition,
    SliceObservable,
    format_config,
    observable_F_array,
)
from qvol.services.special_functions import DiscreteGaussianTable, discrete_gaussian_table

logger = logging.getLogger(__name__)


def _box_partitions(length: int, largest: int) -> Iterator[tuple[int, ...]]:
    """All weakly decreasing tuples of `length` parts in 0..largest, by size then reverse lexicographic."""

    def extend(prefix: tuple[int, ...], bound: int):
        if len(prefix) == length:
            yield prefix
            return
        for part in range(bound, -1, -1):
            yield from extend(prefix + (part,), part)

    return iter(sorted(extend((), largest), key=lambda p: (sum(p), [-x for x in p])))


@dataclass(frozen=True)
class BoxTruncation:
    """All partitions with at most box_l parts, each at most box_r."""

    box_l: int
    box_r: int
    parts: np.ndarray = field(init=False, repr=False, compare=False)
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.box_l < 0 or self.box_r < 0:
            raise DomainError(f"Box sizes must be nonnegative, got {self.box_l}x{self.box_r}")
        count = int(comb(self.box_l + self.box_r, self.box_l, exact=True))
        if count > MAX_STATES:
            raise ResourceError(
                f"Box {self.box_l}x{self.box_r} has {count} states, above the cap of {MAX_STATES}"
            )
        rows = list(_box_partitions(self.box_l, self.box_r))
        parts = np.array(rows, dtype=np.int64).reshape(len(rows), self.box_l)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "index", {row: i for i, row in enumerate(rows)})

    @property
    def size(self) -> int:
        return len(self.parts)

    @property
    def sizes(self) -> np.ndarray:
        return self.parts.sum(axis=1)

    @property
    def states(self) -> list[Partition]:
        return [Partition.from_parts(row) for row in self.parts]

    def lookup(self, la: Partition) -> int:
        """Index of a partition; DomainError if it does not fit in the box."""
        if la.length > self.box_l or la.part(1) > self.box_r:
            raise DomainError(f"Partition {la} does not fit in the {self.box_l}x{self.box_r} box")
        return self.index[tuple(la.padded(self.box_l))]

    def occupied(self, x: float) -> np.ndarray:
        """Indicator per state that site x lies in {la_i - i + 1/2}."""
        m = x - 0.5
        if m <= -self.box_l - 1:
            return np.ones(self.size, dtype=bool)
        i = np.arange(1, self.box_l + 1)
        return np.any(self.parts - i == m, axis=1)


def interlacing_matrix(trunc: BoxTruncation) -> np.ndarray:
    """Boolean matrix B[mu, la] = 1{mu ≺ la} over the box states."""
    parts = trunc.parts
    shifted = np.concatenate([parts[:, 1:], np.zeros((trunc.size, 1), dtype=np.int64)], axis=1)
    out = np.empty((trunc.size, trunc.size), dtype=bool)
    chunk = max(1, 2_000_000 // max(1, trunc.size * max(trunc.box_l, 1)))
    for start in range(0, trunc.size, chunk):
        mu = parts[start : start + chunk, None, :]
        out[start : start + chunk] = np.all(
            (parts[None, :, :] >= mu) & (mu >= shifted[None, :, :]), axis=2
        )
    return out


def transfer_matrix(trunc: BoxTruncation, md: ModularData) -> np.ndarray:
    """A[mu, la] = 1{mu ≺ la} q^{(|mu| + |la|)/2}."""
    half = md.q ** (trunc.sizes / 2.0)
    return interlacing_matrix(trunc) * np.outer(half, half)


def transfer_operators(trunc: BoxTruncation, md: ModularData) -> list[np.ndarray]:
    """The 2N factors around the cycle: A from odd to even columns, A^T from even to odd."""
    a = transfer_matrix(trunc, md)
    return [a if c % 2 == 1 else a.T for c in range(1, 2 * md.n + 1)]


def _cycle_product(operators: Sequence[np.ndarray], start: int = 0) -> np.ndarray:
    product = np.eye(operators[0].shape[0])
    count = len(operators)
    for c in range(count):
        product = product @ operators[(start + c) % count]
    return product


def partition_function(trunc: BoxTruncation, md: ModularData) -> float:
    """Z = tr((A A^T)^N) over the box."""
    a = transfer_matrix(trunc, md)
    return float(np.trace(np.linalg.matrix_power(a @ a.T, md.n)))


def partition_function_rotated(trunc: BoxTruncation, md: ModularData, rotation: int) -> float:
    """Trace of the cycle product started at column `rotation + 1`."""
    return float(np.trace(_cycle_product(transfer_operators(trunc, md), rotation)))


def _shift_table(md: ModularData) -> DiscreteGaussianTable:
    return discrete_gaussian_table(md.u, md.t, SHIFT_TOLERANCE)


def config_count(trunc: BoxTruncation, n: int) -> float:
    """Number of cyclically interlacing 2N-tuples in the box (as a float estimate)."""
    b = interlacing_matrix(trunc).astype(np.float64)
    return float(np.trace(np.linalg.matrix_power(b @ b.T, n)))


def enumerate_configs(
    trunc: BoxTruncation, md: ModularData, with_shift: bool = False
) -> list[tuple[CylindricConfig, float]]:
    """Every configuration of the box with its exact probability.

    Args:
        trunc: State box
        md: Parameters
        with_shift: Mix over S from the truncated discrete Gaussian table

    Returns:
        List of (configuration, probability); probabilities sum to one

    Raises:
        ResourceError: If the number of configurations exceeds MAX_CONFIGS
    """
    operators = transfer_operators(trunc, md)
    table = _shift_table(md) if with_shift else None
    count = config_count(trunc, md.n) * (len(table.shifts) if table is not None else 1)
    if count > MAX_CONFIGS:
        raise ResourceError(
            f"Enumeration of the {trunc.box_l}x{trunc.box_r} box needs {count:.3g} configurations, above {MAX_CONFIGS}"
        )

    neighbors = [[np.flatnonzero(m[a]) for a in range(trunc.size)] for m in operators]
    weights = md.q ** trunc.sizes.astype(np.float64)
    states = trunc.states
    columns = 2 * md.n
    found: list[tuple[tuple[int, ...], float]] = []

    def walk(path: list[int], weight: float):
        if len(path) == columns:
            if operators[-1][path[-1], path[0]] > 0:
                found.append((tuple(path), weight))
            return
        for b in neighbors[len(path) - 1][path[-1]]:
            path.append(int(b))
            walk(path, weight * weights[b])
            path.pop()

    for a in range(trunc.size):
        walk([a], weights[a])

    total = math.fsum(w for _, w in found)
    shifts = [(0, 1.0)] if table is None else list(zip(table.shifts.tolist(), table.probabilities))
    out = []
    for path, weight in found:
        lambdas = tuple(states[i] for i in path)
        for s, p_shift in shifts:
            out.append((CylindricConfig(md.n, lambdas, s), weight / total * p_shift))
    logger.debug(f"Enumerated {len(out)} configurations in the {trunc.box_l}x{trunc.box_r} box")
    return out


def exact_sample(
    trunc: BoxTruncation, md: ModularData, rng: np.random.Generator, shifted: bool = False
) -> CylindricConfig:
    """Exact draw by forward-backward sampling on the cycle.

    The first column is drawn from the diagonal of the cycle product; the
    remaining columns follow from the suffix products closed back onto it.
    """
    operators = transfer_operators(trunc, md)
    columns = len(operators)
    suffix = [np.eye(trunc.size)] * (columns + 1)
    for c in range(columns - 1, -1, -1):
        suffix[c] = operators[c] @ suffix[c + 1]

    def draw(weights: np.ndarray) -> int:
        weights = np.clip(weights, 0.0, None)
        return int(rng.choice(len(weights), p=weights / weights.sum()))

    first = draw(np.diag(suffix[0]).copy())
    path = [first]
    for c in range(1, columns):
        path.append(draw(operators[c - 1][path[-1]] * suffix[c][:, first]))
    shift = 0
    if shifted:
        table = _shift_table(md)
        shift = int(rng.choice(table.shifts, p=table.probabilities))
    states = trunc.states
    return CylindricConfig(md.n, tuple(states[i] for i in path), shift)


def _insertion_trace(operators: Sequence[np.ndarray], diagonals: dict[int, np.ndarray]) -> float:
    """tr(D_1 M_1 D_2 M_2 ... D_2N M_2N) with D_c = 1 where no insertion is given."""
    product = np.eye(operators[0].shape[0])
    for c, m in enumerate(operators, start=1):
        if c in diagonals:
            product = product * diagonals[c][None, :]
        product = product @ m
    return float(np.trace(product))


def _correlation(trunc: BoxTruncation, operators, z: float, points, shift: int) -> float:
    diagonals: dict[int, np.ndarray] = {}
    for tau, x in points:
        c = (tau - 1) % len(operators) + 1
        mask = trunc.occupied(x - shift).astype(np.float64)
        diagonals[c] = diagonals.get(c, 1.0) * mask
    return _insertion_trace(operators, diagonals) / z


def exact_correlation(
    trunc: BoxTruncation,
    md: ModularData,
    points: Sequence[tuple[int, float]],
    shifted: bool = False,
) -> float:
    """Probability that every (column, site) in `points` carries a horizontal lozenge."""
    operators = transfer_operators(trunc, md)
    z = _insertion_trace(operators, {})
    if not shifted:
        return _correlation(trunc, operators, z, points, 0)
    table = _shift_table(md)
    return math.fsum(
        p * _correlation(trunc, operators, z, points, int(s))
        for s, p in zip(table.shifts, table.probabilities)
    )


def exact_observable_expectation(
    trunc: BoxTruncation,
    md: ModularData,
    slices: Sequence[SliceObservable],
    shifted: bool = False,
) -> float:
    """E[prod F_{r_i}(lambda^(tau_i))] with r_i = q^{2 k_i}, times r_i^S when shifted."""
    operators = transfer_operators(trunc, md)
    diagonals: dict[int, np.ndarray] = {}
    for s in slices:
        c = s.column(md.n)
        values = observable_F_array(trunc.parts, md.r(s.k))
        diagonals[c] = diagonals.get(c, 1.0) * values
    value = _insertion_trace(operators, diagonals) / _insertion_trace(operators, {})
    if shifted:
        table = _shift_table(md)
        product = math.prod(md.r(s.k) for s in slices)
        value *= float(np.dot(table.probabilities, product ** table.shifts.astype(np.float64)))
    return value


def truncation_tail(trunc: BoxTruncation, md: ModularData) -> float:
    """Z_{L+2,R+2}/Z_{L,R} - 1, the reported truncation tail bound."""
    larger = BoxTruncation(trunc.box_l + 2, trunc.box_r + 2)
    return partition_function(larger, md) / partition_function(trunc, md) - 1.0


def default_truncation(md: ModularData) -> BoxTruncation:
    """Square box with 2N q^L below TAIL_TARGET, capped at the largest box within MAX_STATES."""
    side = max(1, math.ceil(math.log(TAIL_TARGET / (2 * md.n)) / math.log(md.q)))
    largest = 0
    while comb(2 * (largest + 1), largest + 1, exact=True) <= MAX_STATES:
        largest += 1
    if side > largest:
        logger.warning(f"Box side {side} exceeds the state cap; using {largest}")
        side = largest
    logger.debug(f"Default truncation for N={md.n}, t={md.t}: {side}x{side}")
    return BoxTruncation(side, side)


def dump_configs(path: Path, config: dict, rows: Sequence[tuple[CylindricConfig, float]]) -> Path:
    """CSV of (configuration line, probability) for audit."""
    return write_csv(path, config, ["config", "probability"], ((format_config(c), p) for c, p in rows))
