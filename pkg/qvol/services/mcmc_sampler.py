import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from qvol.config import (
    BOUNDARY_OCCUPANCY_WARNING,
    BOX_FACTOR,
    DEFAULT_BURN_IN,
    DEFAULT_SEED,
    DEFAULT_SWEEPS,
    DEFAULT_THIN,
    FROZEN_TAIL_TOLERANCE,
    SHIFT_TOLERANCE,
)
from qvol.errors import ConfigurationError, DomainError, InsufficientSamplesError
from qvol.run import write_lines
from qvol.services.limit_shape import limit_shape_partition
from qvol.services.partitions import CylindricConfig, ModularData, format_config, observable_F_array
from qvol.services.special_functions import discrete_gaussian_table, theta3
from qvol.services.stats_harness import integrated_autocorrelation

logger = logging.getLogger(__name__)

INITIAL_STATES = ("limit", "empty")


@dataclass(frozen=True)
class SamplerBox:
    """At most `box_l` parts per column, each at most `box_r`."""

    box_l: int
    box_r: int

    def __post_init__(self):
        if self.box_l < 1 or self.box_r < 1:
            raise DomainError(f"Sampler box must be at least 1x1, got {self.box_l}x{self.box_r}")

    @classmethod
    def default(cls, md: ModularData) -> "SamplerBox":
        """L = ceil(6N) rows; R also covers the frozen tail above the liquid region.

        Far above the liquid region the column-averaged particle density
        is about t^{y/2N}/pi, so the expected number of particles above
        2N y is 2N t^y/(pi |log t|).
        """
        rows = math.ceil(BOX_FACTOR * md.n)
        log_t = math.log(md.t)
        tail = math.log(FROZEN_TAIL_TOLERANCE * math.pi * abs(log_t) / (2 * md.n)) / log_t
        return cls(rows, max(rows, math.ceil(2 * md.n * tail)))


@dataclass(frozen=True)
class DiscreteGaussianSpec:
    """Law of the shift: P(S = s) proportional to exp(-C (s - m)^2) on a finite support."""

    mean: float
    curvature: float
    shifts: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)

    @classmethod
    def from_modular(cls, md: ModularData, tol: float = SHIFT_TOLERANCE) -> "DiscreteGaussianSpec":
        """m = -log u/log t and C = |log t|/2, i.e. weights u^S t^{S^2/2}."""
        table = discrete_gaussian_table(md.u, md.t, tol)
        expected = theta3(md.u, md.t).real
        if abs(table.normalizer / expected - 1.0) > 1e-10:
            logger.warning(f"Shift normalizer {table.normalizer} differs from theta_3(u; t) = {expected}")
        log_t = math.log(md.t)
        return cls(-math.log(md.u) / log_t, abs(log_t) / 2, table.shifts, np.cumsum(table.probabilities))


def sample_shift(spec: DiscreteGaussianSpec, rng: np.random.Generator, size: int | None = None):
    """Inverse-CDF draw from the shift table."""
    draws = np.searchsorted(spec.cdf, rng.random(size) * spec.cdf[-1], side="right")
    values = spec.shifts[np.minimum(draws, len(spec.shifts) - 1)]
    return int(values) if size is None else values.astype(np.int64)


@dataclass
class ChainState:
    """Mutable (2N, L) array of padded parts with its sweep counters.

    Row c holds the partition in column c + 1, so rows 0, 2, ... are the
    small columns.
    """

    md: ModularData
    box: SamplerBox
    columns: np.ndarray
    rng: np.random.Generator
    sweeps: int = 0
    proposals: int = 0
    accepted: int = 0

    @classmethod
    def start(
        cls, md: ModularData, box: SamplerBox, rng: np.random.Generator, init: str = "limit"
    ) -> "ChainState":
        """Warm start from the rounded limit shape, or the empty configuration."""
        if init not in INITIAL_STATES:
            raise ConfigurationError(f"Unknown initial state {init!r}, expected one of {INITIAL_STATES}")
        if init == "limit":
            row = limit_shape_partition(md, box.box_l, box.box_r).padded(box.box_l)
        else:
            row = np.zeros(box.box_l, dtype=np.int64)
        columns = np.tile(np.asarray(row, dtype=np.int64), (2 * md.n, 1))
        return cls(md, box, columns, rng)

    def config(self, shift: int = 0) -> CylindricConfig:
        return CylindricConfig.from_columns(self.md.n, self.columns, shift)

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0


def _bounds_small(columns: np.ndarray, box: SamplerBox) -> tuple[np.ndarray, np.ndarray]:
    """Admissible range of every small-column part given both large neighbors."""
    zero = np.zeros((columns.shape[0] // 2, 1), dtype=columns.dtype)
    left = np.roll(columns, 1, axis=0)[0::2]
    right = columns[1::2]
    upper = np.minimum(left, right)
    lower = np.maximum(
        np.concatenate([left[:, 1:], zero], axis=1), np.concatenate([right[:, 1:], zero], axis=1)
    )
    return lower, np.minimum(upper, box.box_r)


def _bounds_large(columns: np.ndarray, box: SamplerBox) -> tuple[np.ndarray, np.ndarray]:
    """Admissible range of every large-column part given both small neighbors."""
    left = columns[0::2]
    right = np.roll(columns, -1, axis=0)[1::2]
    lower = np.maximum(left, right)
    ceiling = np.full((columns.shape[0] // 2, 1), box.box_r, dtype=columns.dtype)
    upper = np.concatenate([ceiling, np.minimum(left, right)[:, :-1]], axis=1)
    return lower, np.minimum(upper, box.box_r)


def _site_bounds(state: ChainState, c: int, i: int) -> tuple[int, int]:
    lower, upper = (_bounds_small if c % 2 == 0 else _bounds_large)(state.columns, state.box)
    return int(lower[c // 2, i]), int(upper[c // 2, i])


def step(state: ChainState) -> bool:
    """One random-scan Metropolis move on a single part.

    A uniformly chosen part is moved by +1 or -1; adding a box is accepted
    with probability q and removing one always, provided interlacing and
    the box still hold.
    """
    c = int(state.rng.integers(state.columns.shape[0]))
    i = int(state.rng.integers(state.box.box_l))
    delta = 1 if state.rng.random() < 0.5 else -1
    value = state.columns[c, i] + delta
    lower, upper = _site_bounds(state, c, i)
    state.proposals += 1
    if not lower <= value <= upper:
        return False
    if delta > 0 and state.rng.random() >= state.md.q:
        return False
    state.columns[c, i] = value
    state.accepted += 1
    return True


def _update_parity(state: ChainState, parity: int) -> None:
    bounds = _bounds_small if parity == 0 else _bounds_large
    lower, upper = bounds(state.columns, state.box)
    current = state.columns[parity::2]
    delta = np.where(state.rng.random(current.shape) < 0.5, 1, -1)
    proposed = current + delta
    accept = (proposed >= lower) & (proposed <= upper)
    accept &= (delta < 0) | (state.rng.random(current.shape) < state.md.q)
    state.columns[parity::2] = np.where(accept, proposed, current)
    state.proposals += current.size
    state.accepted += int(accept.sum())


def sweep(state: ChainState) -> None:
    """Checkerboard sweep: every small-column part, then every large-column part.

    Parts of one parity only constrain each other through the other parity,
    so each half is a product of independent single-site moves.
    """
    _update_parity(state, 0)
    _update_parity(state, 1)
    state.sweeps += 1


@dataclass
class ChainResult:
    """Thinned samples of one chain with its diagnostics."""

    md: ModularData
    box: SamplerBox
    samples: np.ndarray
    shifts: np.ndarray
    statistic: np.ndarray
    acceptance: float
    boundary_occupancy: float
    iat: float

    @property
    def count(self) -> int:
        return len(self.samples)

    def configs(self, shifted: bool = False):
        for columns, shift in zip(self.samples, self.shifts):
            yield CylindricConfig.from_columns(self.md.n, columns, int(shift) if shifted else 0)

    def stream_lines(self, shifted: bool = False):
        return (format_config(cfg) for cfg in self.configs(shifted))


def slice_statistic_series(samples: np.ndarray, md: ModularData, k: int = 1, column: int | None = None) -> np.ndarray:
    """(1/2N) sum_y h(y) r^y of one column for every stored sample; the last column by default."""
    if column is None:
        column = 2 * md.n
    r = md.r(k)
    values = observable_F_array(np.asarray(samples)[:, column - 1, :], r)
    return -math.sqrt(r) / (1.0 - r) / (2 * md.n) * values


def _boundary_hits(columns: np.ndarray, box: SamplerBox) -> float:
    """Fraction of columns touching the top or bottom wall of the box."""
    top = columns[:, 0] >= box.box_r
    bottom = columns[:, -1] > 0
    return float(np.mean(top | bottom))


def run(
    md: ModularData,
    box: SamplerBox | None = None,
    sweeps: int = DEFAULT_SWEEPS,
    burn_in: int = DEFAULT_BURN_IN,
    thin: int = DEFAULT_THIN,
    seed: int | np.random.SeedSequence = DEFAULT_SEED,
    init: str = "limit",
    progress: bool = False,
) -> ChainResult:
    """Run one chain and keep every `thin`-th configuration after burn-in.

    Args:
        md: Parameters; the shift law uses md.u
        box: Sampler box, `SamplerBox.default(md)` if omitted
        sweeps: Sweeps after burn-in
        burn_in: Discarded sweeps
        thin: Sweeps between stored samples
        seed: Integer seed or a spawned SeedSequence
        init: "limit" for the warm start, "empty" for the empty room
        progress: Show a tqdm bar

    Returns:
        ChainResult with sweeps // thin samples

    Raises:
        ConfigurationError: If the sweep counts are inconsistent
    """
    if sweeps < 1 or burn_in < 0 or thin < 1:
        raise ConfigurationError(f"Invalid sweep counts: sweeps={sweeps}, burn_in={burn_in}, thin={thin}")
    if sweeps < thin:
        raise ConfigurationError(f"{sweeps} sweeps store no sample at thinning {thin}")
    box = box or SamplerBox.default(md)
    rng = np.random.default_rng(seed)
    state = ChainState.start(md, box, rng, init)
    shift_spec = DiscreteGaussianSpec.from_modular(md)
    logger.debug(f"Chain for N={md.n}, t={md.t} in the {box.box_l}x{box.box_r} box")

    samples = np.empty((sweeps // thin, 2 * md.n, box.box_l), dtype=np.int32)
    hits = 0.0
    stored = 0
    for n in tqdm(range(burn_in + sweeps), desc="sweeps", disable=not progress, leave=False):
        sweep(state)
        if n < burn_in:
            continue
        hits += _boundary_hits(state.columns, box)
        if (n - burn_in + 1) % thin == 0:
            samples[stored] = state.columns
            stored += 1

    occupancy = hits / sweeps
    if occupancy > BOUNDARY_OCCUPANCY_WARNING:
        logger.warning(
            f"Box {box.box_l}x{box.box_r} walls occupied in {occupancy:.2e} of column sweeps; enlarge the box"
        )
    statistic = slice_statistic_series(samples, md)
    try:
        iat = integrated_autocorrelation(statistic)
    except InsufficientSamplesError as e:
        logger.warning(f"Failed to estimate the autocorrelation time: {e}")
        iat = math.nan
    return ChainResult(
        md=md,
        box=box,
        samples=samples,
        shifts=sample_shift(shift_spec, rng, len(samples)),
        statistic=statistic,
        acceptance=state.acceptance,
        boundary_occupancy=occupancy,
        iat=iat,
    )


def _chain_task(args) -> tuple[int, ChainResult]:
    index, md, box, sweeps, burn_in, thin, seed, init = args
    return index, run(md, box, sweeps, burn_in, thin, seed, init)


def run_chains(
    md: ModularData,
    chains: int = 1,
    box: SamplerBox | None = None,
    sweeps: int = DEFAULT_SWEEPS,
    burn_in: int = DEFAULT_BURN_IN,
    thin: int = DEFAULT_THIN,
    seed: int = DEFAULT_SEED,
    init: str = "limit",
    threads: int = 1,
) -> list[ChainResult]:
    """Independent chains seeded from SeedSequence(seed).spawn(chains), in chain order.

    The results do not depend on `threads`.
    """
    if chains < 1:
        raise ConfigurationError(f"Need at least one chain, got {chains}")
    box = box or SamplerBox.default(md)
    children = np.random.SeedSequence(seed).spawn(chains)
    tasks = [(i, md, box, sweeps, burn_in, thin, child, init) for i, child in enumerate(children)]
    results: dict[int, ChainResult] = {}
    if threads > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_chain_task, task) for task in tasks]
            for future in tqdm(as_completed(futures), total=len(futures), desc="chains"):
                index, result = future.result()
                results[index] = result
    else:
        for task in tqdm(tasks, desc="chains", disable=chains == 1):
            index, result = _chain_task(task)
            results[index] = result
    ordered = [results[i] for i in range(chains)]
    logger.info(
        f"Ran {chains} chain(s): {sum(r.count for r in ordered)} samples, "
        f"acceptance {np.mean([r.acceptance for r in ordered]):.3f}"
    )
    return ordered


def dump_samples(path: Path, config: dict, results: list[ChainResult], shifted: bool = False) -> Path:
    """One configuration line per stored sample, chains concatenated."""
    return write_lines(path, config, (line for result in results for line in result.stream_lines(shifted)))
