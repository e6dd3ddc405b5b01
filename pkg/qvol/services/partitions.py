import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from qvol.errors import DomainError, MalformedTilingError

logger = logging.getLogger(__name__)

EMPTY_TOKEN = "-"


def _half_integer(x: float) -> int:
    """Return the integer site index m = x - 1/2 of a half-integer x.

    Raises:
        DomainError: If x is not in Z + 1/2
    """
    doubled = 2 * x
    rounded = round(doubled)
    if abs(doubled - rounded) > 1e-9 or rounded % 2 == 0:
        raise DomainError(f"Expected a half-integer, got {x}")
    return (rounded - 1) // 2


@dataclass(frozen=True)
class Partition:
    """Weakly decreasing positive parts; trailing zeros are implicit."""

    parts: tuple[int, ...] = ()

    def __post_init__(self):
        parts = tuple(int(p) for p in self.parts)
        object.__setattr__(self, "parts", parts)
        if any(p < 1 for p in parts):
            raise DomainError(f"Partition parts must be positive: {parts}")
        if any(a < b for a, b in zip(parts, parts[1:])):
            raise DomainError(f"Partition parts must be weakly decreasing: {parts}")

    @classmethod
    def from_parts(cls, parts: Iterable[int]) -> "Partition":
        """Build a partition from parts that may carry trailing zeros."""
        return cls(tuple(int(p) for p in parts if int(p) != 0))

    @property
    def length(self) -> int:
        return len(self.parts)

    @property
    def size(self) -> int:
        return sum(self.parts)

    def part(self, i: int) -> int:
        """1-based part access; zero beyond the length."""
        if i < 1:
            raise DomainError(f"Part index must be positive, got {i}")
        return self.parts[i - 1] if i <= len(self.parts) else 0

    def padded(self, length: int) -> np.ndarray:
        if length < self.length:
            raise DomainError(f"Cannot pad {self.parts} to length {length}")
        out = np.zeros(length, dtype=np.int64)
        out[: self.length] = self.parts
        return out

    def __str__(self) -> str:
        return ",".join(str(p) for p in self.parts) if self.parts else EMPTY_TOKEN


def interlaces(mu: Partition, la: Partition) -> bool:
    """True iff mu ≺ la, i.e. la_1 >= mu_1 >= la_2 >= mu_2 >= ..."""
    for i in range(1, max(mu.length, la.length) + 2):
        if not la.part(i) >= mu.part(i) >= la.part(i + 1):
            return False
    return True


@dataclass(frozen=True)
class ModularData:
    """Parameter bundle (t, N, u) with the derived q = t^{1/2N} and omega."""

    t: float
    n: int
    u: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.t < 1.0:
            raise DomainError(f"t must lie in (0, 1), got {self.t}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"N must be a positive integer, got {self.n}")
        if not self.u > 0.0:
            raise DomainError(f"u must be positive, got {self.u}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "u", float(self.u))

    @property
    def q(self) -> float:
        return self.t ** (1.0 / (2 * self.n))

    @property
    def omega(self) -> complex:
        return complex(0.0, -math.log(self.t) / (2 * math.pi))

    @property
    def columns(self) -> int:
        return 2 * self.n

    def r(self, k: int) -> float:
        """Observable parameter r = q^{2k} = t^{k/N}."""
        return self.t ** (k / self.n)


def slice_column(tau: float, n: int) -> int:
    """Column index floor(2N tau), clamped to 1..2N."""
    return min(max(int(math.floor(2 * n * tau + 1e-12)), 1), 2 * n)


@dataclass(frozen=True, order=True)
class SliceObservable:
    """Slice (tau, k): macroscopic position tau in (0, 1] and exponent k >= 1."""

    tau: float
    k: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise DomainError(f"Slice position must lie in (0, 1], got {self.tau}")
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"Slice exponent must be a positive integer, got {self.k}")
        object.__setattr__(self, "k", int(self.k))

    def column(self, n: int) -> int:
        return slice_column(self.tau, n)


@dataclass(frozen=True)
class CylindricConfig:
    """Cyclically interlacing 2N-tuple of partitions plus a shift."""

    n: int
    lambdas: tuple[Partition, ...]
    shift: int = 0

    def __post_init__(self):
        lambdas = tuple(
            la if isinstance(la, Partition) else Partition.from_parts(la)
            for la in self.lambdas
        )
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "shift", int(self.shift))
        if self.n < 1 or len(lambdas) != 2 * self.n:
            raise MalformedTilingError(
                f"Expected {2 * self.n} columns for N={self.n}, got {len(lambdas)}"
            )
        for c in range(0, 2 * self.n, 2):
            small = lambdas[c]
            for neighbor in (lambdas[c - 1], lambdas[(c + 1) % (2 * self.n)]):
                if not interlaces(small, neighbor):
                    raise MalformedTilingError(
                        f"Column {c + 1} ({small}) does not interlace with its neighbor ({neighbor})"
                    )

    @classmethod
    def empty(cls, n: int, shift: int = 0) -> "CylindricConfig":
        return cls(n, tuple(Partition() for _ in range(2 * n)), shift)

    @classmethod
    def from_columns(cls, n: int, columns: np.ndarray, shift: int = 0) -> "CylindricConfig":
        """Build from a (2N, L) array of zero-padded parts."""
        return cls(n, tuple(Partition.from_parts(row) for row in np.asarray(columns)), shift)

    def column(self, tau: int) -> Partition:
        """Partition in column tau (1-based, taken mod 2N)."""
        return self.lambdas[(tau - 1) % (2 * self.n)]

    def columns_array(self, length: int | None = None) -> np.ndarray:
        if length is None:
            length = max((la.length for la in self.lambdas), default=0)
        return np.stack([la.padded(length) for la in self.lambdas])


@dataclass(frozen=True)
class PointSet:
    """Horizontal-lozenge positions per column.

    Every site below `floor` is occupied in every column; `columns[tau - 1]`
    lists the occupied half-integer sites at or above `floor`.
    """

    n: int
    floor: float
    columns: tuple[tuple[float, ...], ...]


def volume(cfg: CylindricConfig) -> int:
    """Exact volume sum |lambda^(i)| + N S^2."""
    return sum(la.size for la in cfg.lambdas) + cfg.n * cfg.shift**2


def _occupied_indices(la: Partition, shift: int) -> np.ndarray:
    """Site indices m = x - 1/2 of the first l(la) particles, ascending."""
    i = np.arange(1, la.length + 1)
    return np.sort(shift + np.asarray(la.parts, dtype=np.int64) - i)


def heights(la: Partition, shift: int, sites: np.ndarray) -> np.ndarray:
    """Vectorized height at site indices m (y = m + 1/2) for one column."""
    sites = np.asarray(sites, dtype=np.int64)
    low = shift - la.length
    below = np.searchsorted(_occupied_indices(la, shift), sites, side="left")
    return np.where(sites <= low, 0, sites - low - below)


def heights_array(columns: np.ndarray, sites: np.ndarray, shifts: np.ndarray | int = 0) -> np.ndarray:
    """Heights of zero-padded rows (shape (..., L)) at site indices m, shape (..., len(sites))."""
    columns = np.asarray(columns, dtype=np.int64)
    length = columns.shape[-1]
    shifts = np.asarray(shifts, dtype=np.int64)[..., None]
    occupied = columns - np.arange(1, length + 1) + shifts
    sites = np.asarray(sites, dtype=np.int64)
    below = np.sum(occupied[..., None, :] < sites[:, None], axis=-1)
    low = shifts - length
    return np.where(sites <= low, 0, sites - low - below)


def height(cfg: CylindricConfig, tau: int, y: float) -> int:
    """Number of unoccupied sites x < y in column tau.

    Every site below S - l - 1/2 is occupied, so the count starts at the
    first possible hole S - l + 1/2. Far up the value is y - S - 1/2.
    """
    m = _half_integer(y)
    return int(heights(cfg.column(tau), cfg.shift, np.array([m]))[0])


def observable_F(la: Partition, r: float, shift: int = 0) -> float:
    """F_r(la) = sum r^{la_i - i + 1} + r^{-l}/(1 - r^{-1}), times r^S.

    Raises:
        DomainError: If r is not in (0, 1)
    """
    if not 0.0 < r < 1.0:
        raise DomainError(f"r must lie in (0, 1), got {r}")
    ell = la.length
    terms = [r ** (p - i + 1) for i, p in enumerate(la.parts, start=1)]
    terms.append(-(r ** (1 - ell)) / (1.0 - r))
    return math.fsum(terms) * r**shift


def observable_F_array(columns: np.ndarray, r: float, shifts: np.ndarray | int = 0) -> np.ndarray:
    """F_r for zero-padded rows of `columns` (shape (..., L)).

    The closed form tail is taken at each row's own length; at the padded
    length the padding terms r^{1-i} cancel against the tail in floating
    point once r^{1-L} outgrows the result.
    """
    if not 0.0 < r < 1.0:
        raise DomainError(f"r must lie in (0, 1), got {r}")
    columns = np.asarray(columns, dtype=np.float64)
    i = np.arange(1, columns.shape[-1] + 1)
    filled = columns > 0
    lengths = filled.sum(axis=-1)
    terms = np.where(filled, r ** np.where(filled, columns - i + 1, 0.0), 0.0)
    values = terms.sum(axis=-1) - r ** (1.0 - lengths) / (1.0 - r)
    return values * r ** np.asarray(shifts, dtype=np.float64)


def height_observable_sum(la: Partition, r: float, shift: int = 0) -> float:
    """sum_x h(x) r^x over x in Z + 1/2 with the frozen tail summed exactly."""
    if not 0.0 < r < 1.0:
        raise DomainError(f"r must lie in (0, 1), got {r}")
    low = shift - la.length
    top = shift + la.part(1)
    sites = np.arange(low + 1, top)
    finite = heights(la, shift, sites) * r ** (sites + 0.5)
    tail = r ** (top + 0.5) * ((top - shift) / (1.0 - r) + r / (1.0 - r) ** 2)
    return math.fsum(np.append(finite, tail))


def slice_statistic(cfg: CylindricConfig, tau: float, k: int, md: ModularData) -> float:
    """(1/2N) sum_y h(floor(2N tau), y) r^y with r = q^{2k}."""
    if cfg.n != md.n:
        raise DomainError(f"Configuration has N={cfg.n} but parameters have N={md.n}")
    r = md.r(k)
    la = cfg.column(slice_column(tau, cfg.n))
    return -math.sqrt(r) / (1.0 - r) * observable_F(la, r, cfg.shift) / (2 * cfg.n)


def emit_point_set(cfg: CylindricConfig) -> PointSet:
    """Positions S + lambda_i - i + 1/2 per column above a common floor."""
    depth = max((la.length for la in cfg.lambdas), default=0) + 1
    floor = cfg.shift - depth + 0.5
    columns = tuple(
        tuple(cfg.shift + la.part(i) - i + 0.5 for i in range(1, depth + 1))
        for la in cfg.lambdas
    )
    return PointSet(cfg.n, floor, columns)


def shift_of_tiling(point_set: PointSet) -> CylindricConfig:
    """Recover (lambda, S) from horizontal-lozenge positions.

    Raises:
        MalformedTilingError: If the per-column excess over the empty room
            differs between columns, or the columns do not interlace
    """
    floor_index = _half_integer(point_set.floor)
    if len(point_set.columns) != 2 * point_set.n:
        raise MalformedTilingError(
            f"Expected {2 * point_set.n} columns, got {len(point_set.columns)}"
        )
    shifts = set()
    indexed = []
    for tau, sites in enumerate(point_set.columns, start=1):
        try:
            column = sorted({_half_integer(x) for x in sites}, reverse=True)
        except DomainError as e:
            raise MalformedTilingError(f"Column {tau}: {e}") from e
        if column and column[-1] < floor_index:
            raise MalformedTilingError(f"Column {tau} lists a site below the floor")
        # the empty room occupies exactly the sites m <= -1
        shifts.add(len(column) + floor_index)
        indexed.append(column)
    if len(shifts) != 1:
        raise MalformedTilingError(f"Per-column excess is not column independent: {sorted(shifts)}")
    shift = shifts.pop()
    lambdas = tuple(
        Partition.from_parts(m - shift + i for i, m in enumerate(column, start=1))
        for column in indexed
    )
    return CylindricConfig(point_set.n, lambdas, shift)


def format_config(cfg: CylindricConfig) -> str:
    """One-line serialization `N S ; la1 ; la2 ; ...`, empty partition as `-`."""
    return " ; ".join([f"{cfg.n} {cfg.shift}"] + [str(la) for la in cfg.lambdas])


def parse_config(line: str) -> CylindricConfig:
    """Inverse of `format_config`.

    Raises:
        MalformedTilingError: If the line cannot be parsed
    """
    fields = [f.strip() for f in line.strip().split(";")]
    try:
        n_text, shift_text = fields[0].split()
        n, shift = int(n_text), int(shift_text)
        lambdas = tuple(
            Partition() if f == EMPTY_TOKEN else Partition(tuple(int(p) for p in f.split(",")))
            for f in fields[1:]
        )
    except (ValueError, IndexError) as e:
        raise MalformedTilingError(f"Cannot parse configuration line {line!r}: {e}") from e
    return CylindricConfig(n, lambdas, shift)


def columns_interlace(columns: np.ndarray) -> bool:
    """Vectorized cyclic interlacing check for a (2N, L) array of padded parts."""
    columns = np.asarray(columns)
    padded = np.concatenate([columns, np.zeros((columns.shape[0], 1), dtype=columns.dtype)], axis=1)
    if np.any(padded[:, :-1] < padded[:, 1:]) or np.any(columns < 0):
        return False
    small = padded[0::2]
    for large in (np.roll(padded, 1, axis=0)[0::2], np.roll(padded, -1, axis=0)[0::2]):
        if np.any(large[:, :-1] < small[:, :-1]) or np.any(small[:, :-1] < large[:, 1:]):
            return False
    return True


def random_configs(
    n: int, box: int, count: int, rng: np.random.Generator, moves: int = 400
) -> list[CylindricConfig]:
    """Random valid configurations from single-box moves started at the empty room."""
    out = []
    for _ in range(count):
        columns = np.zeros((2 * n, box), dtype=np.int64)
        for _ in range(moves):
            c = int(rng.integers(2 * n))
            i = int(rng.integers(box))
            delta = 1 if rng.random() < 0.5 else -1
            trial = columns.copy()
            trial[c, i] += delta
            if trial[c, i] <= box and columns_interlace(trial):
                columns = trial
        out.append(CylindricConfig.from_columns(n, columns))
    return out


def configs_from_lines(lines: Sequence[str]) -> list[CylindricConfig]:
    return [parse_config(line) for line in lines if line.strip() and not line.startswith("#")]
