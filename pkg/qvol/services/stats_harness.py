import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from qvol.config import BATCHES, CHI_SQUARE_LEVEL, MIN_EXPECTED_COUNT, NORMALITY_Z_LIMIT
from qvol.errors import DomainError, InsufficientSamplesError
from qvol.run import write_csv
from qvol.services.limit_shape import limit_shape_H
from qvol.services.partitions import ModularData, SliceObservable, heights_array, observable_F_array

logger = logging.getLogger(__name__)

PROFILE_COLUMNS = ["y", "mean_h", "stderr", "H"]
SLICE_COLUMNS = ["tau", "k", "mean", "mean_stderr", "variance", "variance_stderr", "kappa3", "kappa3_stderr", "iat"]


@dataclass(frozen=True)
class BatchEstimate:
    """Mean over the first axis with its batch-means standard error."""

    mean: np.ndarray
    error: np.ndarray
    iat: np.ndarray
    batches: int


def batch_means(values, batches: int = BATCHES) -> BatchEstimate:
    """Split the series into equal batches and use the spread of their means as the error.

    Args:
        values: Array whose first axis is the sample index
        batches: Number of batches; the tail that does not fill a batch is dropped

    Returns:
        BatchEstimate with the integrated autocorrelation time batch_size * var(batch means)/var

    Raises:
        InsufficientSamplesError: If there are fewer than two samples per batch
    """
    values = np.asarray(values, dtype=np.float64)
    size = len(values) // batches
    if batches < 2 or size < 2:
        raise InsufficientSamplesError(f"{len(values)} samples do not fill {batches} batches of two")
    used = values[: size * batches]
    means = used.reshape((batches, size) + used.shape[1:]).mean(axis=1)
    spread = means.var(axis=0, ddof=1)
    variance = used.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        iat = np.where(variance > 0, size * spread / variance, 1.0)
    return BatchEstimate(used.mean(axis=0), np.sqrt(spread / batches), iat, batches)


def integrated_autocorrelation(series, batches: int = BATCHES) -> float:
    """Batch-means estimate of the integrated autocorrelation time of a scalar series."""
    return float(batch_means(series, batches).iat)


@dataclass
class SliceStatistic:
    """Per-sample values of (1/2N) sum_y h(floor(2N tau), y) r^y for one slice."""

    slice: SliceObservable
    values: np.ndarray

    @classmethod
    def from_samples(
        cls, samples: np.ndarray, md: ModularData, s: SliceObservable, shifts: np.ndarray | None = None
    ) -> "SliceStatistic":
        r = md.r(s.k)
        columns = np.asarray(samples)[:, s.column(md.n) - 1, :]
        values = observable_F_array(columns, r, 0 if shifts is None else shifts)
        return cls(s, -math.sqrt(r) / (1.0 - r) / (2 * md.n) * values)

    def merge(self, other: "SliceStatistic") -> "SliceStatistic":
        """Concatenate the samples of another chain for the same slice."""
        if other.slice != self.slice:
            raise DomainError(f"Cannot merge statistics of {self.slice} and {other.slice}")
        return SliceStatistic(self.slice, np.concatenate([self.values, other.values]))

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def centered(self) -> np.ndarray:
        return self.values - self.values.mean()

    def mean(self, batches: int = BATCHES) -> BatchEstimate:
        return batch_means(self.values, batches)

    def variance(self, batches: int = BATCHES) -> BatchEstimate:
        return batch_means(self.centered**2, batches)

    def third_cumulant(self, batches: int = BATCHES) -> BatchEstimate:
        return batch_means(self.centered**3, batches)

    def row(self, batches: int = BATCHES) -> list:
        mean, variance, third = self.mean(batches), self.variance(batches), self.third_cumulant(batches)
        return [
            self.slice.tau,
            self.slice.k,
            float(mean.mean),
            float(mean.error),
            float(variance.mean),
            float(variance.error),
            float(third.mean),
            float(third.error),
            float(mean.iat),
        ]


@dataclass(frozen=True)
class HeightProfile:
    tau: float
    ys: np.ndarray
    means: np.ndarray
    errors: np.ndarray
    limit: np.ndarray

    @property
    def sup_distance(self) -> float:
        return float(np.max(np.abs(self.means - self.limit)))

    def rows(self):
        return zip(self.ys.tolist(), self.means.tolist(), self.errors.tolist(), self.limit.tolist())


def height_profile(
    samples: np.ndarray,
    md: ModularData,
    tau: float,
    sites: np.ndarray | None = None,
    shifts: np.ndarray | None = None,
    batches: int = BATCHES,
) -> HeightProfile:
    """Empirical h/2N against H in macroscopic coordinates y/2N for one column.

    Args:
        samples: Array (n_samples, 2N, L) of padded parts
        md: Parameters
        tau: Slice position in (0, 1]
        sites: Site indices m (y = m + 1/2); by default the rows of the box
        shifts: Per-sample shifts, zero if omitted
        batches: Batches for the errors

    Raises:
        InsufficientSamplesError: If the stream is empty or too short
    """
    samples = np.asarray(samples)
    if samples.ndim != 3 or len(samples) == 0:
        raise InsufficientSamplesError("Height profile needs a nonempty sample stream")
    length = samples.shape[-1]
    if sites is None:
        sites = np.arange(-length, int(samples.max()) + 1)
    column = samples[:, SliceObservable(tau, 1).column(md.n) - 1, :]
    values = heights_array(column, sites, 0 if shifts is None else shifts) / (2 * md.n)
    estimate = batch_means(values, batches)
    ys = (np.asarray(sites) + 0.5) / (2 * md.n)
    profile = HeightProfile(tau, ys, estimate.mean, estimate.error, np.asarray(limit_shape_H(ys, md.t)))
    logger.info(f"Height profile at tau={tau}: sup distance {profile.sup_distance:.4f} to the limit shape")
    return profile


@dataclass(frozen=True)
class SliceMoments:
    statistics: list[SliceStatistic]
    means: np.ndarray
    mean_errors: np.ndarray
    covariance: np.ndarray
    covariance_errors: np.ndarray
    third_cumulants: np.ndarray
    third_errors: np.ndarray

    def rows(self, batches: int = BATCHES):
        return [statistic.row(batches) for statistic in self.statistics]


def slice_moments(
    samples: np.ndarray,
    md: ModularData,
    slices: Sequence[SliceObservable],
    shifts: np.ndarray | None = None,
    batches: int = BATCHES,
) -> SliceMoments:
    """Means, covariance matrix and third cumulants of the slice statistics with batch-means errors.

    Raises:
        InsufficientSamplesError: If there are fewer than two samples per batch
    """
    statistics = [SliceStatistic.from_samples(samples, md, s, shifts) for s in slices]
    values = np.stack([s.values for s in statistics], axis=1)
    means = batch_means(values, batches)
    centered = values - values.mean(axis=0)
    products = centered[:, :, None] * centered[:, None, :]
    covariance = batch_means(products, batches)
    third = batch_means(centered**3, batches)
    matrix = (covariance.mean + covariance.mean.T) / 2
    smallest = float(np.linalg.eigvalsh(matrix).min()) if matrix.size else 0.0
    if smallest < -1e-12 * max(1.0, float(np.abs(matrix).max())):
        logger.warning(f"Covariance estimate has a negative eigenvalue {smallest:.3e}")
    return SliceMoments(
        statistics=statistics,
        means=means.mean,
        mean_errors=means.error,
        covariance=matrix,
        covariance_errors=covariance.error,
        third_cumulants=third.mean,
        third_errors=third.error,
    )


@dataclass(frozen=True)
class NormalityReport:
    skewness: float
    excess_kurtosis: float
    z_skewness: float
    z_kurtosis: float

    @property
    def passed(self) -> bool:
        return abs(self.z_skewness) < NORMALITY_Z_LIMIT and abs(self.z_kurtosis) < NORMALITY_Z_LIMIT


def normality_diagnostics(values) -> NormalityReport:
    """Sample skewness and excess kurtosis with their z-scores under normality.

    The z-scores treat the samples as independent, so thin the stream to
    about one sample per autocorrelation time first.
    """
    values = np.asarray(values, dtype=np.float64)
    count = len(values)
    if count < 8:
        raise InsufficientSamplesError(f"Normality diagnostics need at least 8 samples, got {count}")
    skewness = float(stats.skew(values))
    kurtosis = float(stats.kurtosis(values, fisher=True))
    return NormalityReport(skewness, kurtosis, skewness / math.sqrt(6 / count), kurtosis / math.sqrt(24 / count))


@dataclass(frozen=True)
class VarianceDecomposition:
    """Var(shifted) - Var(unshifted) against wallis^2 Var(S)."""

    shifted: float
    unshifted: float
    predicted: float
    error: float

    @property
    def difference(self) -> float:
        return self.shifted - self.unshifted


@dataclass(frozen=True)
class ShiftReport:
    chi_square: float
    dof: int
    p_value: float
    mean: float
    variance: float
    expected_mean: float
    expected_variance: float
    decomposition: VarianceDecomposition | None = None

    @property
    def passed(self) -> bool:
        return self.p_value > 1.0 - CHI_SQUARE_LEVEL


def _pooled_bins(observed: np.ndarray, expected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge tail bins inward until every expected count is at least MIN_EXPECTED_COUNT."""
    observed, expected = list(observed), list(expected)
    for reverse in (False, True):
        if reverse:
            observed.reverse()
            expected.reverse()
        while len(expected) > 1 and expected[0] < MIN_EXPECTED_COUNT:
            first = expected.pop(0)
            expected[0] += first
            first = observed.pop(0)
            observed[0] += first
    return np.array(observed[::-1]), np.array(expected[::-1])


def shift_statistics(
    shifts,
    spec,
    shifted: np.ndarray | None = None,
    unshifted: np.ndarray | None = None,
    wallis: float | None = None,
    batches: int = BATCHES,
) -> ShiftReport:
    """Chi-square fit of the shift histogram to the exact table.

    Args:
        shifts: Sampled shifts
        spec: DiscreteGaussianSpec with the exact support and CDF
        shifted: Slice statistic of the shift-mixed stream, optional
        unshifted: Same statistic without the shift, optional
        wallis: Limit of d E[X]/d S, used with the two series above

    Raises:
        InsufficientSamplesError: If the stream is empty
    """
    shifts = np.asarray(shifts, dtype=np.int64)
    if len(shifts) == 0:
        raise InsufficientSamplesError("Shift statistics need a nonempty stream")
    probabilities = np.diff(np.concatenate([[0.0], spec.cdf])) / spec.cdf[-1]
    observed = np.array([np.count_nonzero(shifts == s) for s in spec.shifts], dtype=np.float64)
    outside = len(shifts) - int(observed.sum())
    if outside:
        logger.warning(f"{outside} sampled shifts fall outside the table support")
    observed_pooled, expected_pooled = _pooled_bins(observed, probabilities * len(shifts))
    chi_square = float(np.sum((observed_pooled - expected_pooled) ** 2 / expected_pooled))
    dof = max(1, len(expected_pooled) - 1)
    expected_mean = float(np.dot(spec.shifts, probabilities))
    expected_variance = float(np.dot(spec.shifts**2, probabilities) - expected_mean**2)

    decomposition = None
    if shifted is not None and unshifted is not None and wallis is not None:
        a = batch_means((shifted - np.mean(shifted)) ** 2, batches)
        b = batch_means((unshifted - np.mean(unshifted)) ** 2, batches)
        decomposition = VarianceDecomposition(
            float(a.mean), float(b.mean), wallis**2 * expected_variance, float(np.hypot(a.error, b.error))
        )
    return ShiftReport(
        chi_square=chi_square,
        dof=dof,
        p_value=float(stats.chi2.sf(chi_square, dof)),
        mean=float(shifts.mean()),
        variance=float(shifts.var()),
        expected_mean=expected_mean,
        expected_variance=expected_variance,
        decomposition=decomposition,
    )


def dump_profile(path: Path, config: dict, profile: HeightProfile) -> Path:
    return write_csv(path, config, PROFILE_COLUMNS, profile.rows())


def dump_slice_moments(path: Path, config: dict, moments: SliceMoments) -> Path:
    return write_csv(path, config, SLICE_COLUMNS, moments.rows())
