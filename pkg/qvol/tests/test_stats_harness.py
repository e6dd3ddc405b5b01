"""Tests for the statistics harness."""

import numpy as np
import pytest

from qvol.errors import DomainError, InsufficientSamplesError
from qvol.run import read_lines
from qvol.services.mcmc_sampler import DiscreteGaussianSpec, sample_shift
from qvol.services.partitions import ModularData, SliceObservable
from qvol.services.stats_harness import (
    SliceStatistic,
    _pooled_bins,
    batch_means,
    dump_profile,
    dump_slice_moments,
    height_profile,
    integrated_autocorrelation,
    normality_diagnostics,
    shift_statistics,
    slice_moments,
)


@pytest.fixture
def samples(rng):
    """Stream of 64 random interlacing configurations with N = 2 in a 4 x 4 box."""
    md = ModularData(0.5, 2)
    rows = rng.integers(0, 5, size=(64, 4))
    columns = np.sort(rows, axis=1)[:, ::-1]
    # equal columns always interlace
    return md, np.repeat(columns[:, None, :], 4, axis=1)


class TestBatchMeans:
    """Tests for batch-means errors."""

    def test_iid_series(self, rng):
        values = rng.normal(1.0, 2.0, 32_000)
        estimate = batch_means(values)
        assert estimate.mean == pytest.approx(1.0, abs=0.1)
        assert estimate.error == pytest.approx(2.0 / np.sqrt(32_000), rel=0.4)
        assert estimate.iat == pytest.approx(1.0, abs=0.8)

    def test_correlated_series(self, rng):
        noise = rng.normal(size=64_000)
        values = np.empty_like(noise)
        values[0] = noise[0]
        for i in range(1, len(noise)):
            values[i] = 0.9 * values[i - 1] + noise[i]
        # 2 * sum of 0.9^k - 1 = 19
        assert integrated_autocorrelation(values, batches=128) == pytest.approx(19.0, rel=0.4)

    def test_vector_series(self, rng):
        estimate = batch_means(rng.normal(size=(640, 3)))
        assert estimate.mean.shape == (3,)
        assert estimate.error.shape == (3,)

    def test_constant_series(self):
        assert float(batch_means(np.ones(100)).iat) == 1.0

    def test_too_short(self):
        with pytest.raises(InsufficientSamplesError):
            batch_means(np.arange(40.0))


class TestSliceStatistic:
    """Tests for per-slice statistics."""

    def test_merge(self, samples):
        md, stream = samples
        s = SliceObservable(1.0, 1)
        a = SliceStatistic.from_samples(stream[:30], md, s)
        b = SliceStatistic.from_samples(stream[30:], md, s)
        assert a.merge(b).count == 64
        with pytest.raises(DomainError):
            a.merge(SliceStatistic.from_samples(stream, md, SliceObservable(0.5, 1)))

    def test_row_layout(self, samples):
        md, stream = samples
        row = SliceStatistic.from_samples(stream, md, SliceObservable(0.5, 1)).row(batches=8)
        assert row[:2] == [0.5, 1]
        assert len(row) == 9
        assert row[4] >= 0

    def test_moments_covariance(self, samples):
        md, stream = samples
        moments = slice_moments(stream, md, [SliceObservable(0.5, 1), SliceObservable(1.0, 2)], batches=8)
        assert moments.covariance.shape == (2, 2)
        assert np.allclose(moments.covariance, moments.covariance.T)
        assert np.linalg.eigvalsh(moments.covariance).min() >= -1e-12

    def test_dump(self, samples, tmp_path):
        md, stream = samples
        moments = slice_moments(stream, md, [SliceObservable(1.0, 1)], batches=8)
        lines = read_lines(dump_slice_moments(tmp_path / "slices.csv", {}, moments))
        assert lines[0].startswith("tau,k,mean")
        assert len(lines) == 2


class TestHeightProfile:
    """Tests for the empirical height profile."""

    def test_empty_room_staircase(self):
        md = ModularData(0.5, 1)
        stream = np.zeros((4, 2, 3), dtype=np.int32)
        profile = height_profile(stream, md, 1.0, sites=np.arange(-2, 3), batches=2)
        assert (profile.means * 2).tolist() == [0, 0, 0, 1, 2]
        assert np.all(profile.errors == 0)

    def test_empty_stream(self):
        with pytest.raises(InsufficientSamplesError):
            height_profile(np.zeros((0, 2, 3)), ModularData(0.5, 1), 1.0)

    def test_dump(self, samples, tmp_path):
        md, stream = samples
        profile = height_profile(stream, md, 0.5, batches=8)
        lines = read_lines(dump_profile(tmp_path / "profile.csv", {}, profile))
        assert lines[0] == "y,mean_h,stderr,H"
        assert len(lines) == 1 + len(profile.ys)


class TestNormality:
    """Tests for the skewness and kurtosis diagnostics."""

    def test_gaussian_passes(self, rng):
        assert normality_diagnostics(rng.normal(size=5000)).passed

    def test_exponential_fails(self, rng):
        report = normality_diagnostics(rng.exponential(size=5000))
        assert not report.passed
        assert report.skewness > 1.5

    def test_too_few(self):
        with pytest.raises(InsufficientSamplesError):
            normality_diagnostics(np.arange(5.0))


class TestShiftStatistics:
    """Tests for the shift histogram check."""

    def test_pooled_bins(self):
        observed, expected = _pooled_bins(np.array([1, 2, 30, 40, 3]), np.array([1.0, 3.0, 30.0, 40.0, 2.0]))
        assert observed.tolist() == [33, 43]
        assert expected.tolist() == [34.0, 42.0]

    @pytest.mark.parametrize(
        "observed, expected",
        [
            ([0, 10, 0], [1.0, 50.0, 1.0]),
            ([1, 2, 50, 60, 1], [1.0, 2.0, 50.0, 60.0, 1.0]),
            ([3, 1], [2.0, 1.0]),
        ],
    )
    def test_pooling_conserves_totals(self, observed, expected):
        pooled_observed, pooled_expected = _pooled_bins(np.array(observed), np.array(expected))
        assert pooled_observed.sum() == sum(observed)
        assert pooled_expected.sum() == pytest.approx(sum(expected))
        assert len(pooled_observed) == len(pooled_expected)

    def test_exact_draws_pass(self, rng):
        spec = DiscreteGaussianSpec.from_modular(ModularData(0.5, 1, 1.5))
        report = shift_statistics(sample_shift(spec, rng, 20_000), spec)
        assert report.passed
        assert report.mean == pytest.approx(report.expected_mean, abs=0.05)

    def test_wrong_law_fails(self, rng):
        spec = DiscreteGaussianSpec.from_modular(ModularData(0.5, 1))
        report = shift_statistics(sample_shift(spec, rng, 20_000) + 1, spec)
        assert not report.passed

    def test_variance_decomposition(self, rng):
        spec = DiscreteGaussianSpec.from_modular(ModularData(0.5, 1))
        shifts = sample_shift(spec, rng, 6400)
        base = rng.normal(size=6400)
        report = shift_statistics(shifts, spec, shifted=base + 0.5 * shifts, unshifted=base, wallis=0.5)
        decomposition = report.decomposition
        assert decomposition.difference == pytest.approx(decomposition.predicted, abs=5 * decomposition.error + 0.02)

    def test_empty(self):
        spec = DiscreteGaussianSpec.from_modular(ModularData(0.5, 1))
        with pytest.raises(InsufficientSamplesError):
            shift_statistics([], spec)
