"""Tests for the contour-integral moments and their asymptotics."""

import math

import pytest

from qvol.errors import ConfigurationError, DomainError
from qvol.run import read_lines
from qvol.services.moments import (
    ContourSpec,
    contour_moment,
    covariance_asymptotic,
    dump_moments,
    greens_covariance,
    joint_cumulant,
    mean_asymptotic,
    moment_row,
    set_partitions,
    shift_mixed_moment,
    wallis_moment,
    wallis_quadrature,
)
from qvol.services.partitions import ModularData, SliceObservable
from qvol.services.transfer_exact import BoxTruncation, exact_observable_expectation


@pytest.fixture(scope="module")
def box():
    return BoxTruncation(5, 5)


@pytest.fixture
def three_columns():
    """N = 3 with q = 0.1, where two k = 1 slices have nested contours."""
    return ModularData(1e-6, 3, 1.3)


class TestSetPartitions:
    """Tests for the set-partition generator."""

    @pytest.mark.parametrize("size,bell", [(0, 1), (1, 1), (3, 5), (4, 15)])
    def test_bell_numbers(self, size, bell):
        assert sum(1 for _ in set_partitions(list(range(size)))) == bell

    def test_blocks_cover_items(self):
        for partition in set_partitions([0, 1, 2]):
            assert sorted(i for block in partition for i in block) == [0, 1, 2]


class TestContourSpec:
    """Tests for the nested contour radii."""

    def test_k_equal_n_rejected(self, small_q):
        with pytest.raises(ConfigurationError):
            ContourSpec.for_slices([SliceObservable(1.0, 2)], small_q)

    def test_no_room_for_nesting(self, small_q):
        with pytest.raises(ConfigurationError):
            ContourSpec.for_slices([SliceObservable(0.5, 1), SliceObservable(1.0, 1)], small_q)

    def test_ladder_is_valid(self, three_columns):
        slices = [SliceObservable(1.0, 1), SliceObservable(1 / 3, 1)]
        spec = ContourSpec.for_slices(slices, three_columns)
        spec.validate(slices, three_columns)
        assert spec.radii[0] > spec.radii[1] == 1.0

    def test_bad_radii_rejected(self, three_columns):
        slices = [SliceObservable(1 / 3, 1), SliceObservable(1.0, 1)]
        with pytest.raises(ConfigurationError):
            ContourSpec((1.0, 1.0)).validate(slices, three_columns)


class TestContourMoment:
    """Tests of the contour moments against the transfer-matrix layer."""

    @pytest.mark.parametrize("tau", [0.25, 0.5, 1.0])
    def test_single_slice(self, box, small_q, tau):
        slices = [SliceObservable(tau, 1)]
        exact = exact_observable_expectation(box, small_q, slices)
        assert contour_moment(slices, small_q).value == pytest.approx(exact, rel=1e-3)

    def test_two_slices(self, box, three_columns):
        slices = [SliceObservable(1 / 3, 1), SliceObservable(1.0, 1)]
        exact = exact_observable_expectation(box, three_columns, slices)
        result = contour_moment(slices, three_columns)
        assert result.value == pytest.approx(exact, rel=1e-3)
        assert result.error < 1e-6 * abs(result.value) + 1e-12

    def test_shift_mixed(self, box, small_q):
        slices = [SliceObservable(0.5, 1)]
        exact = exact_observable_expectation(box, small_q, slices, shifted=True)
        assert shift_mixed_moment(slices, small_q).value == pytest.approx(exact, rel=1e-3)

    @pytest.mark.parametrize("tau", [0.5, 1.0])
    def test_single_slice_higher_exponent(self, box, tau):
        md = ModularData(1e-6, 3)
        slices = [SliceObservable(tau, 2)]
        exact = exact_observable_expectation(box, md, slices)
        assert contour_moment(slices, md).value == pytest.approx(exact, rel=1e-3)

    def test_shift_mixed_higher_exponent(self, box, three_columns):
        slices = [SliceObservable(1.0, 2)]
        exact = exact_observable_expectation(box, three_columns, slices, shifted=True)
        assert shift_mixed_moment(slices, three_columns).value == pytest.approx(exact, rel=1e-3)

    def test_cumulant_consistent_with_moments(self, three_columns):
        s1, s2 = SliceObservable(1 / 3, 1), SliceObservable(1.0, 1)
        second = contour_moment([s1, s2], three_columns).value
        first = contour_moment([s1], three_columns).value * contour_moment([s2], three_columns).value
        assert joint_cumulant([s1, s2], three_columns).value == pytest.approx(second - first, rel=1e-6, abs=1e-14)

    def test_infinite_moment(self, small_q):
        with pytest.raises(ConfigurationError):
            contour_moment([SliceObservable(1.0, 2)], small_q)


class TestAsymptotics:
    """Tests for the limiting mean and covariance."""

    def test_mean_asymptotic(self):
        assert mean_asymptotic(1, 0.5) == pytest.approx(2 / (2 * math.log(0.5)) ** 2)
        with pytest.raises(DomainError):
            mean_asymptotic(0, 0.5)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_wallis(self, k):
        t = 0.4
        expected = -math.comb(2 * k, k) / (2 * k * math.log(t))
        assert wallis_moment(k, t) == pytest.approx(expected, rel=1e-14)
        assert wallis_quadrature(k, t) == pytest.approx(expected, rel=1e-9)

    def test_covariance_symmetric(self):
        md = ModularData(0.5, 4)
        s1, s2 = SliceObservable(0.25, 1), SliceObservable(0.75, 2)
        assert covariance_asymptotic(s1, s2, md) == pytest.approx(covariance_asymptotic(s2, s1, md), rel=1e-12)

    def test_covariance_independent_of_offsets(self):
        md = ModularData(0.5, 4)
        s1, s2 = SliceObservable(0.25, 1), SliceObservable(0.75, 1)
        span = -math.log(0.5) / (2 * math.pi)
        default = covariance_asymptotic(s1, s2, md)
        moved = covariance_asymptotic(s1, s2, md, c1=0.1 * span, c2=0.8 * span)
        assert moved == pytest.approx(default, rel=1e-9)

    def test_bad_offsets(self):
        md = ModularData(0.5, 4)
        s = SliceObservable(0.5, 1)
        with pytest.raises(ConfigurationError):
            covariance_asymptotic(s, s, md, c1=0.2, c2=0.1)
        with pytest.raises(ConfigurationError):
            covariance_asymptotic(s, s, md, c1=0.1)

    @pytest.mark.slow
    def test_covariance_matches_greens(self):
        md = ModularData(0.5, 4)
        s1, s2 = SliceObservable(0.25, 1), SliceObservable(0.75, 1)
        assert greens_covariance(s1, s2, md) == pytest.approx(covariance_asymptotic(s1, s2, md), abs=1e-6)


class TestDump:
    """Tests for moments.csv."""

    def test_rows(self, tmp_path, small_q):
        slices = [SliceObservable(0.5, 1)]
        row = moment_row(slices, small_q, contour_moment(slices, small_q))
        lines = read_lines(dump_moments(tmp_path / "moments.csv", {"command": "moments"}, [row]))
        assert lines[0] == "n,taus,ks,N,t,value,error_budget"
        assert lines[1].startswith("1,")
