"""Tests for the truncated transfer-matrix layer."""

import math

import numpy as np
import pytest

from qvol.errors import DomainError, ResourceError
from qvol.run import read_lines
from qvol.services.partitions import ModularData, Partition, SliceObservable, interlaces, observable_F, volume
from qvol.services.transfer_exact import (
    BoxTruncation,
    config_count,
    default_truncation,
    dump_configs,
    enumerate_configs,
    exact_correlation,
    exact_observable_expectation,
    exact_sample,
    interlacing_matrix,
    partition_function,
    partition_function_rotated,
    transfer_matrix,
    truncation_tail,
)


@pytest.fixture
def unit_box():
    return BoxTruncation(1, 1)


@pytest.fixture
def half():
    """N = 1 with q = 1/2."""
    return ModularData(0.25, 1)


class TestBoxTruncation:
    """Tests for the state box."""

    @pytest.mark.parametrize("box_l,box_r", [(1, 1), (2, 3), (3, 3)])
    def test_state_count(self, box_l, box_r):
        assert BoxTruncation(box_l, box_r).size == math.comb(box_l + box_r, box_l)

    def test_ordered_by_size(self):
        sizes = BoxTruncation(3, 2).sizes
        assert np.all(np.diff(sizes) >= 0)
        assert sizes[0] == 0

    def test_lookup(self):
        trunc = BoxTruncation(2, 2)
        assert trunc.states[trunc.lookup(Partition((2, 1)))] == Partition((2, 1))
        with pytest.raises(DomainError):
            trunc.lookup(Partition((3,)))

    def test_state_cap(self):
        with pytest.raises(ResourceError):
            BoxTruncation(10, 10)

    def test_occupied(self):
        trunc = BoxTruncation(1, 1)
        # states: empty (particle at m = -1) and (1) (particle at m = 0)
        assert trunc.occupied(-0.5).tolist() == [True, False]
        assert trunc.occupied(0.5).tolist() == [False, True]
        assert trunc.occupied(-3.5).tolist() == [True, True]


class TestTransferMatrix:
    """Tests for the interlacing and transfer matrices."""

    def test_interlacing_matches_predicate(self):
        trunc = BoxTruncation(2, 2)
        matrix = interlacing_matrix(trunc)
        states = trunc.states
        for a, mu in enumerate(states):
            for b, la in enumerate(states):
                assert matrix[a, b] == interlaces(mu, la)

    def test_unit_box_matrix(self, unit_box, half):
        expected = np.array([[1.0, math.sqrt(0.5)], [0.0, 0.5]])
        assert np.allclose(transfer_matrix(unit_box, half), expected)

    def test_unit_box_partition_function(self, unit_box, half):
        # (empty, empty), (empty, (1)) and ((1), (1)); the small column comes first
        assert partition_function(unit_box, half) == pytest.approx(1 + 0.5 + 0.25)
        assert config_count(unit_box, 1) == pytest.approx(3)

    def test_rotation_invariance(self, small_q):
        trunc = BoxTruncation(3, 3)
        z = partition_function(trunc, small_q)
        for rotation in range(2 * small_q.n):
            assert partition_function_rotated(trunc, small_q, rotation) == pytest.approx(z, rel=1e-12)


class TestEnumeration:
    """Tests for exhaustive enumeration."""

    def test_probabilities_match_weights(self, half):
        trunc = BoxTruncation(2, 2)
        rows = enumerate_configs(trunc, half)
        z = partition_function(trunc, half)
        assert math.fsum(p for _, p in rows) == pytest.approx(1.0, abs=1e-14)
        for cfg, p in rows:
            assert p == pytest.approx(half.q ** volume(cfg) / z, rel=1e-12)

    def test_count(self, half):
        trunc = BoxTruncation(2, 2)
        assert len(enumerate_configs(trunc, half)) == round(config_count(trunc, half.n))

    def test_shift_mixing(self, half):
        rows = enumerate_configs(BoxTruncation(1, 1), half, with_shift=True)
        assert math.fsum(p for _, p in rows) == pytest.approx(1.0, abs=1e-12)
        assert {cfg.shift for cfg, _ in rows} >= {-1, 0, 1}

    def test_enumeration_cap(self, monkeypatch, half):
        monkeypatch.setattr("qvol.services.transfer_exact.MAX_CONFIGS", 2)
        with pytest.raises(ResourceError):
            enumerate_configs(BoxTruncation(1, 1), half)

    def test_dump(self, tmp_path, half):
        rows = enumerate_configs(BoxTruncation(1, 1), half)
        path = dump_configs(tmp_path / "configs.csv", {"command": "exact"}, rows)
        lines = read_lines(path)
        assert lines[0] == "config,probability"
        assert len(lines) == 4


class TestObservables:
    """Tests for exact expectations and correlations."""

    def test_expectation_matches_enumeration(self, half):
        trunc = BoxTruncation(2, 2)
        rows = enumerate_configs(trunc, half)
        slices = [SliceObservable(0.5, 1), SliceObservable(1.0, 1)]
        r = half.r(1)
        direct = math.fsum(
            p * observable_F(cfg.column(1), r) * observable_F(cfg.column(2), r) for cfg, p in rows
        )
        assert exact_observable_expectation(trunc, half, slices) == pytest.approx(direct, rel=1e-12)

    def test_shifted_expectation_factor(self, small_q):
        trunc = BoxTruncation(3, 3)
        slices = [SliceObservable(1.0, 1)]
        plain = exact_observable_expectation(trunc, small_q, slices)
        shifted = exact_observable_expectation(trunc, small_q, slices, shifted=True)
        r = small_q.r(1)
        weights = [small_q.u**s * small_q.t ** (s * s / 2) for s in range(-8, 9)]
        factor = sum(w * r**s for w, s in zip(weights, range(-8, 9))) / sum(weights)
        assert shifted == pytest.approx(plain * factor, rel=1e-10)

    def test_correlation_matches_enumeration(self, half):
        trunc = BoxTruncation(2, 2)
        rows = enumerate_configs(trunc, half)

        def occupied(la, m):
            return any(la.part(i) - i == m for i in range(1, 10))

        direct = math.fsum(p for cfg, p in rows if occupied(cfg.column(2), 0) and occupied(cfg.column(1), -1))
        assert exact_correlation(trunc, half, [(2, 0.5), (1, -0.5)]) == pytest.approx(direct, rel=1e-12)

    def test_density_is_probability(self, small_q):
        trunc = BoxTruncation(3, 3)
        for x in (-2.5, -0.5, 0.5, 2.5):
            value = exact_correlation(trunc, small_q, [(1, x)], shifted=True)
            assert 0.0 <= value <= 1.0


class TestSampling:
    """Tests for exact sampling and truncation."""

    def test_exact_sample_frequencies(self, unit_box, half):
        rng = np.random.default_rng(3)
        draws = [exact_sample(unit_box, half, rng) for _ in range(4000)]
        empty = sum(1 for cfg in draws if volume(cfg) == 0) / len(draws)
        assert empty == pytest.approx(1 / 1.75, abs=0.03)

    def test_shifted_sample(self, unit_box, half):
        cfg = exact_sample(unit_box, half, np.random.default_rng(0), shifted=True)
        assert cfg.n == 1

    def test_tail_small_for_small_q(self, small_q):
        assert 0.0 <= truncation_tail(BoxTruncation(3, 3), small_q) < 1e-3

    def test_default_truncation(self, small_q):
        trunc = default_truncation(small_q)
        assert trunc.box_l == trunc.box_r
        assert small_q.q ** trunc.box_l * 2 * small_q.n < 1e-3
