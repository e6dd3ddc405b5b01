"""Tests for theta functions, the cylinder Green's function and the shift law."""

import math

import numpy as np
import pytest

from qvol.errors import DomainError, PoleError, SingularityError
from qvol.services import special_functions
from qvol.services.special_functions import (
    Theta,
    ThetaParams,
    d2_log_Theta,
    discrete_gaussian_table,
    frobenius_determinant,
    frobenius_product,
    greens,
    log_abs_Theta,
    nome_of,
    q_pochhammer,
    theta1,
    theta1_product,
    theta1_reduced,
    theta3,
    theta3_product,
)


@pytest.fixture
def points(rng):
    return np.exp(rng.uniform(-1.0, 1.0, 40) + 1j * rng.uniform(-math.pi, math.pi, 40))


class TestThetaParams:
    """Tests for series truncation."""

    def test_truncation_bound(self):
        params = ThetaParams(0.5, 1e-14)
        m = params.truncation
        assert 0.5 ** (m * (m + 1) / 2) < 1e-14
        assert 0.5 ** ((m - 1) * m / 2) >= 1e-14

    def test_invalid_nome(self):
        with pytest.raises(DomainError):
            ThetaParams(1.0)


class TestPochhammer:
    """Tests for (a; t)_inf."""

    def test_euler_function(self):
        # (t; t)_inf from the pentagonal number series
        t = 0.3
        series = sum((-1) ** k * t ** (k * (3 * k - 1) / 2) for k in range(-20, 21))
        assert q_pochhammer(t, t).real == pytest.approx(series, rel=1e-14)

    def test_zero_argument(self):
        assert q_pochhammer(0.0, 0.5) == 1.0

    def test_nome_out_of_range(self):
        with pytest.raises(DomainError):
            q_pochhammer(0.5, 1.0)


class TestTheta1:
    """Tests for theta_1."""

    @pytest.mark.parametrize("t", [0.3, 0.6])
    def test_sum_equals_product(self, points, t):
        sums = np.asarray(theta1(points, t))
        products = np.asarray(theta1_product(points, t))
        assert np.max(np.abs(sums - products) / np.abs(sums)) < 1e-11

    @pytest.mark.parametrize("t", [0.3, 0.6])
    def test_zeros_at_powers_of_t(self, t):
        values = np.abs(np.asarray(theta1(t ** np.arange(-3.0, 4.0), t)))
        assert values.max() < 1e-12

    @pytest.mark.parametrize("t", [0.3, 0.6])
    def test_quasi_periodicity(self, points, t):
        """theta_1(tz)/(tz)^{1/2} = -theta_1(z)/z^{1/2} / (tz)."""
        lhs = np.asarray(theta1_reduced(t * points, t))
        rhs = -np.asarray(theta1_reduced(points, t)) / (t * points)
        assert np.allclose(lhs, rhs, rtol=1e-11, atol=0)

    def test_cross_check_warns_nothing_when_consistent(self, caplog):
        theta1(0.7 + 0.2j, 0.4, cross_check=True)
        assert "disagree" not in caplog.text

    def test_cross_check_on_by_default(self, monkeypatch, caplog):
        product = special_functions.theta1_product
        monkeypatch.setattr(special_functions, "theta1_product", lambda z, t, eps: 1.001 * product(z, t, eps))
        theta1(0.7 + 0.2j, 0.4)
        assert "theta1 sum and product forms disagree" in caplog.text

    def test_zero_argument(self):
        with pytest.raises(DomainError):
            theta1(0.0, 0.5)


class TestTheta3:
    """Tests for theta_3."""

    @pytest.mark.parametrize("t", [0.3, 0.6])
    def test_sum_equals_product(self, points, t):
        sums = np.asarray(theta3(points, t))
        products = np.asarray(theta3_product(points, t))
        assert np.max(np.abs(sums - products) / np.abs(sums)) < 1e-11

    def test_quasi_periodicity(self, points):
        t = 0.4
        lhs = np.asarray(theta3(t * points, t))
        rhs = np.asarray(theta3(points, t)) / (math.sqrt(t) * points)
        assert np.allclose(lhs, rhs, rtol=1e-11, atol=0)

    def test_zero(self):
        t = 0.5
        assert abs(theta3(-(t**0.5), t)) < 1e-13

    def test_cross_check_quiet_near_zero(self, caplog):
        t = 0.5
        theta3(-(t**0.5) * np.exp(1j * np.linspace(-0.1, 0.1, 11)), t)
        assert "disagree" not in caplog.text

    def test_cross_check_logs_disagreement(self, monkeypatch, caplog):
        product = special_functions.theta3_product
        monkeypatch.setattr(special_functions, "theta3_product", lambda z, t, eps: 1.001 * product(z, t, eps))
        theta3(0.7 + 0.2j, 0.4)
        assert "theta3 sum and product forms disagree" in caplog.text


class TestBigTheta:
    """Tests for Theta(eta | omega) and its derivatives."""

    def test_nome_of(self):
        assert nome_of(1j * math.log(2) / (2 * math.pi)) == pytest.approx(0.5)
        with pytest.raises(DomainError):
            nome_of(0.1 + 1j)

    def test_odd(self):
        omega = 0.2j
        eta = np.array([0.1 + 0.05j, 0.3 - 0.02j])
        assert np.allclose(np.asarray(Theta(-eta, omega)), -np.asarray(Theta(eta, omega)), rtol=1e-12)

    def test_log_abs_matches_series(self):
        omega = 0.15j
        eta = np.array([0.12 + 0.03j, 0.4 + 0.1j])
        assert np.allclose(log_abs_Theta(eta, omega), np.log(np.abs(Theta(eta, omega))), rtol=1e-12)

    def test_second_log_derivative(self):
        omega, eta, h = 0.2j, 0.17 + 0.04j, 1e-4
        values = [np.log(Theta(eta + s * h, omega)) for s in (-1, 0, 1)]
        numeric = (values[0] - 2 * values[1] + values[2]) / h**2
        assert d2_log_Theta(eta, omega) == pytest.approx(numeric, rel=1e-6)

    def test_lattice_pole(self):
        with pytest.raises(PoleError):
            d2_log_Theta(1.0 + 0.2j, 0.2j)


class TestGreens:
    """Tests for the Dirichlet Green's function of the cylinder."""

    @pytest.fixture
    def domain(self, rng):
        omega = 1j * -math.log(0.4) / (2 * math.pi)
        a = rng.uniform(0.05, 0.45, 10) + 1j * rng.uniform(0.1, 0.9, 10) * omega.imag
        b = rng.uniform(0.05, 0.45, 10) + 1j * rng.uniform(0.1, 0.9, 10) * omega.imag
        return omega, a, b

    def test_symmetric(self, domain):
        omega, a, b = domain
        assert np.allclose(greens(a, b, omega), greens(b, a, omega), atol=1e-12)

    def test_periodic(self, domain):
        omega, a, b = domain
        assert np.allclose(greens(a + 1.0, b, omega), greens(a, b, omega), atol=1e-12)

    def test_vanishes_on_vertical_boundary(self, domain):
        omega, a, b = domain
        assert np.max(np.abs(greens(1j * a.imag, b, omega))) < 1e-9
        assert np.max(np.abs(greens(0.5 + 1j * a.imag, b, omega))) < 1e-9

    def test_positive_inside(self, domain):
        omega, a, b = domain
        assert np.all(np.asarray(greens(a, b, omega)) > 0)

    def test_log_singularity(self):
        omega, source = 0.15j, 0.25 + 0.07j

        def regular(d):
            return greens(source + d, source, omega) + math.log(d) / (2 * math.pi)

        assert abs(regular(1e-3) - regular(1e-5)) < 1e-3

    def test_harmonic(self):
        omega, source, point = 1j * -math.log(0.3) / (2 * math.pi), 0.25 + 0.05j, 0.1 + 0.12j

        def laplacian(h):
            ring = point + h * np.array([1, -1, 1j, -1j])
            return (np.sum(greens(ring, source, omega)) - 4 * greens(point, source, omega)) / h**2

        assert 3.5 < laplacian(0.02) / laplacian(0.01) < 4.5

    def test_coincident_points(self):
        with pytest.raises(SingularityError):
            greens(0.2 + 0.05j, 0.2 + 0.05j, 0.15j)


class TestFrobenius:
    """Tests for the elliptic Cauchy determinant."""

    def test_determinant_equals_product(self, rng):
        t, u = 0.4, 1.3
        for _ in range(5):
            r = rng.uniform(0.4, 0.9, 3)
            z = np.exp(1j * rng.uniform(-math.pi, math.pi, 3))
            det = frobenius_determinant(u, r, z, t)
            assert abs(det - frobenius_product(u, r, z, t)) < 1e-10 * abs(det)

    def test_size_limit(self):
        with pytest.raises(DomainError):
            frobenius_determinant(1.0, np.ones(4) * 0.5, np.ones(4), 0.5)


class TestDiscreteGaussian:
    """Tests for the shift table."""

    def test_normalizer_is_theta3(self):
        table = discrete_gaussian_table(1.7, 0.3)
        assert table.normalizer == pytest.approx(theta3(1.7, 0.3).real, rel=1e-12)
        assert table.probabilities.sum() == pytest.approx(1.0, abs=1e-15)

    def test_symmetric_at_u_one(self):
        table = discrete_gaussian_table(1.0, 0.5)
        assert table.mean() == pytest.approx(0.0, abs=1e-14)

    def test_mode(self):
        t, u = 0.5, 0.5 ** -2.0
        table = discrete_gaussian_table(u, t)
        # weights u^S t^{S^2/2} peak at S = -log u/log t
        assert table.shifts[np.argmax(table.probabilities)] == 2

    def test_variance_shrinks_with_t(self):
        assert discrete_gaussian_table(1.0, 0.1).variance() < discrete_gaussian_table(1.0, 0.6).variance()

    def test_invalid(self):
        with pytest.raises(DomainError):
            discrete_gaussian_table(0.0, 0.5)
