import numpy as np
import pytest

from conftest import affine, deterministic, noise_system
from transferlab import gallery
from transferlab.errors import SupportViolation
from transferlab.montecarlo import (
    annealed_correlation,
    basin_survey,
    birkhoff_histogram,
    duality_check,
    fit_exponential,
    random_orbit,
)
from transferlab.spectral import ergodic_decomposition
from transferlab.ulam import build_ulam

DOUBLING = np.array([[.5, .5, 0, 0], [0, 0, .5, .5]] * 2)


def halves(N):
    return np.where((np.arange(N) + 0.5) / N < 0.5, 1.0, -1.0)


class TestOrbit:
    def test_doubling(self):
        s = deterministic(affine(2.0, 0.0, True))
        assert np.allclose(random_orbit(s, 0.2, 0, 2), [0.2, 0.4, 0.8])

    def test_fixed_point(self):
        s = deterministic(affine(2.0, 0.0, True))
        assert np.all(random_orbit(s, 0.0, 5, 50) == 0.0)

    def test_multiplicative_contraction(self):
        s = noise_system("multiplicative", affine(0.5), epsilon=0.7)
        x = random_orbit(s, 1.0, 11, 40)
        assert np.all(x <= 2.0 ** -np.arange(41) * (1 + 1e-12))

    def test_reproducible(self):
        s = gallery.get("two_sink_additive").system()
        assert np.array_equal(random_orbit(s, 0.3, 9, 500), random_orbit(s, 0.3, 9, 500))
        assert not np.array_equal(random_orbit(s, 0.3, 9, 500), random_orbit(s, 0.3, 10, 500))

    def test_generic_doubling_does_not_collapse(self):
        s = gallery.get("deterministic_doubling").system()
        x = random_orbit(s, 0.2, 1, 300, generic=True)
        assert np.unique(np.round(x[100:], 12)).size > 150


class TestHistogram:
    def test_quarter_rotation(self):
        s = deterministic(affine(1.0, 0.25, True))
        h = birkhoff_histogram(s, 0.0, 0, 0, 400, 4)
        assert np.allclose(h.masses, 0.25)

    def test_fixed_point(self):
        s = deterministic(affine(2.0, 0.0, True))
        h = birkhoff_histogram(s, 0.0, 0, 10, 100, 8)
        assert h.masses[0] == 1.0 and h.masses.sum() == 1.0

    def test_doubling_equidistributes(self):
        s = gallery.get("deterministic_doubling").system()
        h = birkhoff_histogram(s, 0.3, 4, 100, 400_000, 64, generic=True)
        assert h.masses.sum() == pytest.approx(1.0, abs=1e-12)
        # binomial se of one bin is about 4e-4 for independent draws
        assert np.max(np.abs(h.masses - 1 / 64)) < 3e-3

    def test_rejects_empty_window(self):
        with pytest.raises(ValueError):
            birkhoff_histogram(gallery.get("deterministic_doubling").system(), 0.3, 0, 0, 0, 8)


class TestBasins:
    def test_direct_sum_splits_evenly(self):
        s = gallery.get("direct_sum_expanding_contracting").system()
        dec = ergodic_decomposition(build_ulam(s, 64))
        rep = basin_survey(s, dec, 2000, n_burn=200, n_avg=5000, seed=3)
        assert rep.fractions.sum() + rep.unassigned == pytest.approx(1.0, abs=1e-12)
        assert rep.unassigned < 0.01
        assert np.all(np.abs(rep.fractions - 0.5) < 3 * rep.standard_errors)

    def test_single_component(self):
        s = gallery.get("deterministic_doubling").system()
        dec = ergodic_decomposition(build_ulam(s, 32))
        rep = basin_survey(s, dec, 300, n_burn=100, n_avg=20_000, seed=1)
        assert rep.fractions[0] > 0.97

    def test_empty(self):
        dec = ergodic_decomposition(np.eye(3))
        rep = basin_survey(gallery.get("deterministic_doubling").system(), dec, 0)
        assert list(rep.fractions) == [0, 0, 0] and rep.unassigned == 0.0

    def test_threads_do_not_change_results(self):
        s = gallery.get("two_sink_additive").system()
        dec = ergodic_decomposition(build_ulam(s, 32))
        a = basin_survey(s, dec, 400, n_burn=50, n_avg=2000, seed=8, threads=1)
        b = basin_survey(s, dec, 400, n_burn=50, n_avg=2000, seed=8, threads=4)
        assert a.to_dict() == b.to_dict()


class TestCorrelation:
    def test_constants_decorrelate(self, rng):
        h = np.ones(4)
        fit = annealed_correlation(DOUBLING, h, np.ones(4), rng.normal(size=4), 6)
        assert np.allclose(fit.values, 0.0, atol=1e-15)

    def test_doubling_halves(self):
        fit = annealed_correlation(DOUBLING, np.ones(4), halves(4), halves(4), 6)
        assert fit.values[0] == pytest.approx(1.0)
        assert np.allclose(fit.values[2:], 0.0, atol=1e-15)

    def test_bernoulli_decays(self):
        K = build_ulam(gallery.get("bernoulli_convolution").system(), 64)
        h = ergodic_decomposition(K).components[0].density
        x = (np.arange(64) + 0.5) / 64
        phi = np.sign(np.sin(2 * np.pi * 8 * x)) + (x < 0.3)
        fit = annealed_correlation(K, h, phi, phi, 30)
        assert fit.rho < 1.0
        # dyadic step observables at level 6 lose all correlation within 6 steps
        assert abs(fit.values[1]) > 1e-3
        assert np.allclose(fit.values[7:], 0.0, atol=1e-14)

    def test_bilinear(self, rng):
        K = build_ulam(gallery.get("expanding_ifs_23").system(), 32)
        h = ergodic_decomposition(K).components[0].density
        a, b, psi = rng.normal(size=(3, 32))
        lhs = annealed_correlation(K, h, 2 * a - 3 * b, psi, 8).values
        rhs = 2 * annealed_correlation(K, h, a, psi, 8).values - 3 * annealed_correlation(K, h, b, psi, 8).values
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_support_violation(self):
        with pytest.raises(SupportViolation):
            annealed_correlation(np.eye(2), np.array([2.0, 0.0]), np.ones(2), np.ones(2), 3)

    def test_fit_ignores_floor(self):
        C, rho, r2 = fit_exponential(0.5 ** np.arange(10))
        assert rho == pytest.approx(0.5) and r2 == pytest.approx(1.0) and C == pytest.approx(1.0)
        assert fit_exponential(np.zeros(5)) == (0.0, 0.0, 1.0)


class TestDuality:
    def test_no_dynamics(self, rng):
        s = gallery.get("two_sink_additive").system()
        K = build_ulam(s, 16)
        phi, psi = rng.random(16), rng.random(16)
        res = duality_check(s, K, phi, psi, 0, 20_000, seed=2)
        assert res.matrix_value == pytest.approx(np.mean(phi * psi))
        assert res.z < 4

    def test_uniform_rows(self, rng):
        s = noise_system("additive", affine(2.0, 0.0, True), domain="circle")
        K = build_ulam(s, 16)
        psi = rng.random(16)
        res = duality_check(s, K, np.ones(16), psi, 1, 100_000, seed=4)
        assert res.matrix_value == pytest.approx(psi.mean(), abs=1e-12)
        assert res.z < 3

    def test_bernoulli_half_indicators(self):
        s = gallery.get("bernoulli_convolution").system()
        K = build_ulam(s, 64)
        phi = (halves(64) > 0).astype(float)
        res = duality_check(s, K, phi, phi, 3, 1_000_000, seed=6)
        assert res.z < 3
