import math

import numpy as np
import pytest
from scipy import integrate

from meanfield_fluct.noise import (CoarsenedSampler, ConfigurationError, Mollifier, NoiseFieldSampler,
                                   bump_profile, correlation_R, mollifier_eval, torus_delta)


def test_C_rho_normalises_square_integral_1d():
    mol = Mollifier(d=1)
    sq, _ = integrate.quad(lambda z: float(mol(np.array([[z]]))[0]) ** 2, -1, 1, epsabs=1e-13)
    assert mol.C_rho * sq == pytest.approx(1.0, abs=1e-10)


def test_C_rho_normalises_square_integral_2d():
    mol = Mollifier(d=2)
    sq, _ = integrate.dblquad(lambda y, x: float(mol(np.array([[x, y]]))[0]) ** 2, -1, 1,
                              lambda x: -math.sqrt(max(1 - x * x, 0.0)), lambda x: math.sqrt(max(1 - x * x, 0.0)),
                              epsabs=1e-12)
    assert mol.C_rho * sq == pytest.approx(1.0, abs=1e-7)


def test_mollifier_vanishes_outside_ball():
    z = np.array([[1.0], [1.5], [-1.2]])
    np.testing.assert_array_equal(mollifier_eval(z), 0.0)
    assert bump_profile(np.array([1.0]))[0] == 0.0


def test_R_at_zero_is_one():
    for eps in (0.05, 0.1, 0.3):
        assert correlation_R(np.zeros((1, 1)), eps)[0] == pytest.approx(1.0, abs=1e-8)


def test_R_vanishes_beyond_twice_eps():
    eps = 0.1
    x = np.linspace(2 * eps, 0.5, 40)[:, None]
    assert np.all(correlation_R(x, eps) == 0.0)


def test_R_matches_direct_quadrature():
    # R(x) = int rho_eps(y) rho_eps(x - y) dy / int rho_eps^2, computed here with scipy quad
    eps = 0.1
    mol = Mollifier(d=1)

    def rho(z):
        return float(mol(np.array([[z / eps]]))[0]) / eps

    norm, _ = integrate.quad(lambda y: rho(y) ** 2, -eps, eps, epsabs=1e-13)
    for s in (0.03, 0.1, 0.17):
        val, _ = integrate.quad(lambda y: rho(y) * rho(s - y), s - eps, eps, epsabs=1e-13, limit=200)
        assert correlation_R(np.array([[s]]), eps)[0] == pytest.approx(val / norm, abs=1e-7)


def test_R_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        correlation_R(np.zeros((1, 1)), 0.0)


def test_torus_delta_wraps():
    np.testing.assert_allclose(torus_delta(np.array([0.95]), np.array([0.05])), [-0.1])


def test_sampler_rejects_coarse_grid():
    with pytest.raises(ConfigurationError):
        NoiseFieldSampler(0.1, np.array([[0.5]]), 0.01, 0, h=0.03)


def test_sampler_rejects_bad_eps():
    with pytest.raises(ConfigurationError):
        NoiseFieldSampler(0.7, np.array([[0.5]]), 0.01, 0)


def test_increment_variance_is_exactly_dt():
    s = NoiseFieldSampler(0.1, np.linspace(0, 1, 7, endpoint=False)[:, None], 0.01, 3)
    np.testing.assert_allclose(np.diag(s.discrete_correlation()), 1.0, atol=1e-14)


def test_discrete_correlation_tracks_R():
    x = np.array([[0.5], [0.53], [0.58], [0.66], [0.75]])
    s = NoiseFieldSampler(0.1, x, 0.01, 3)
    Rd = s.discrete_correlation()[0]
    Rc = correlation_R(x - x[0], 0.1)
    np.testing.assert_allclose(Rd, Rc, atol=5e-3)


def test_increments_reproducible_and_copy_keyed():
    x = np.array([[0.2], [0.4]])
    s = NoiseFieldSampler(0.1, x, 0.01, 11)
    a = s.sample_increments(4, np.arange(6))
    b = s.sample_increments(4, np.array([3, 4, 5]))
    np.testing.assert_array_equal(a[:, 3:], b)
    assert a.shape == (2, 6, 1)


def test_same_seed_same_field_at_other_locations():
    # two samplers on different point sets share the atoms: a common point sees the same value
    s1 = NoiseFieldSampler(0.1, np.array([[0.3], [0.6]]), 0.01, 5)
    s2 = NoiseFieldSampler(0.1, np.array([[0.6], [0.9]]), 0.01, 5)
    np.testing.assert_array_equal(s1.sample_increments(2, np.arange(3))[1], s2.sample_increments(2, np.arange(3))[0])


def test_independent_mode_has_no_correlation():
    x = np.array([[0.5], [0.51]])
    s = NoiseFieldSampler(0.1, x, 1.0, 2, independent=True)
    z = np.concatenate([s.sample_increments(n, np.arange(500))[:, :, 0] for n in range(20)], axis=1)
    assert abs(np.corrcoef(z)[0, 1]) < 0.05


def test_coarsened_sampler_sums_fine_steps():
    x = np.array([[0.5]])
    fine = NoiseFieldSampler(0.1, x, 0.005, 2)
    coarse = CoarsenedSampler(fine, 2)
    assert coarse.dt == pytest.approx(0.01)
    np.testing.assert_allclose(coarse.sample_increments(3, np.arange(4)),
                               fine.sample_increments(6, np.arange(4)) + fine.sample_increments(7, np.arange(4)))


def test_two_dimensional_sampler_unit_variance():
    x = np.array([[0.5, 0.5], [0.55, 0.5]])
    s = NoiseFieldSampler(0.2, x, 0.01, 1)
    np.testing.assert_allclose(np.diag(s.discrete_correlation()), 1.0, atol=1e-14)
    assert 0 < s.discrete_correlation()[0, 1] < 1
