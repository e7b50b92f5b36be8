import numpy as np
import pytest
from scipy import stats

from meanfield_fluct.coefficients import build_model
from meanfield_fluct.fokker_planck import FPGrid1D, FPSolution, solve_fp_1d, w1_samples_vs_density
from meanfield_fluct.noise import ConfigurationError


def test_mass_is_conserved():
    model = build_model("homogeneous")
    grid = FPGrid1D(8.0, 200)
    sol = solve_fp_1d(model, lambda u: np.exp(-(u - 1) ** 2), 0.5, grid)
    np.testing.assert_allclose(sol.masses, 1.0, atol=1e-12)
    assert np.all(sol.densities >= 0)


def test_zero_coefficients_leave_density_unchanged():
    model = build_model("linear", rate=0.0, s0=0.0)
    grid = FPGrid1D(6.0, 60)
    sol = solve_fp_1d(model, np.exp(-grid.centers), 0.5, grid, dt=0.01)
    np.testing.assert_allclose(sol.densities[-1], sol.densities[0], atol=1e-14)


def test_long_time_limit_is_reflected_gaussian():
    # du = (level - rate u) dt + s0 dW reflected at 0: stationary density
    # proportional to exp(-rate (u - level/rate)^2 / s0^2) on the half line
    rate, level, s0 = 1.0, 0.5, 0.8
    model = build_model("linear", rate=rate, level=level, s0=s0)
    grid = FPGrid1D(6.0, 300)
    sol = solve_fp_1d(model, lambda u: np.exp(-4 * (u - 3) ** 2), 10.0, grid)
    target = np.exp(-rate * (grid.centers - level / rate) ** 2 / s0 ** 2)
    target /= target.sum() * grid.du
    assert np.max(np.abs(sol.densities[-1] - target)) < 0.02


def test_snapshots_and_cdf():
    model = build_model("homogeneous")
    sol = solve_fp_1d(model, lambda u: np.exp(-u), 0.4, FPGrid1D(8.0, 100), dt=0.002, snapshot_times=[0, 0.2, 0.4])
    np.testing.assert_allclose(sol.times, [0, 0.2, 0.4])
    assert sol.cdf()[-1] == pytest.approx(1.0, abs=1e-12)


def test_cfl_violation_and_model_checks():
    with pytest.raises(ConfigurationError, match="CFL"):
        solve_fp_1d(build_model("homogeneous"), lambda u: np.exp(-u), 0.5, FPGrid1D(8.0, 800), dt=0.1)
    with pytest.raises(ConfigurationError, match="x-homogeneous"):
        solve_fp_1d(build_model("linrelax"), lambda u: np.exp(-u), 0.5)
    with pytest.raises(ValueError):
        solve_fp_1d(build_model("homogeneous"), -np.ones(800), 0.5)


def test_w1_against_scipy_for_fine_density():
    # a density on a fine grid vs samples: compare with scipy's weighted-sample W1
    grid = FPGrid1D(8.0, 4000)
    f = stats.expon.pdf(grid.centers)
    sol = FPSolution(grid, np.array([0.0]), (f / (f.sum() * grid.du))[None], np.ones(1), 0.1)
    samples = np.random.default_rng(0).exponential(size=3000) * 1.1
    ours = w1_samples_vs_density(samples, sol)
    ref = stats.wasserstein_distance(samples, grid.centers, v_weights=f)
    assert ours == pytest.approx(ref, abs=2 * grid.du)


def test_w1_of_exact_quantiles_is_small():
    grid = FPGrid1D(10.0, 2000)
    f = stats.expon.pdf(grid.centers)
    sol = FPSolution(grid, np.array([0.0]), (f / (f.sum() * grid.du))[None], np.ones(1), 0.1)
    q = stats.expon.ppf((np.arange(5000) + 0.5) / 5000)
    assert w1_samples_vs_density(q, sol) < 2e-3
