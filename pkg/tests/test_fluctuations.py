import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield_fluct.coefficients import build_model
from meanfield_fluct.fluctuations import (MartingaleObserver, ReferenceNoiseWarning, SemimartingaleObserver,
                                          StepRecorder, correlation_matrix, empirical_pairing, estimate_g,
                                          fluctuation_pairings, gaussian_fixture_variance, gaussianity_test,
                                          initial_covariance_Q, initial_reference, martingale_term, psd_clip,
                                          quadratic_variation, qv_increment, reference_pairings)
from meanfield_fluct.noise import CoarsenedSampler, ConfigurationError, NoiseFieldSampler, correlation_R
from meanfield_fluct.oracles import qv_brute_force
from meanfield_fluct.particles import (InitialDataSampler, SpatialGrid, StepData, reference_law,
                                       simulate_mckean_ensemble, simulate_particle_system)
from meanfield_fluct.testfunctions import FourierMode, TestFunction as Psi, ValueFactor, build_dictionary


class _One:
    """The constant test function 1."""

    def value(self, x, u):
        return np.ones(np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1]))

    def grad_u(self, x, u):
        return np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1]) + (np.shape(u)[-1],))


@pytest.fixture(scope="module")
def small_run():
    model = build_model("linrelax")
    init = InitialDataSampler(seed=1)
    law = reference_law(model, 0.2, 0.05, 0.1, init, n_locations=256, K=4, seed=3,
                        cloud_times=np.arange(0, 0.21, 0.05))
    grid = SpatialGrid(8)
    rec = StepRecorder()
    tr = simulate_particle_system(model, grid, 16, 0.2, 0.05, NoiseFieldSampler(0.1, grid.centers, 0.05, 4), init,
                                  snapshot_times=[0, 0.1, 0.2], observers=[rec])
    return model, init, law, tr, rec


def test_zero_scaling_and_constant_function_give_zero(small_run):
    model, init, law, tr, rec = small_run
    dic = build_dictionary()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ReferenceNoiseWarning)
        rec0 = fluctuation_pairings(tr, reference_pairings(law, dic), dic, C_MN=0.0)
    np.testing.assert_array_equal(rec0.pairings, 0.0)
    one = fluctuation_pairings(tr, reference_pairings(law, _One()), _One())
    np.testing.assert_allclose(one.pairings, 0.0, atol=1e-12)
    np.testing.assert_array_equal(martingale_term(rec.steps, _One()).values, 0.0)


def test_noisy_reference_is_flagged(small_run):
    model, init, law, tr, rec = small_run
    dic = build_dictionary()
    with pytest.warns(ReferenceNoiseWarning):
        r = fluctuation_pairings(tr, reference_pairings(law, dic), dic, C_MN=1e4)
    assert r.noisy_reference


def test_reference_pairing_missing_step(small_run):
    _, _, law, _, _ = small_run
    ref = reference_pairings(law, build_dictionary())
    with pytest.raises(KeyError):
        ref.at(99)


_QV_DIC = build_dictionary(1, 1, P_x=2, P_u=3, scales=(0.5, 1.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 4), st.integers(1, 3), st.floats(0.1, 3.0))
def test_qv_increment_matches_triple_loop(seed, N, M, C):
    g = np.random.default_rng(seed)
    x = g.random((N, 1))
    u = 0.2 + 2 * g.random((N, M, 1))
    sig = 0.3 + g.random((N, M, 1))
    data = StepData(0, 0.0, 0.02, x, u, np.zeros_like(u), sig, np.zeros_like(u), None, u)
    phi, psi = _QV_DIC.members[1], _QV_DIC.members[4]
    fast = qv_increment(data, phi, psi, correlation_matrix(x, 0.15), C)[0, 0]
    assert fast == pytest.approx(qv_brute_force(data, phi, psi, 0.15, C), abs=1e-13)


def test_correlation_matrix_is_torus_symmetric():
    x = np.array([[0.02], [0.98], [0.5]])
    R = correlation_matrix(x, 0.1)
    np.testing.assert_allclose(R, R.T)
    assert R[0, 1] == pytest.approx(correlation_R(np.array([[0.04]]), 0.1)[0])
    assert R[0, 2] == 0.0


def test_quadratic_variation_observer_agrees_with_batch(small_run):
    model, init, law, tr, rec = small_run
    dic = build_dictionary()
    obs = MartingaleObserver(dic, epsilon=0.1)
    for s in rec.steps:
        obs(s)
    batch = quadratic_variation(rec.steps, dic, dic, 0.1)
    np.testing.assert_allclose(obs.record().qv, batch, atol=1e-15)
    q = batch[-1]
    assert np.all(np.linalg.eigvalsh(0.5 * (q + q.T)) > -1e-14)
    assert np.all(np.diff(np.array([np.diag(b) for b in batch]), axis=0) >= 0)
    with pytest.raises(ValueError):
        MartingaleObserver(dic)


def test_martingale_has_mean_zero_and_isometry():
    # E M_T = 0 and E M_T^2 = E <M>_T across independent noise seeds
    model = build_model("linrelax")
    init = InitialDataSampler(seed=1)
    grid = SpatialGrid(4)
    psi = Psi(FourierMode((0,)), ValueFactor(0, 1.0))
    m_end, q_end = [], []
    for r in range(300):
        obs = MartingaleObserver(psi, epsilon=0.2)
        simulate_particle_system(model, grid, 4, 0.2, 0.05, NoiseFieldSampler(0.2, grid.centers, 0.05, 1000 + r),
                                 init, observers=[obs])
        rec = obs.record()
        m_end.append(rec.values[-1, 0])
        q_end.append(rec.qv[-1, 0, 0])
    m_end = np.array(m_end)
    se = m_end.std(ddof=1) / math.sqrt(m_end.size)
    assert abs(m_end.mean()) < 4 * se
    sq = m_end ** 2
    assert abs(sq.mean() - np.mean(q_end)) < 4 * sq.std(ddof=1) / math.sqrt(sq.size)


def test_Q_matches_closed_form_fixture():
    # spatially constant data u = a0 |xi| and psi = exp(-u^2 / (2 s^2)): Q is a closed form
    a0, s = 0.8, 0.6
    init = InitialDataSampler(alpha=1.0, seed=2, a0=a0, a1=0.0, c=0.0)
    psi = Psi(FourierMode((0,)), ValueFactor(0, s))
    est = initial_covariance_Q(init, psi, SpatialGrid(4).centers, n_mc=20_000)
    assert abs(est.Q[0, 0] - gaussian_fixture_variance(a0, s)) < 4 * est.Q_stderr[0, 0]
    with pytest.raises(ValueError):
        initial_covariance_Q(init, psi, SpatialGrid(4).centers, n_mc=10)


def test_initial_reference_matches_monte_carlo():
    init = InitialDataSampler(alpha=0.5, seed=5, a0=0.6, a1=0.3, c=0.7, independent=True)
    dic = build_dictionary(1, 1, P_x=3, P_u=3, scales=(0.5, 1.0))
    quad = initial_reference(init, dic)
    x = np.random.default_rng(0).random((200_000, 1))
    u = init.sample(x, np.arange(1), location_ids=np.arange(x.shape[0]))
    vals = dic.evaluate(x, u[:, 0]).psi
    mc = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
    assert np.all(np.abs(quad - mc) < 4.5 * se + 1e-12)
    with pytest.raises(ConfigurationError):
        initial_reference(InitialDataSampler(d_v=2), dic)


def test_estimate_g_matches_direct_sum():
    model = build_model("linrelax")
    init = InitialDataSampler(seed=1)
    law = reference_law(model, 0.1, 0.05, 0.1, init, n_locations=64, K=2, seed=3)
    grid = SpatialGrid(4)
    ens = simulate_mckean_ensemble(model, grid, 3, 0.1, 0.05, NoiseFieldSampler(0.1, grid.centers, 0.05, 9),
                                   init, law=law, snapshot_times=[0, 0.05, 0.1])
    psi = Psi(FourierMode((1,)), ValueFactor(1, 0.7))
    est = estimate_g(ens, model, psi, 0.1, copy_chunk=2)

    def integrand(step):
        s = ens.snapshots[step]
        sig = model.diffusion(s.x[:, None, :], s.t, s.u, law.summary(step))
        total = 0.0
        for k in range(3):
            for i in range(4):
                for j in range(4):
                    R = correlation_R(np.atleast_2d(s.x[i] - s.x[j]), 0.1)[0]
                    a = psi.grad_u(s.x[i], s.u[i, k])[0] * sig[i, k, 0]
                    b = psi.grad_u(s.x[j], s.u[j, k])[0] * sig[j, k, 0]
                    total += a * b * R
        return total / (3 * 16)
    vals = [integrand(k) for k in (0, 1, 2)]
    expect = [0.0, 0.025 * (vals[0] + vals[1]), 0.025 * (vals[0] + 2 * vals[1] + vals[2])]
    np.testing.assert_allclose(est.g[:, 0, 0], expect, rtol=1e-12, atol=1e-16)
    with pytest.raises(ConfigurationError):
        estimate_g(ens, model, psi, 0.2)


def test_psd_clip():
    S, neg = psd_clip(np.array([[1.0, 0.0], [0.0, -0.5]]))
    np.testing.assert_allclose(S, [[1, 0], [0, 0]])
    assert neg == pytest.approx(0.5)


def test_empirical_pairing():
    class S:
        x = np.array([[0.25], [0.75]])
        u = np.array([[[1.0]], [[2.0]]])
    psi = Psi(FourierMode((0,)), ValueFactor(0, 1.0))
    assert empirical_pairing(S, psi)[0] == pytest.approx(0.5 * (math.exp(-0.5) + math.exp(-2.0)))


def _residual_max(model, law, sampler, init, dic, T, dt):
    grid = SpatialGrid(8)
    obs = SemimartingaleObserver(model, dic, law)
    simulate_particle_system(model, grid, 8, T, dt, sampler, init, observers=[obs])
    return obs.finish()


def test_semimartingale_residual_halves_with_dt():
    # noise-free, interaction-free dynamics: the only residual is the O(dt) Taylor
    # error of the explicit step, in the run and in the reference alike
    model = build_model("linear", rate=1.0, level=0.5, s0=0.0)
    init = InitialDataSampler(alpha=1.0, seed=1, a0=0.6, a1=0.3, c=0.5)
    dic = build_dictionary(1, 1, P_x=2, P_u=2)
    grid = SpatialGrid(8)
    T, dt = 0.4, 0.02
    fine = NoiseFieldSampler(0.1, grid.centers, dt / 4, 7)
    out = []
    for factor in (4, 2, 1):
        h = dt / 4 * factor
        law = reference_law(model, T, h, 0.1, init, n_locations=64, K=2, seed=3,
                            cloud_times=np.arange(0, T + 1e-12, h))
        s = CoarsenedSampler(fine, factor) if factor > 1 else fine
        rec = _residual_max(model, law, s, init, dic, T, h)
        out.append(np.max(np.abs(rec.residual)))
    r1, r2 = out[0] / out[1], out[1] / out[2]
    assert 1.5 < r1 < 2.7 and 1.5 < r2 < 2.7


def test_semimartingale_residual_within_reference_budget():
    model = build_model("linrelax")
    init = InitialDataSampler(seed=1)
    dic = build_dictionary(1, 1, P_x=2, P_u=2)
    T, dt = 0.2, 0.01
    law = reference_law(model, T, dt, 0.1, init, n_locations=1024, K=4, seed=3,
                        cloud_times=np.arange(0, T + 1e-12, dt))
    grid = SpatialGrid(8)
    rec = _residual_max(model, law, NoiseFieldSampler(0.1, grid.centers, dt, 5), init, dic, T, dt)
    assert rec.residual[0].tolist() == [0.0] * dic.P
    assert np.all(np.abs(rec.residual) <= rec.reference_budget + 0.05)
    with pytest.raises(ValueError):
        SemimartingaleObserver(model, dic, law).finish()


def test_gaussianity_test_accepts_gaussian_and_flags_inflation():
    z = np.random.default_rng(11).standard_normal(400) * math.sqrt(0.3)
    ok = gaussianity_test(z, 0.3)
    assert ok.p_value > 0.01 and not ok.excess_variance
    bad = gaussianity_test(z * math.sqrt(2.0), 0.3)
    assert bad.excess_variance and bad.variance_ratio > 1.5
    with pytest.raises(ValueError):
        gaussianity_test(z[:50], 0.3)
    with pytest.raises(ValueError):
        gaussianity_test(z, 0.0)
