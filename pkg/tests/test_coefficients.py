import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield_fluct.coefficients import (MODELS, PairwiseKernel, audit_regularity, build_model, diffusion_sigma,
                                          drift_b, lacunary_hoelder_constant, lacunary_profile)
from meanfield_fluct.transport import WeightedPointCloud


def _cloud(seed=0, n=5, d=1):
    g = np.random.default_rng(seed)
    w = g.random(n) + 0.1
    return WeightedPointCloud(g.random((n, d)), 3 * g.random((n, 1)), w / w.sum())


def _brute_linrelax(p, x, u, mu):
    """Direct evaluation of the linrelax formulas by an explicit loop over atoms."""
    def k(z):
        return p["lam0"] + p["lam1"] * math.cos(2 * math.pi * z)
    inner_b = sum(w * k(x - y[0]) * v[0] / (1 + v[0] ** 2) for y, v, w in zip(mu.x, mu.u, mu.w))
    inner_s = sum(w * k(x - y[0]) / (1 + v[0] ** 2) for y, v, w in zip(mu.x, mu.u, mu.w))
    prof = float(lacunary_profile(np.array([x]), p["alpha"]))
    b = -p["relax"] * u + p["level"] + p["c_b"] * prof + math.tanh(p["kappa_b"] * inner_b)
    s = p["s0"] + math.tanh(p["kappa_s"] * inner_s)
    return b, s


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_linrelax_matches_direct_loop(alpha):
    m = build_model("linrelax", alpha=alpha, lam0=0.3, lam1=0.8)
    mu = _cloud(1)
    for x, u in ((0.1, 0.4), (0.77, 2.5)):
        b_ref, s_ref = _brute_linrelax(m.params, x, u, mu)
        assert float(drift_b(m, np.array([x]), 0.0, np.array([u]), mu)[0]) == pytest.approx(b_ref, abs=1e-13)
        assert float(diffusion_sigma(m, np.array([x]), 0.0, np.array([u]), mu)[0]) == pytest.approx(s_ref, abs=1e-13)


def test_separable_and_pairwise_kernels_agree():
    m = build_model("linrelax", lam0=0.2, lam1=1.0)
    mu = _cloud(2, n=9)
    x = np.linspace(0, 1, 6, endpoint=False)[:, None]
    u = np.linspace(0.1, 2, 6)[:, None]
    fast = m.inner_b(x, 0.0, u, m.summarize(0.0, mu))
    pair = PairwiseKernel(func=m.b1, chunk=2)
    slow = pair.integrate_right(x, 0.0, u, mu)
    np.testing.assert_allclose(fast, slow, atol=1e-13)


def test_decoupled_ignores_measure():
    m = build_model("decoupled")
    x, u = np.array([0.3]), np.array([1.0])
    np.testing.assert_array_equal(drift_b(m, x, 0, u, _cloud(1)), drift_b(m, x, 0, u, _cloud(7)))


def test_homogeneous_has_no_x_dependence():
    m = build_model("homogeneous")
    mu = _cloud(3)
    a = drift_b(m, np.array([0.1]), 0, np.array([1.0]), mu)
    b = drift_b(m, np.array([0.6]), 0, np.array([1.0]), mu)
    np.testing.assert_allclose(a, b, atol=1e-15)
    assert m.x_homogeneous


def test_empty_measure_and_negative_u_rejected():
    m = build_model("linrelax")
    with pytest.raises(ValueError):
        drift_b(m, np.array([0.1]), 0, np.array([1.0]), None)
    with pytest.raises(ValueError):
        drift_b(m, np.array([0.1]), 0, np.array([-1.0]), _cloud())


def test_unknown_model():
    with pytest.raises(ValueError, match="unknown model"):
        build_model("nope")


def test_lacunary_profile_bounded_and_periodic():
    x = np.linspace(0, 1, 1001)[:, None]
    w = lacunary_profile(x, 0.5)
    assert np.max(np.abs(w)) <= 1.0 + 1e-12
    assert w[0] == pytest.approx(w[-1], abs=1e-12)
    assert w[0] == pytest.approx(1.0 - 2.0 ** (-0.5 * 25), abs=1e-12)  # truncated geometric sum at 0


def test_lacunary_hoelder_exponent_is_sharp():
    # near 0 the increments scale like h^alpha: the log-log slope sits close to alpha
    alpha = 0.5
    h = 2.0 ** -np.arange(6, 14)
    inc = lacunary_profile(np.zeros((1, 1)), alpha)[0] - lacunary_profile(h[:, None], alpha)
    slope = np.polyfit(np.log(h), np.log(inc), 1)[0]
    assert abs(slope - alpha) < 0.1


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_lacunary_respects_declared_constant(a, b):
    alpha = 0.5
    dist = min(abs(a - b), 1 - abs(a - b))
    if dist == 0:
        return
    wa, wb = lacunary_profile(np.array([[a], [b]]), alpha)
    assert abs(wa - wb) <= lacunary_hoelder_constant(alpha) * dist ** alpha + 1e-12


@pytest.mark.parametrize("name", ["linrelax", "decoupled", "linear", "homogeneous"])
def test_builtin_models_pass_audit(name):
    rep = audit_regularity(build_model(name), n_samples=200)
    assert rep.ok, rep.violations


def test_audit_flags_adversarial_model():
    rep = audit_regularity(build_model("adversarial"), n_samples=200)
    assert not rep.ok
    assert "b" in " ".join(map(str, rep.violations))


def test_audit_needs_enough_samples():
    with pytest.raises(ValueError):
        audit_regularity(build_model("linear"), n_samples=10)


def test_two_dimensional_model_shapes():
    m = build_model("linrelax", d=2, d_v=2)
    mu = WeightedPointCloud(np.random.default_rng(0).random((4, 2)), np.ones((4, 2)))
    out = drift_b(m, np.array([[0.1, 0.2], [0.4, 0.4]]), 0, np.ones((2, 2)), mu)
    assert out.shape == (2, 2)
    assert set(MODELS) >= {"linrelax", "decoupled", "linear", "adversarial", "homogeneous"}
