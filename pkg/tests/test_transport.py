import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats

from meanfield_fluct.transport import (WeightedPointCloud, empirical_measure, joint_empirical, product_cost,
                                       wasserstein, wasserstein_1d_values)


def _perm_oracle(a, b, p):
    C = product_cost(a.x, a.u, b.x, b.u, p)
    n = a.n
    best = min(sum(C[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
    return (best / n) ** (1 / p)


def _lp_oracle(a, b, p):
    """Transport LP solved by scipy's HiGHS, independent of the network simplex."""
    C = product_cost(a.x, a.u, b.x, b.u, p)
    n, m = C.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        A[n + j, j::m] = 1
    res = optimize.linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a.w, b.w]), bounds=(0, None), method="highs")
    return res.fun ** (1 / p)


@pytest.mark.parametrize("p", [1, 2])
def test_network_simplex_equals_permutation_search(p):
    g = np.random.default_rng(5)
    for _ in range(25):
        n = int(g.integers(1, 7))
        a = WeightedPointCloud(g.random((n, 1)), 2 * g.random((n, 1)))
        b = WeightedPointCloud(g.random((n, 1)), 2 * g.random((n, 1)))
        assert wasserstein(a, b, p, method="network-simplex").value == pytest.approx(_perm_oracle(a, b, p), abs=1e-9)


def test_unequal_weights_match_lp():
    g = np.random.default_rng(6)
    for _ in range(10):
        n, m = g.integers(2, 7, size=2)
        wa, wb = g.random(n) + .1, g.random(m) + .1
        a = WeightedPointCloud(g.random((n, 2)), g.random((n, 1)), wa / wa.sum())
        b = WeightedPointCloud(g.random((m, 2)), g.random((m, 1)), wb / wb.sum())
        assert wasserstein(a, b, 1).value == pytest.approx(_lp_oracle(a, b, 1), abs=1e-8)


def test_torus_distance_used_in_space():
    a = WeightedPointCloud([[0.02]], [[0.0]])
    b = WeightedPointCloud([[0.98]], [[0.0]])
    assert wasserstein(a, b).value == pytest.approx(0.04, abs=1e-12)


def test_exact_1d_matches_scipy():
    g = np.random.default_rng(7)
    ua, ub = g.normal(size=200), g.normal(1, 2, size=200)
    a = WeightedPointCloud(np.zeros((200, 1)), np.abs(ua)[:, None])
    b = WeightedPointCloud(np.zeros((200, 1)), np.abs(ub)[:, None])
    w = wasserstein(a, b, 1, method="exact-1d")
    assert w.method == "exact-1d"
    assert w.value == pytest.approx(stats.wasserstein_distance(np.abs(ua), np.abs(ub)), abs=1e-12)


def test_weighted_quantile_w1_matches_scipy():
    g = np.random.default_rng(8)
    a, b = g.normal(size=50), g.normal(size=70)
    wa, wb = g.random(50), g.random(70)
    assert wasserstein_1d_values(a, b, 1, wa, wb) == pytest.approx(
        stats.wasserstein_distance(a, b, wa, wb), abs=1e-12)


def test_subsampled_close_to_exact():
    g = np.random.default_rng(9)
    a = WeightedPointCloud(g.random((400, 1)), g.random((400, 1)))
    b = WeightedPointCloud(g.random((400, 1)), 0.5 + g.random((400, 1)))
    exact = wasserstein(a, b, 1, method="network-simplex").value
    sub = wasserstein(a, b, 1, method="subsampled", n_sub=200, n_rep=6)
    assert sub.resamples == 6 and sub.stderr > 0
    assert abs(sub.value - exact) < 0.1


def test_invalid_inputs():
    a = WeightedPointCloud([[0.1]], [[1.0]])
    with pytest.raises(ValueError):
        wasserstein(a, a, p=3)
    with pytest.raises(ValueError):
        WeightedPointCloud([[0.1]], [[1.0]], [0.5])
    with pytest.raises(ValueError):
        WeightedPointCloud(np.zeros((0, 1)), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        wasserstein(a, WeightedPointCloud([[0.1, 0.2]], [[1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 5))
def test_metric_properties(seed, n):
    g = np.random.default_rng(seed)
    c = [WeightedPointCloud(g.random((n, 1)), g.random((n, 1))) for _ in range(3)]
    d = lambda i, j: wasserstein(c[i], c[j], 1).value
    assert d(0, 0) == pytest.approx(0, abs=1e-12)
    assert d(0, 1) == pytest.approx(d(1, 0), abs=1e-12)
    assert d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12


class _State:
    def __init__(self, x, u):
        self.x, self.u = x, u


def test_empirical_and_joint_measures():
    g = np.random.default_rng(0)
    st_ = _State(np.array([[0.25], [0.75]]), g.random((2, 3, 1)))
    mu = empirical_measure(st_)
    assert mu.n == 6 and mu.w.sum() == pytest.approx(1)
    J = joint_empirical(st_)
    assert J.w.size == 12
    marg = J.marginal_first()
    assert marg.n == 6
    np.testing.assert_allclose(np.sort(marg.w), np.full(6, 1 / 6))
    sub = joint_empirical(st_, max_atoms=6)
    assert sub.pair_subsample == 2
