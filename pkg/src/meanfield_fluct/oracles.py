"""Exact identities that must hold to rounding error, run as one suite."""
from __future__ import annotations

import itertools

import numpy as np

from . import rng
from .coefficients import build_model
from .fluctuations import correlation_matrix, qv_increment
from .fokker_planck import FPGrid1D, solve_fp_1d
from .noise import NoiseFieldSampler, correlation_R, torus_delta
from .particles import (InitialDataSampler, SpatialGrid, StepData, coupled_error, coupled_run,
                        reference_law)
from .testfunctions import apply_L, apply_linearized_L, build_dictionary
from .transport import WeightedPointCloud, wasserstein


def random_cloud(g: np.random.Generator, n: int, d: int = 1, d_v: int = 1, u_max: float = 3.0):
    w = g.random(n) + 0.1
    return WeightedPointCloud(g.random((n, d)), u_max * g.random((n, d_v)), w / w.sum())


def exactness_gap(model, mu: WeightedPointCloud, nu: WeightedPointCloud, dictionary, t: float = 0.0) -> float:
    """max_p |<mu, L(mu) psi_p> - <nu, L(nu) psi_p> - <mu - nu, Lin(mu, nu) psi_p>|."""
    lhs = mu.w @ apply_L(mu, t, dictionary, model, points=(mu.x, mu.u)) - \
        nu.w @ apply_L(nu, t, dictionary, model, points=(nu.x, nu.u))
    lin = apply_linearized_L(mu, nu, t, dictionary, model)
    rhs = mu.w @ lin(mu.x, mu.u) - nu.w @ lin(nu.x, nu.u)
    return float(np.max(np.abs(lhs - rhs)))


def brute_force_assignment(a: WeightedPointCloud, b: WeightedPointCloud, p: int = 1) -> float:
    """W_p between equal-size uniform clouds by enumerating all permutations."""
    from .transport import product_cost
    C = product_cost(a.x, a.u, b.x, b.u, p)
    n = a.n
    best = min(sum(C[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
    return float((best / n) ** (1.0 / p))


def qv_brute_force(data: StepData, phi, psi, epsilon: float, C_MN: float) -> float:
    """Explicit triple loop over (i, j, k) for one step and scalar phi, psi."""
    N, M, d_v = data.u.shape
    total = 0.0
    for i in range(N):
        for j in range(N):
            R = float(correlation_R(np.atleast_2d(torus_delta(data.x[i], data.x[j])), epsilon)[0])
            for k in range(M):
                a = phi.grad_u(data.x[i], data.u[i, k]) * data.sigma[i, k]
                b = psi.grad_u(data.x[j], data.u[j, k]) * data.sigma[j, k]
                total += float(np.sum(a * b)) * R
    return C_MN ** 2 / M * total / (M * N * N) * data.dt


def run_all(seed: int = 0, n_instances: int = 20) -> dict:
    """name -> (value, threshold, passed)."""
    g = np.random.Generator(np.random.Philox(key=rng.derive_seed(seed, 99)))
    out = {}
    eps = 0.1
    out["R(0) = 1"] = _le(abs(float(correlation_R(np.zeros((1, 1)), eps)[0]) - 1.0), 1e-8)
    far = np.linspace(2 * eps, 0.5, 50)[:, None]
    out["R = 0 beyond 2 eps"] = _le(float(np.max(np.abs(correlation_R(far, eps)))), 0.0)

    model = build_model("linrelax")
    dic = build_dictionary(1, 1, P_x=3, P_u=3, scales=(0.5, 1.0))
    gap = max(exactness_gap(model, random_cloud(g, 7), random_cloud(g, 5), dic) for _ in range(n_instances))
    out["exactness identity"] = _le(gap, 1e-8)
    out["no-flux boundary"] = _le(dic.boundary_flux(), 1e-12)

    dec = build_model("decoupled")
    init = InitialDataSampler(seed=rng.derive_seed(seed, 1))
    law = reference_law(dec, 0.2, 0.05, eps, init, n_locations=64, K=2, seed=rng.derive_seed(seed, 2))
    worst = 0.0
    for M, N in ((4, 8), (16, 16)):
        grid = SpatialGrid(N)
        s = NoiseFieldSampler(eps, grid.centers, 0.05, rng.derive_seed(seed, 3))
        worst = max(worst, coupled_error([coupled_run(dec, grid, M, 0.2, 0.05, s, init, law)]))
    out["decoupled coupled error"] = _le(worst, 0.0)

    tgap = 0.0
    for _ in range(n_instances):
        n = int(g.integers(2, 7))
        a = WeightedPointCloud(g.random((n, 1)), 2 * g.random((n, 1)))
        b = WeightedPointCloud(g.random((n, 1)), 2 * g.random((n, 1)))
        tgap = max(tgap, abs(wasserstein(a, b, 1, method="network-simplex").value - brute_force_assignment(a, b)))
    out["network simplex vs assignment"] = _le(tgap, 1e-9)

    zero = build_model("linear", rate=0.0, s0=0.0)
    grid = FPGrid1D(6.0, 60)
    f0 = np.exp(-grid.centers)
    sol = solve_fp_1d(zero, f0, 0.5, grid, dt=0.01)
    out["Fokker-Planck zero coefficients"] = _le(float(np.max(np.abs(sol.densities[-1] - sol.densities[0]))), 1e-14)

    from .experiments import fit_rate
    sizes = np.array([16.0, 64.0, 256.0, 1024.0])
    out["power-law fit"] = _le(abs(fit_rate(sizes, sizes ** -0.5).slope + 0.5), 1e-12)

    x = np.array([[0.1], [0.17]])
    u = 1.0 + g.random((2, 2, 1))
    sig = 0.5 + g.random((2, 2, 1))
    data = StepData(0, 0.0, 0.01, x, u, np.zeros_like(u), sig, np.zeros_like(u), None, u)
    phi, psi = dic.members[1], dic.members[4]
    R = correlation_matrix(x, eps)
    fast = qv_increment(data, phi, psi, R, 2.0)[0, 0]
    out["QV double sum"] = _le(abs(fast - qv_brute_force(data, phi, psi, eps, 2.0)), 1e-12)
    return out


def _le(value: float, threshold: float):
    return float(value), threshold, bool(value <= threshold)
