"""Fluctuation pairings, the martingale term and its quadratic variation, the
limiting covariances g_t and Q, the semimartingale residual and Gaussianity tests."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .coefficients import CoefficientModel
from .noise import ConfigurationError, correlation_R, torus_delta
from .particles import InitialDataSampler, LawPath, ParticleSystemState, StepData, Trajectory
from .testfunctions import TestFunctionDictionary, linearization_data, linearized_values
from .transport import WeightedPointCloud


class ReferenceNoiseWarning(UserWarning):
    """The reference law is too noisy for the fluctuation scale being measured."""


# ---------------------------------------------------------------- evaluation helpers

def _values(psi, x, u, orthonormal=False):
    """(psi, grad) at points of any leading shape: (..., P) and (..., P, d_v)."""
    if isinstance(psi, TestFunctionDictionary):
        ev = psi.evaluate(x, u, orthonormal)
        return ev.psi, ev.grad
    if isinstance(psi, (list, tuple)):
        return (np.stack([p.value(x, u) for p in psi], axis=-1),
                np.stack([p.grad_u(x, u) for p in psi], axis=-2))
    return psi.value(x, u)[..., None], psi.grad_u(x, u)[..., None, :]


def _n_members(psi) -> int:
    if isinstance(psi, TestFunctionDictionary):
        return psi.P
    if isinstance(psi, (list, tuple)):
        return len(psi)
    return 1


def _state_points(x, u):
    """Broadcast (N, d) locations against (N, M, d_v) values."""
    N, M, _ = u.shape
    return np.broadcast_to(x[:, None, :], (N, M, x.shape[1])), u


def correlation_matrix(x, epsilon: float) -> np.ndarray:
    """R^eps(x_i - x_j) for all pairs of locations on the torus."""
    return correlation_R(torus_delta(x[:, None, :], x[None, :, :]), epsilon)


def _cloud_pairing(cloud: WeightedPointCloud, psi, orthonormal=False):
    vals, _ = _values(psi, cloud.x, cloud.u, orthonormal)
    mean = cloud.w @ vals
    # atoms are treated as independent draws
    var = cloud.w @ (vals - mean) ** 2
    n_eff = 1.0 / np.sum(cloud.w ** 2)
    return mean, np.sqrt(var / n_eff), np.sqrt(var)


# ---------------------------------------------------------------- reference pairings

@dataclass
class ReferencePairings:
    """<f(t), psi_p> at reference steps, with standard errors and the spread of psi under f."""

    dt: float
    values: dict                       # step -> (P,)
    stderr: dict                       # step -> (P,)
    spread: dict                       # step -> (P,)  standard deviation of psi under f

    def at(self, step: int):
        if step not in self.values:
            raise KeyError(f"no reference pairing stored for step {step}")
        return self.values[step], self.stderr[step]


def reference_pairings(law: LawPath, psi, orthonormal: bool = False,
                       initial_override: np.ndarray | None = None) -> ReferencePairings:
    """Pair every stored reference cloud with the test functions.

    ``initial_override`` replaces the t=0 value by a deterministic
    quadrature (standard error 0).
    """
    vals, ses, sds = {}, {}, {}
    for step in law.snapshot_steps:
        m, se, sd = _cloud_pairing(law.cloud_at(step), psi, orthonormal)
        vals[step], ses[step], sds[step] = m, se, sd
    if initial_override is not None:
        vals[0] = np.asarray(initial_override, dtype=float)
        ses[0] = np.zeros_like(vals[0])
        if 0 not in sds:
            sds[0] = np.full_like(vals[0], np.nan)
    return ReferencePairings(law.dt, vals, ses, sds)


def _half_normal_rule(n: int = 96, top: float = 9.0):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    z = 0.5 * top * (nodes + 1.0)
    w = 0.5 * top * weights * 2.0 * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return z, w


def initial_reference(initial: InitialDataSampler, psi, d: int = 1, orthonormal: bool = False,
                      n_x: int | None = None, n_s: int = 48) -> np.ndarray:
    """Deterministic <f_0, psi_p> for the built-in initial data (d_v = 1).

    The expectation over (|xi0|, |xi1|) is a Gauss-Legendre rule against the
    half-normal density, tabulated on Chebyshev nodes of the profile factor
    s = 1 + c w(x). The x integral uses the midpoint rule on an odd number
    of points per axis, which does not alias the dyadic frequencies of the
    lacunary profile.
    """
    if initial.d_v != 1:
        raise ConfigurationError("deterministic initial pairings are implemented for d_v = 1")
    if n_x is None:
        n_x = {1: 3 ** 10, 2: 3 ** 5}.get(d)
        if n_x is None:
            raise ConfigurationError("deterministic initial pairings need d <= 2")
    ax = (np.arange(n_x) + 0.5) / n_x
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    x = np.stack([m.ravel() for m in mesh], axis=-1)
    s_x = 1.0 + initial.c * initial.spatial_profile(x)
    lo, hi = float(s_x.min()), float(s_x.max())
    z, wz = _half_normal_rule()
    if hi - lo < 1e-14:
        s_nodes = np.array([lo])
    else:
        k = np.arange(n_s)
        s_nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * (k + 0.5) / n_s)
    u = initial.a0 * z[None, :, None] * s_nodes[:, None, None] + initial.a1 * z[None, None, :]
    P = _n_members(psi)
    # E h(u) at each s node for each member, with the member's x factor set aside
    table = np.empty((s_nodes.size, P))
    members = _member_list(psi)
    for p, m in enumerate(members):
        hv = m.h.value(u[..., None])
        table[:, p] = np.einsum("sij,i,j->s", hv, wz, wz)
    if s_nodes.size == 1:
        Eh = np.broadcast_to(table[0], (x.shape[0], P))
    else:
        cheb = np.polynomial.chebyshev
        t_nodes = (2.0 * s_nodes - lo - hi) / (hi - lo)
        coef = cheb.chebfit(t_nodes, table, n_s - 1)
        Eh = cheb.chebval((2.0 * s_x - lo - hi) / (hi - lo), coef).T
    gx = np.stack([m.g.value(x) for m in members], axis=-1)
    out = np.mean(gx * Eh, axis=0)
    if orthonormal and isinstance(psi, TestFunctionDictionary):
        out = out @ psi.coef
    return out


def _member_list(psi):
    if isinstance(psi, TestFunctionDictionary):
        return list(psi.members)
    if isinstance(psi, (list, tuple)):
        return list(psi)
    return [psi]


# ---------------------------------------------------------------- pairings

@dataclass
class FluctuationRecord:
    times: np.ndarray
    steps: np.ndarray
    pairings: np.ndarray           # (n_times, P)
    C_MN: float
    reference: np.ndarray          # (n_times, P)
    reference_stderr: np.ndarray   # (n_times, P)
    noisy_reference: bool = False
    run_id: int = 0


def fluctuation_pairings(trajectory: Trajectory, reference: ReferencePairings, psi,
                         C_MN: float | None = None, orthonormal: bool = False,
                         warn_ratio: float = 0.1, run_id: int = 0) -> FluctuationRecord:
    """<eta_t, psi_p> = C (<f_MN(t), psi_p> - <f(t), psi_p>) at every stored snapshot."""
    steps = sorted(trajectory.snapshots)
    M = trajectory.final.M
    C = math.sqrt(M) if C_MN is None else float(C_MN)
    P = _n_members(psi)
    out = np.empty((len(steps), P))
    ref = np.empty_like(out)
    ref_se = np.empty_like(out)
    noisy = False
    for a, step in enumerate(steps):
        s = trajectory.snapshots[step]
        xs, us = _state_points(s.x, s.u)
        vals, _ = _values(psi, xs, us, orthonormal)
        emp = vals.reshape(-1, P).mean(axis=0)
        ref[a], ref_se[a] = reference.at(step)
        out[a] = C * (emp - ref[a])
        spread = reference.spread.get(step)
        if C != 0.0 and spread is not None and np.all(np.isfinite(spread)):
            if np.any(C * ref_se[a] > warn_ratio * np.maximum(spread, 1e-300)):
                noisy = True
    if noisy:
        warnings.warn("reference standard errors are not small against the fluctuation scale",
                      ReferenceNoiseWarning, stacklevel=2)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite fluctuation pairing")
    return FluctuationRecord(np.array(steps) * trajectory.dt, np.array(steps), out, C, ref, ref_se,
                             noisy, run_id)


def empirical_pairing(state: ParticleSystemState, psi, orthonormal: bool = False) -> np.ndarray:
    xs, us = _state_points(state.x, state.u)
    vals, _ = _values(psi, xs, us, orthonormal)
    return vals.reshape(-1, vals.shape[-1]).mean(axis=0)


# ---------------------------------------------------------------- martingale and QV

def _sigma_grad(data: StepData, psi, orthonormal):
    xs, us = _state_points(data.x, data.u)
    _, grad = _values(psi, xs, us, orthonormal)          # (N, M, P, d_v)
    return grad * data.sigma[:, :, None, :]


def martingale_increment(data: StepData, psi, C_MN: float, orthonormal: bool = False) -> np.ndarray:
    """(C/MN) sum_{i,k} grad psi . sigma dW with start-of-step values."""
    if data.dW is None:
        raise ValueError("noise increments are missing for this step")
    N, M, _ = data.u.shape
    B = _sigma_grad(data, psi, orthonormal)
    return C_MN / (M * N) * np.einsum("ikpb,ikb->p", B, data.dW)


def qv_increment(data: StepData, phi, psi, R: np.ndarray, C_MN: float,
                 orthonormal: bool = False) -> np.ndarray:
    """(C^2/M)(1/(M N^2)) sum_{i,j,k} (grad phi sigma)_ik (grad psi sigma)_jk R_ij dt as a P x P block."""
    N, M, _ = data.u.shape
    Ba = _sigma_grad(data, phi, orthonormal)
    Bb = Ba if psi is phi else _sigma_grad(data, psi, orthonormal)
    out = np.zeros((Ba.shape[2], Bb.shape[2]))
    for beta in range(Ba.shape[3]):
        RB = (R @ Bb[..., beta].reshape(N, -1)).reshape(Bb.shape[:3])
        out += np.einsum("ikp,ikq->pq", Ba[..., beta], RB)
    return C_MN ** 2 / M * out / (M * N * N) * data.dt


@dataclass
class MartingaleRecord:
    times: np.ndarray
    values: np.ndarray             # (n_steps + 1, P)
    qv: np.ndarray | None          # (n_steps + 1, P, P)


class MartingaleObserver:
    """Step observer accumulating M_t(psi_p) and, optionally, its quadratic variation."""

    def __init__(self, psi, C_MN: float | None = None, epsilon: float | None = None,
                 orthonormal: bool = False, qv: bool = True):
        if qv and epsilon is None:
            raise ValueError("the quadratic variation needs the correlation radius epsilon")
        self.psi, self.C, self.epsilon = psi, C_MN, epsilon
        self.orthonormal, self.want_qv = orthonormal, qv
        self._R = None
        P = _n_members(psi)
        self._t = [0.0]
        self._m = [np.zeros(P)]
        self._q = [np.zeros((P, P))] if qv else None

    def __call__(self, data: StepData):
        C = math.sqrt(data.u.shape[1]) if self.C is None else self.C
        self._m.append(self._m[-1] + martingale_increment(data, self.psi, C, self.orthonormal))
        if self.want_qv:
            if self._R is None:
                self._R = correlation_matrix(data.x, self.epsilon)
            self._q.append(self._q[-1] + qv_increment(data, self.psi, self.psi, self._R, C, self.orthonormal))
        self._t.append(data.t + data.dt)

    def record(self) -> MartingaleRecord:
        return MartingaleRecord(np.array(self._t), np.array(self._m),
                                np.array(self._q) if self.want_qv else None)


class StepRecorder:
    """Keeps every StepData so the martingale can be rebuilt afterwards."""

    def __init__(self):
        self.steps: list = []

    def __call__(self, data: StepData):
        self.steps.append(data)


def martingale_term(steps: Sequence[StepData], psi, C_MN: float | None = None,
                    orthonormal: bool = False) -> MartingaleRecord:
    if not steps:
        raise ValueError("no stored steps")
    obs = MartingaleObserver(psi, C_MN, orthonormal=orthonormal, qv=False)
    for s in steps:
        obs(s)
    return obs.record()


def quadratic_variation(steps: Sequence[StepData], phi, psi, epsilon: float,
                        C_MN: float | None = None, orthonormal: bool = False) -> np.ndarray:
    """Time series of the cross variation of M(phi) and M(psi); shape (n_steps + 1, P_phi, P_psi)."""
    if not steps:
        raise ValueError("no stored steps")
    R = correlation_matrix(steps[0].x, epsilon)
    acc = [np.zeros((_n_members(phi), _n_members(psi)))]
    for s in steps:
        C = math.sqrt(s.u.shape[1]) if C_MN is None else C_MN
        acc.append(acc[-1] + qv_increment(s, phi, psi, R, C, orthonormal))
    return np.array(acc)


# ---------------------------------------------------------------- limiting covariances

@dataclass
class CovarianceEstimate:
    times: np.ndarray | None
    g: np.ndarray | None           # (n_times, P, P)
    g_stderr: np.ndarray | None
    Q: np.ndarray | None = None
    Q_stderr: np.ndarray | None = None
    epsilon: float | None = None
    clip: dict = field(default_factory=dict)


def psd_clip(S: np.ndarray):
    """Symmetrise and zero negative eigenvalues; returns (matrix, clipped eigenvalue mass)."""
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    neg = float(-lam[lam < 0].sum())
    return (V * np.maximum(lam, 0.0)) @ V.T, neg


def estimate_g(ensemble: Trajectory, model: CoefficientModel, psi, epsilon: float,
               orthonormal: bool = False, copy_chunk: int = 256) -> CovarianceEstimate:
    """g_t(p, q) = int_0^t <(grad psi_p sigma)(grad psi_q sigma) R, f^2> dr.

    ``ensemble`` holds spatially correlated McKean copies driven by a
    reference law, with snapshots at the time nodes. For each copy k the
    pair (ubar_k(x_i), ubar_k(x_j)) is a draw from the two-point law, so
    the double sum over locations with a shared copy index estimates the
    integrand; the per-copy integrals give the standard errors.
    """
    if ensemble.epsilon is None or abs(ensemble.epsilon - epsilon) > 1e-12 * max(1.0, epsilon):
        raise ConfigurationError(f"ensemble was built with epsilon={ensemble.epsilon}, requested {epsilon}")
    if ensemble.law is None:
        raise ValueError("the ensemble must carry the law path it was driven by")
    steps = sorted(ensemble.snapshots)
    if steps[0] != 0:
        raise ValueError("the ensemble needs a snapshot at t = 0")
    x = ensemble.snapshots[steps[0]].x
    N = x.shape[0]
    R = correlation_matrix(x, epsilon)
    K = ensemble.final.M
    P = _n_members(psi)
    integrand = np.empty((len(steps), K, P, P))
    for a, step in enumerate(steps):
        s = ensemble.snapshots[step]
        summary = ensemble.law.summary(min(step, len(ensemble.law.summaries) - 1))
        for k0 in range(0, K, copy_chunk):
            u = s.u[:, k0:k0 + copy_chunk]
            xs, us = _state_points(x, u)
            sig = model.diffusion(xs, s.t, us, summary)
            _, grad = _values(psi, xs, us, orthonormal)
            B = grad * sig[:, :, None, :]
            acc = 0.0
            for beta in range(B.shape[3]):
                RB = (R @ B[..., beta].reshape(N, -1)).reshape(B.shape[:3])
                acc = acc + np.einsum("ikp,ikq->kpq", B[..., beta], RB)
            integrand[a, k0:k0 + copy_chunk] = acc / (N * N)
    times = np.array(steps) * ensemble.dt
    per_copy = np.zeros_like(integrand)
    if len(steps) > 1:
        h = np.diff(times)[:, None, None, None]
        per_copy[1:] = np.cumsum(0.5 * h * (integrand[1:] + integrand[:-1]), axis=0)
    g = per_copy.mean(axis=1)
    se = per_copy.std(axis=1, ddof=1) / math.sqrt(K) if K > 1 else np.full_like(g, np.nan)
    g = 0.5 * (g + np.swapaxes(g, 1, 2))
    return CovarianceEstimate(times, g, se, epsilon=epsilon)


def initial_covariance_Q(initial: InitialDataSampler, psi, locations, n_mc: int = 1000,
                         orthonormal: bool = False, copy_offset: int = 0,
                         chunk: int = 256) -> CovarianceEstimate:
    """Q(p, q) = Cov_k(int psi_p(x, u_k(x, 0)) dx, int psi_q(y, u_k(y, 0)) dy).

    The spatial integrals are averages over ``locations``; copies
    ``copy_offset .. copy_offset + n_mc - 1`` give the Monte Carlo sample.
    """
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    x = np.asarray(locations, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    P = _n_members(psi)
    Y = np.empty((n_mc, P))
    for k0 in range(0, n_mc, chunk):
        copies = np.arange(copy_offset + k0, copy_offset + min(n_mc, k0 + chunk))
        u = initial.sample(x, copies)
        xs, us = _state_points(x, u)
        vals, _ = _values(psi, xs, us, orthonormal)
        Y[k0:k0 + copies.size] = vals.mean(axis=0)
    Z = Y - Y.mean(axis=0)
    Q = Z.T @ Z / (n_mc - 1)
    prod = Z[:, :, None] * Z[:, None, :]
    se = prod.std(axis=0, ddof=1) / math.sqrt(n_mc)
    Qc, clipped = psd_clip(Q)
    tr = float(np.trace(Q))
    return CovarianceEstimate(None, None, None, Qc, se, clip={"Q": clipped,
                                                              "Q_relative": clipped / tr if tr > 0 else 0.0})


def gaussian_fixture_variance(a0: float, s: float) -> float:
    """Var exp(-(a0 xi)^2 / (2 s^2)) for standard normal xi."""
    a = a0 * a0 / (2.0 * s * s)
    return (1.0 + 4.0 * a) ** -0.5 - 1.0 / (1.0 + 2.0 * a)


# ---------------------------------------------------------------- semimartingale residual

@dataclass
class ResidualRecord:
    times: np.ndarray
    eta: np.ndarray               # (n_steps + 1, P)
    drift: np.ndarray             # (n_steps + 1, P), cumulative
    martingale: np.ndarray        # (n_steps + 1, P)
    residual: np.ndarray          # (n_steps + 1, P)
    reference_budget: np.ndarray  # (n_steps + 1, P), three standard errors of the reference terms


class SemimartingaleObserver:
    """Accumulates every piece of the decomposition of <eta_t, psi> along one run.

    The linearised drift <eta_r, L_r(f_MN, f) psi> pairs the signed cloud
    C(f_MN - f) with the linearised generator around the reference cloud
    stored for the same step, so the law path must carry a cloud at every
    step. The Ito form of the generator (weight 1/2 on the second-order
    term) matches the Euler scheme.
    """

    def __init__(self, model: CoefficientModel, psi, law: LawPath, C_MN: float | None = None,
                 diffusion_weight: float = 0.5, initial_override: np.ndarray | None = None):
        self.model, self.psi, self.law, self.C = model, psi, law, C_MN
        self.w = diffusion_weight
        self.initial_override = initial_override
        P = _n_members(psi)
        self._t, self._eta, self._eta_se = [], [], []
        self._drift, self._mart = [np.zeros(P)], [np.zeros(P)]
        self._drift_se = np.zeros(P)
        self._last = None

    def _C(self, M):
        return math.sqrt(M) if self.C is None else self.C

    def _ref(self, step):
        cloud = self.law.cloud_at(step)
        m, se, _ = _cloud_pairing(cloud, self.psi)
        if step == 0 and self.initial_override is not None:
            m, se = np.asarray(self.initial_override, float), np.zeros_like(m)
        return cloud, m, se

    def _pair(self, x, u, step):
        C = self._C(u.shape[1])
        _, ref, se = self._ref(step)
        xs, us = _state_points(x, u)
        vals, _ = _values(self.psi, xs, us)
        return C * (vals.reshape(-1, vals.shape[-1]).mean(axis=0) - ref), C * se

    def __call__(self, data: StepData):
        N, M, d_v = data.u.shape
        C = self._C(M)
        eta, se = self._pair(data.x, data.u, data.step)
        self._t.append(data.t)
        self._eta.append(eta)
        self._eta_se.append(se)
        cloud = self.law.cloud_at(data.step)
        lin = linearization_data(data.summary, cloud, data.t, self.psi, self.model, self.w)
        xs = np.broadcast_to(data.x[:, None, :], (N, M, data.x.shape[1])).reshape(-1, data.x.shape[1])
        on_run = linearized_values(self.model, data.t, lin, xs, data.u.reshape(-1, d_v), self.psi, self.w)
        on_ref = linearized_values(self.model, data.t, lin, cloud.x, cloud.u, self.psi, self.w)
        on_run = on_run.reshape(N * M, -1)
        on_ref = on_ref.reshape(cloud.n, -1)
        ref_mean = cloud.w @ on_ref
        ref_se = np.sqrt(cloud.w @ (on_ref - ref_mean) ** 2 * np.sum(cloud.w ** 2))
        self._drift_se = self._drift_se + C * ref_se * data.dt
        self._drift.append(self._drift[-1] + C * (on_run.mean(axis=0) - ref_mean) * data.dt)
        self._mart.append(self._mart[-1] + martingale_increment(data, self.psi, C))
        self._last = (data.t + data.dt, data.x, data.u_next, data.step + 1)

    def finish(self) -> ResidualRecord:
        if self._last is None:
            raise ValueError("no steps were observed")
        t, x, u, step = self._last
        eta, se = self._pair(x, u, step)
        times = np.array(self._t + [t])
        etas = np.array(self._eta + [eta])
        ses = np.array(self._eta_se + [se])
        drift, mart = np.array(self._drift), np.array(self._mart)
        res = etas - etas[0] - drift - mart
        res[0] = 0.0
        n = len(times)
        drift_se = np.concatenate([[np.zeros_like(self._drift_se)],
                                   np.broadcast_to(self._drift_se, (n - 1, self._drift_se.size))])
        budget = 3.0 * (ses + ses[0] + drift_se)
        budget[0] = 0.0
        return ResidualRecord(times, etas, drift, mart, res, budget)


# ---------------------------------------------------------------- Gaussianity

@dataclass
class GaussianityReport:
    ks_statistic: float
    p_value: float
    variance_ratio: float
    excess_variance: bool
    n: int


def gaussianity_test(samples, Q: float, min_runs: int = 200, ratio_threshold: float = 1.5) -> GaussianityReport:
    """Two-sided KS test against N(0, Q) plus the second-moment ratio mean(eta^2)/Q."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < min_runs:
        raise ValueError(f"need at least {min_runs} independent runs, got {x.size}")
    if not Q > 0:
        raise ValueError("Q must be positive")
    ks = stats.kstest(x, "norm", args=(0.0, math.sqrt(Q)))
    ratio = float(np.mean(x * x) / Q)
    return GaussianityReport(float(ks.statistic), float(ks.pvalue), ratio, ratio > ratio_threshold, x.size)
