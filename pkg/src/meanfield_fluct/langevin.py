"""Galerkin reduction of the linear fluctuation SPDE onto a test-function dictionary.

Coefficient vectors c_t hold the pairings <eta_t, psi_p> with the
(orthonormalised) members. They follow dc = A(t)^T c dt + dG with
Cov(dG) = C(t) dt and c_0 ~ N(0, Q0), so Sigma(t) = Cov(c_t) solves
dSigma/dt = A^T Sigma + Sigma A + C.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .coefficients import CoefficientModel
from .fluctuations import CovarianceEstimate, psd_clip
from .noise import ConfigurationError
from .particles import LawPath
from .testfunctions import TestFunctionDictionary, linearization_data, linearized_values


class GalerkinError(RuntimeError):
    pass


@dataclass
class GalerkinSystem:
    times: np.ndarray
    A: np.ndarray                  # (n_t, P, P): L psi_q ~ const + sum_p A[p, q] psi_p
    C: np.ndarray                  # (n_t, P, P)
    Q0: np.ndarray                 # (P, P)
    residuals: np.ndarray          # (n_t, P) relative L2(f) norm of the unprojected part
    clip: dict = field(default_factory=dict)
    basis: np.ndarray | None = None   # raw-member coefficients of the basis functions (P, P)

    @property
    def P(self) -> int:
        return self.Q0.shape[0]

    def _interp(self, arr, t):
        if len(self.times) == 1 or t <= self.times[0]:
            return arr[0]
        if t >= self.times[-1]:
            return arr[-1]
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        lam = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        return (1.0 - lam) * arr[j] + lam * arr[j + 1]

    def A_at(self, t: float) -> np.ndarray:
        return self._interp(self.A, t)

    def C_at(self, t: float) -> np.ndarray:
        return self._interp(self.C, t)

    def to_members(self, S: np.ndarray) -> np.ndarray:
        """Covariance of raw-member pairings from a covariance in the basis."""
        if self.basis is None:
            return S
        Binv = np.linalg.inv(self.basis)
        return Binv.T @ S @ Binv


def constant_system(A, C, Q0, T: float = 1.0) -> GalerkinSystem:
    """Time-independent system, mainly for fixtures."""
    A, C, Q0 = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, C, Q0))
    times = np.array([0.0, T])
    return GalerkinSystem(times, np.stack([A, A]), np.stack([C, C]), Q0, np.zeros((2, A.shape[0])))


def project_onto_dictionary(values: np.ndarray, basis_values: np.ndarray, weights: np.ndarray,
                            cond_limit: float = 1e10):
    """Weighted least squares of columns of ``values`` on [1, basis] in L2(weights).

    Returns (coefficients on the basis (P, Q), relative residual norms (Q,)).
    The constant column is fitted but dropped: fluctuation fields have zero mass.
    """
    n, P = basis_values.shape
    Phi = np.concatenate([np.ones((n, 1)), basis_values], axis=1)
    G = Phi.T @ (weights[:, None] * Phi)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > cond_limit:
        raise GalerkinError(f"Gram matrix condition number {cond:.3g} exceeds {cond_limit:.0e}; "
                            "use a smaller dictionary")
    rhs = Phi.T @ (weights[:, None] * values)
    coef = np.linalg.solve(G, rhs)
    res = values - Phi @ coef
    num = np.sqrt(weights @ res ** 2)
    den = np.sqrt(weights @ values ** 2)
    rel = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return coef[1:], rel


def assemble_galerkin(law: LawPath, dictionary: TestFunctionDictionary, model: CoefficientModel,
                      epsilon: float, g: CovarianceEstimate, Q0: np.ndarray,
                      steps=None, orthonormal: bool = True, diffusion_weight: float = 0.5,
                      cond_limit: float = 1e10) -> GalerkinSystem:
    """Project psi_q -> L_t(f, f) psi_q onto the dictionary at each node step.

    The inner product is the empirical one of the reference cloud at that
    step. ``g`` must be on the same basis (orthonormal or not) and its time
    nodes must coincide with the chosen steps; C(t) is its symmetric finite
    difference followed by a PSD clip. ``Q0`` is used as given (on the same
    basis) after a PSD clip.
    """
    if law.epsilon is not None and abs(law.epsilon - epsilon) > 1e-12:
        raise ConfigurationError(f"law built with epsilon={law.epsilon}, requested {epsilon}")
    if g.epsilon is not None and abs(g.epsilon - epsilon) > 1e-12:
        raise ConfigurationError(f"g estimated with epsilon={g.epsilon}, requested {epsilon}")
    steps = list(law.snapshot_steps if steps is None else steps)
    times = np.array(steps) * law.dt
    if g.times is None or len(g.times) != len(times) or np.max(np.abs(g.times - times)) > 1e-9:
        raise ValueError("g must be estimated at the same time nodes as the assembly")
    P = dictionary.P
    A = np.empty((len(steps), P, P))
    resid = np.empty((len(steps), P))
    for a, step in enumerate(steps):
        cloud = law.cloud_at(step)
        t = step * law.dt
        data = linearization_data(law.summary(min(step, len(law.summaries) - 1)), cloud, t, dictionary,
                                  model, diffusion_weight)
        Lvals = linearized_values(model, t, data, cloud.x, cloud.u, dictionary, diffusion_weight)
        ev = dictionary.evaluate(cloud.x, cloud.u).psi
        if orthonormal:
            Lvals = Lvals @ dictionary.coef
            ev = ev @ dictionary.coef
        A[a], resid[a] = project_onto_dictionary(Lvals, ev, cloud.w, cond_limit)
    C = np.gradient(g.g, times, axis=0) if len(times) > 1 else np.zeros_like(g.g)
    clipped = []
    for a in range(len(times)):
        C[a], c = psd_clip(C[a])
        clipped.append(c)
    Q, qc = psd_clip(np.asarray(Q0, dtype=float))
    return GalerkinSystem(times, A, C, Q, resid, {"C": clipped, "Q0": qc},
                          dictionary.coef if orthonormal else None)


def _factor(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    L = V * np.sqrt(np.maximum(lam, 0.0))
    if not np.all(np.isfinite(L)):
        raise GalerkinError("covariance factorisation failed")
    return L


def _check_dt(sys: GalerkinSystem, dt: float):
    rho = max(float(np.max(np.abs(np.linalg.eigvals(A)))) for A in sys.A)
    if dt * rho >= 0.1:
        raise ConfigurationError(f"dt={dt:g} does not resolve A (dt * spectral radius = {dt * rho:.3g} >= 0.1)")


def simulate_spde(sys: GalerkinSystem, T: float, dt: float, n_paths: int, seed: int,
                  store_every: int | None = None):
    """Euler-Maruyama paths of c_t. Returns (times, paths (n_stored, n_paths, P))."""
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of dt")
    _check_dt(sys, dt)
    P = sys.P
    ids = np.arange(n_paths)
    c = rng.normals(ids, 0, 0, rng.TAG_MISC, P, seed) @ _factor(sys.Q0).T
    every = n if store_every is None else store_every
    times, out = [0.0], [c.copy()]
    sq = np.sqrt(dt)
    for k in range(n):
        t = k * dt
        xi = rng.normals(ids, k + 1, 0, rng.TAG_MISC, P, seed)
        c = c + dt * c @ sys.A_at(t) + sq * xi @ _factor(sys.C_at(t)).T
        if (k + 1) % every == 0 or k + 1 == n:
            times.append((k + 1) * dt)
            out.append(c.copy())
    return np.array(times), np.array(out)


def covariance_ode(sys: GalerkinSystem, T: float, dt: float):
    """RK4 for dSigma = A^T Sigma + Sigma A + C, Sigma(0) = Q0. Returns (times, Sigma)."""
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of dt")

    def rhs(t, S):
        A = sys.A_at(t)
        return A.T @ S + S @ A + sys.C_at(t)

    S = sys.Q0.copy()
    out = [S.copy()]
    for k in range(n):
        t = k * dt
        k1 = rhs(t, S)
        k2 = rhs(t + dt / 2, S + dt / 2 * k1)
        k3 = rhs(t + dt / 2, S + dt / 2 * k2)
        k4 = rhs(t + dt, S + dt * k3)
        S = S + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        S = 0.5 * (S + S.T)
        out.append(S.copy())
    return np.arange(n + 1) * dt, np.array(out)
