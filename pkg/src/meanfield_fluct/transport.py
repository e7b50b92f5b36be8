"""Weighted point clouds on Q x R^{d_v}, pairings, and Wasserstein distances."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .noise import torus_delta


def _as2d(a, n=None):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None] if n is None or a.shape[0] == n else a[None, :]
    return a


@dataclass
class WeightedPointCloud:
    """Atoms (x_j, u_j) in Q x R^{d_v} with probability weights."""

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray | None = None
    check: bool = True

    def __post_init__(self):
        self.x = _as2d(self.x)
        self.u = _as2d(self.u)
        n = self.x.shape[0]
        if self.u.shape[0] != n:
            raise ValueError("x and u must have the same number of atoms")
        if n == 0:
            raise ValueError("empty measure")
        if self.w is None:
            self.w = np.full(n, 1.0 / n)
        else:
            self.w = np.asarray(self.w, dtype=float).reshape(n)
        if self.check:
            if np.any(self.w < 0):
                raise ValueError("negative weight")
            if abs(self.w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {self.w.sum()!r}, not 1")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def d_v(self) -> int:
        return self.u.shape[1]

    def pair(self, psi) -> float:
        """<mu, psi> for psi(x, u) vectorised over atoms."""
        return float(np.dot(self.w, np.broadcast_to(psi(self.x, self.u), (self.n,))))

    def subsample(self, idx):
        w = self.w[idx]
        return WeightedPointCloud(self.x[idx], self.u[idx], w / w.sum())


@dataclass
class JointPointCloud:
    """Atoms (x, y, u, v) in Q^2 x R^{2 d_v}."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    pair_subsample: int | None = None

    def marginal_first(self) -> WeightedPointCloud:
        """Marginal over (y, v), with equal atoms merged."""
        key = np.concatenate([self.x, self.u], axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=self.w)
        d = self.x.shape[1]
        return WeightedPointCloud(uniq[:, :d], uniq[:, d:], w / w.sum(), check=False)


def empirical_measure(state) -> WeightedPointCloud:
    """Uniform atoms (x_i, u_ik) of a particle state (N x M x d_v)."""
    u = np.asarray(state.u)
    N, M, d_v = u.shape
    x = np.repeat(np.asarray(state.x).reshape(N, -1), M, axis=0)
    return WeightedPointCloud(x, u.reshape(N * M, d_v), np.full(N * M, 1.0 / (N * M)))


def joint_empirical(state, max_atoms: int = 2_000_000, seed: int = 0) -> JointPointCloud:
    """Atoms (x_i, x_j, u_ik, u_jk) with weight 1/(M N^2), shared copy index.

    When N^2 M exceeds ``max_atoms`` the column pairs (i, j) are uniformly
    subsampled; the number kept is recorded on the result.
    """
    u = np.asarray(state.u)
    N, M, d_v = u.shape
    x = np.asarray(state.x).reshape(N, -1)
    n_pairs = N * N
    subsample = None
    if n_pairs * M > max_atoms:
        keep = max(1, max_atoms // M)
        g = np.random.Generator(np.random.Philox(key=seed))
        flat = np.sort(g.choice(n_pairs, size=keep, replace=False))
        ii, jj = np.divmod(flat, N)
        subsample = keep
    else:
        ii, jj = np.divmod(np.arange(n_pairs), N)
    P = ii.size
    ii_r = np.repeat(ii, M)
    jj_r = np.repeat(jj, M)
    kk = np.tile(np.arange(M), P)
    w = np.full(P * M, 1.0 / (P * M))
    return JointPointCloud(x[ii_r], x[jj_r], u[ii_r, kk], u[jj_r, kk], w, subsample)


def product_cost(xa, ua, xb, ub, p: int):
    """|.|^p cost matrix on Q x R^{d_v}, torus distance in the Q factor."""
    dx = torus_delta(xa[:, None, :], xb[None, :, :])
    du = ua[:, None, :] - ub[None, :, :]
    dist2 = np.sum(dx * dx, axis=-1) + np.sum(du * du, axis=-1)
    return dist2 if p == 2 else np.sqrt(dist2) ** p


def _pot():
    for flag in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{flag}", "1")
    import ot
    return ot


def _network_simplex(a: WeightedPointCloud, b: WeightedPointCloud, p: int) -> float:
    ot = _pot()
    cost = product_cost(a.x, a.u, b.x, b.u, p)
    wa = a.w / a.w.sum()
    wb = b.w / b.w.sum()
    val = ot.emd2(wa, wb, cost, numItermax=10_000_000)
    return float(max(val, 0.0)) ** (1.0 / p)


def _equal_weights(c: WeightedPointCloud) -> bool:
    return bool(np.all(c.w == c.w[0]))


def _exact_1d(a: WeightedPointCloud, b: WeightedPointCloud, p: int) -> float:
    qa = np.sort(a.u[:, 0])
    qb = np.sort(b.u[:, 0])
    return float(np.mean(np.abs(qa - qb) ** p) ** (1.0 / p))


@dataclass
class WassersteinResult:
    value: float
    stderr: float = 0.0
    method: str = ""
    resamples: int = 0
    extra: dict = field(default_factory=dict)

    def __float__(self):
        return self.value


def wasserstein(a: WeightedPointCloud, b: WeightedPointCloud, p: int = 1, method: str = "auto",
                n_sub: int = 512, n_rep: int = 8, seed: int = 0, max_atoms: int = 2048) -> WassersteinResult:
    """W_p distance between two clouds on Q x R^{d_v}.

    ``exact-1d`` compares the sorted value coordinates of two equal-weight,
    equal-size clouds that carry no spatial information (d_v = 1 and all x
    equal, or callers that only want the value marginal). With unequal
    weights it falls through to the network simplex. ``subsampled``
    averages exact distances over ``n_rep`` resamples of ``n_sub`` atoms.
    """
    if p not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if a.d != b.d or a.d_v != b.d_v:
        raise ValueError("clouds live in different spaces")
    if method == "auto":
        method = "network-simplex" if max(a.n, b.n) <= max_atoms else "subsampled"
    if method == "exact-1d":
        if a.d_v == 1 and a.n == b.n and _equal_weights(a) and _equal_weights(b):
            return WassersteinResult(_exact_1d(a, b, p), method="exact-1d")
        method = "network-simplex"
    if method == "network-simplex":
        if max(a.n, b.n) > max_atoms:
            raise ValueError(f"network simplex limited to {max_atoms} atoms; use 'subsampled'")
        return WassersteinResult(_network_simplex(a, b, p), method="network-simplex")
    if method == "subsampled":
        g = np.random.Generator(np.random.Philox(key=seed))
        vals = []
        for _ in range(n_rep):
            ia = g.choice(a.n, size=min(n_sub, a.n), replace=True, p=a.w)
            ib = g.choice(b.n, size=min(n_sub, b.n), replace=True, p=b.w)
            sa = WeightedPointCloud(a.x[ia], a.u[ia])
            sb = WeightedPointCloud(b.x[ib], b.u[ib])
            vals.append(_network_simplex(sa, sb, p))
        vals = np.asarray(vals)
        se = float(vals.std(ddof=1) / math.sqrt(n_rep)) if n_rep > 1 else float("nan")
        return WassersteinResult(float(vals.mean()), se, "subsampled", n_rep)
    raise ValueError(f"unknown method {method!r}")


def wasserstein_1d_values(a, b, p: int = 1, wa=None, wb=None) -> float:
    """W_p between weighted samples on the real line via quantile functions."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    wa = np.full(a.size, 1.0 / a.size) if wa is None else np.asarray(wa, float) / np.sum(wa)
    wb = np.full(b.size, 1.0 / b.size) if wb is None else np.asarray(wb, float) / np.sum(wb)
    ia, ib = np.argsort(a), np.argsort(b)
    a, wa, b, wb = a[ia], wa[ia], b[ib], wb[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    levels = np.unique(np.concatenate([ca, cb]))
    levels = levels[levels <= 1.0 + 1e-15]
    left = np.concatenate([[0.0], levels[:-1]])
    mid = 0.5 * (left + levels)
    qa = a[np.minimum(np.searchsorted(ca, mid), a.size - 1)]
    qb = b[np.minimum(np.searchsorted(cb, mid), b.size - 1)]
    return float(np.sum((levels - left) * np.abs(qa - qb) ** p) ** (1.0 / p))
