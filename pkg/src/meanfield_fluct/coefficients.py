"""Drift and diffusion coefficients b = b0 + phi(<mu, b1>), sigma = sigma0 + phi(<mu, sigma1>).

Interaction kernels are scalar and shared by every direction. Kernels that
factor as sum_r p_r(x, t, u) q_r(y, t, v) are integrated against a measure
through the moments <mu, q_r>, which is what makes large ensembles cheap;
any other kernel is integrated pairwise in chunks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .transport import WeightedPointCloud, wasserstein


# ---------------------------------------------------------------- nonlinearity

@dataclass(frozen=True)
class Nonlinearity:
    f: Callable
    df: Callable
    d2f: Callable
    name: str = ""


def _tanh_d2(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


TANH = Nonlinearity(np.tanh, lambda z: 1.0 - np.tanh(z) ** 2, _tanh_d2, "tanh")
ZERO = Nonlinearity(np.zeros_like, np.zeros_like, np.zeros_like, "zero")


# ---------------------------------------------------------------- kernels

class Kernel:
    """Interface for a scalar interaction kernel k(x, y, t, u, v)."""

    separable = False

    def __call__(self, x, y, t, u, v):
        raise NotImplementedError

    def is_zero(self) -> bool:
        return False


@dataclass
class SeparableKernel(Kernel):
    """k(x, y, t, u, v) = sum_r left[r](x, t, u) * right[r](y, t, v)."""

    left: Sequence[Callable] = ()
    right: Sequence[Callable] = ()
    separable = True

    def __post_init__(self):
        if len(self.left) != len(self.right):
            raise ValueError("left and right factor lists differ in length")

    @property
    def rank(self) -> int:
        return len(self.left)

    def is_zero(self) -> bool:
        return self.rank == 0

    def __call__(self, x, y, t, u, v):
        out = 0.0
        for p, q in zip(self.left, self.right):
            out = out + p(x, t, u) * q(y, t, v)
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1],
                                                        np.shape(y)[:-1], np.shape(v)[:-1]))

    def moments(self, t, y, v, w):
        """<mu, right[r]> for the measure sum w * delta_(y, v) (broadcastable)."""
        w = np.asarray(w, dtype=float)
        return np.array([np.sum(w * q(y, t, v)) for q in self.right])

    def contract(self, x, t, u, m):
        out = np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1]))
        for p, mr in zip(self.left, m):
            out = out + p(x, t, u) * mr
        return out

    def left_moments(self, t, x, u, g):
        """sum_a g_a left[r](x_a, t, u_a)."""
        return np.array([np.sum(g * p(x, t, u)) for p in self.left])

    def right_contract(self, y, t, v, m):
        out = np.zeros(np.broadcast_shapes(np.shape(y)[:-1], np.shape(v)[:-1]))
        for q, mr in zip(self.right, m):
            out = out + q(y, t, v) * mr
        return out


@dataclass
class PairwiseKernel(Kernel):
    """Generic kernel evaluated on all pairs, in chunks of targets."""

    func: Callable = None
    chunk: int = 256

    def __call__(self, x, y, t, u, v):
        return self.func(x, y, t, u, v)

    def integrate_right(self, x, t, u, cloud: WeightedPointCloud):
        """sum_j w_j k(x, y_j, t, u, v_j) at each target (x, u)."""
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])
        xf = np.broadcast_to(x, shape + (np.shape(x)[-1],)).reshape(-1, np.shape(x)[-1])
        uf = np.broadcast_to(u, shape + (np.shape(u)[-1],)).reshape(-1, np.shape(u)[-1])
        out = np.empty(xf.shape[0])
        for s in range(0, xf.shape[0], self.chunk):
            sl = slice(s, s + self.chunk)
            vals = self.func(xf[sl, None, :], cloud.x[None], t, uf[sl, None, :], cloud.u[None])
            out[sl] = vals @ cloud.w
        return out.reshape(shape)

    def integrate_left(self, t, xs, us, g, y, v):
        """sum_a g_a k(x_a, y, t, u_a, v) at each target (y, v)."""
        shape = np.broadcast_shapes(np.shape(y)[:-1], np.shape(v)[:-1])
        yf = np.broadcast_to(y, shape + (np.shape(y)[-1],)).reshape(-1, np.shape(y)[-1])
        vf = np.broadcast_to(v, shape + (np.shape(v)[-1],)).reshape(-1, np.shape(v)[-1])
        out = np.empty(yf.shape[0])
        for s in range(0, yf.shape[0], self.chunk):
            sl = slice(s, s + self.chunk)
            vals = self.func(xs[None], yf[sl, None, :], t, us[None], vf[sl, None, :])
            out[sl] = vals @ g
        return out.reshape(shape)


ZERO_KERNEL = SeparableKernel((), ())


# ---------------------------------------------------------------- measure summaries

@dataclass
class MeasureSummary:
    """What the coefficients need to know about a measure.

    Separable kernels keep only their moment vectors; pairwise kernels keep
    the cloud.
    """

    mb: np.ndarray | None = None
    ms: np.ndarray | None = None
    cloud: WeightedPointCloud | None = None


# ---------------------------------------------------------------- the model

@dataclass
class CoefficientModel:
    d: int
    d_v: int
    b0: Callable
    sigma0: Callable
    b1: Kernel = ZERO_KERNEL
    sigma1: Kernel = ZERO_KERNEL
    phi: Nonlinearity = TANH
    alpha: float = 1.0
    constants: dict = field(default_factory=dict)
    name: str = "custom"
    x_homogeneous: bool = False
    time_independent: bool = True
    params: dict = field(default_factory=dict)

    # -- measure handling

    def summarize_arrays(self, t, x, u, w) -> MeasureSummary:
        """Summary of sum w * delta_(x, u); arrays broadcast against each other."""
        s = MeasureSummary()
        if self.b1.separable:
            s.mb = self.b1.moments(t, x, u, w)
        if self.sigma1.separable:
            s.ms = self.sigma1.moments(t, x, u, w)
        if not (self.b1.separable and self.sigma1.separable):
            shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1], np.shape(w))
            xf = np.broadcast_to(x, shape + (self.d,)).reshape(-1, self.d)
            uf = np.broadcast_to(u, shape + (self.d_v,)).reshape(-1, self.d_v)
            wf = np.broadcast_to(w, shape).reshape(-1)
            s.cloud = WeightedPointCloud(xf, uf, wf / wf.sum())
        return s

    def summarize(self, t, mu: WeightedPointCloud) -> MeasureSummary:
        return self.summarize_arrays(t, mu.x, mu.u, mu.w)

    def _inner(self, kernel, moments, cloud, x, t, u):
        if kernel.is_zero():
            return np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1]))
        if kernel.separable:
            return kernel.contract(x, t, u, moments)
        return kernel.integrate_right(x, t, u, cloud)

    def inner_b(self, x, t, u, summary: MeasureSummary):
        """b1(x, t, u, mu) = <mu, b1(x, ., t, u, .)>."""
        return self._inner(self.b1, summary.mb, summary.cloud, x, t, u)

    def inner_sigma(self, x, t, u, summary: MeasureSummary):
        return self._inner(self.sigma1, summary.ms, summary.cloud, x, t, u)

    # -- coefficients

    def _shape(self, x, u):
        return np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1]) + (self.d_v,)

    def drift(self, x, t, u, summary: MeasureSummary):
        base = self.b0(x, t, u)
        inter = self.phi.f(self.inner_b(x, t, u, summary))
        return np.broadcast_to(base + inter[..., None], self._shape(x, u))

    def diffusion(self, x, t, u, summary: MeasureSummary):
        base = self.sigma0(x, t, u)
        inter = self.phi.f(self.inner_sigma(x, t, u, summary))
        return np.broadcast_to(base + inter[..., None], self._shape(x, u))

    def coefficients(self, x, t, u, summary: MeasureSummary):
        return self.drift(x, t, u, summary), self.diffusion(x, t, u, summary)


def _point_arrays(model, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if u.ndim == 0:
        u = u.reshape(1)
    if x.shape[-1] != model.d:
        x = x[..., None]
    if u.shape[-1] != model.d_v:
        u = u[..., None]
    return x, u


def drift_b(model: CoefficientModel, x, t, u, mu: WeightedPointCloud):
    """b(x, t, u, mu) for points x (..., d) and values u (..., d_v)."""
    if mu is None or mu.n == 0:
        raise ValueError("empty measure")
    x, u = _point_arrays(model, x, u)
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    return model.drift(x, t, u, model.summarize(t, mu))


def diffusion_sigma(model: CoefficientModel, x, t, u, mu: WeightedPointCloud):
    """sigma(x, t, u, mu) for points x (..., d) and values u (..., d_v)."""
    if mu is None or mu.n == 0:
        raise ValueError("empty measure")
    x, u = _point_arrays(model, x, u)
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    return model.diffusion(x, t, u, model.summarize(t, mu))


# ---------------------------------------------------------------- spatial profiles

def lacunary_profile(x, alpha: float, n_terms: int = 25):
    """Dyadic lacunary series (1 - a) sum_n a^n cos(2 pi 2^n x), a = 2^-alpha.

    Exactly alpha-Hoelder for alpha < 1 and bounded by 1 in absolute value.
    For alpha >= 1 the single mode cos(2 pi x) is used instead (Lipschitz).
    In d > 1 the coordinates are averaged.
    """
    x = np.asarray(x, dtype=float)
    if alpha >= 1.0:
        return np.mean(np.cos(2 * np.pi * x), axis=-1)
    a = 2.0 ** (-alpha)
    out = np.zeros(x.shape)
    for n in range(n_terms):
        out += a ** n * np.cos(2 * np.pi * (2 ** n) * np.mod(x, 1.0))
    return (1.0 - a) * np.mean(out, axis=-1)


def lacunary_hoelder_constant(alpha: float) -> float:
    """Upper bound on |w(x) - w(y)| / |x - y|_torus^alpha for the profile."""
    if alpha >= 1.0:
        return 2 * np.pi
    a = 2.0 ** (-alpha)
    return (1 - a) * (2 * np.pi * 2 ** (1 - alpha) / (2 * a - 1) + 2 / (1 - a))


# ---------------------------------------------------------------- built-in models

def _const(value, d_v):
    def f(x, t, u):
        return np.full(np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1]) + (d_v,), value)
    return f


def _cos_kernel(kappa, lam0, lam1, vfun):
    """kappa (lam0 + lam1 cos 2 pi (x - y)) vfun(v), as a rank-3 separable kernel (d = 1).

    For d > 1 the cosine is averaged over coordinates (rank 1 + 2d).
    """
    left, right = [], []
    if lam0 != 0.0:
        left.append(lambda x, t, u: np.full(np.shape(x)[:-1], kappa * lam0))
        right.append(lambda y, t, v: vfun(v) * np.ones(np.shape(y)[:-1]))

    def make(c, trig):
        def p(x, t, u):
            return kappa * lam1 / x.shape[-1] * trig(2 * np.pi * x[..., c])

        def q(y, t, v):
            return trig(2 * np.pi * y[..., c]) * vfun(v)
        return p, q

    if lam1 != 0.0 and kappa != 0.0:
        return left, right, make
    return left, right, None


def _separable_cos_kernel(kappa, lam0, lam1, vfun, d):
    left, right, make = _cos_kernel(kappa, lam0, lam1, vfun)
    if kappa == 0.0:
        return ZERO_KERNEL
    if make is not None:
        for c in range(d):
            for trig in (np.cos, np.sin):
                p, q = make(c, trig)
                left.append(p)
                right.append(q)
    return SeparableKernel(tuple(left), tuple(right))


def v_ratio(v):
    """mean(v) / (1 + |v|^2); bounded by 1/2, Lipschitz constant <= 9/8."""
    return np.mean(v, axis=-1) / (1.0 + np.sum(v * v, axis=-1))


def v_decay(v):
    """1 / (1 + |v|^2); bounded by 1, Lipschitz constant 3 sqrt(3) / 8."""
    return 1.0 / (1.0 + np.sum(v * v, axis=-1))


def linrelax(alpha: float = 0.5, d: int = 1, d_v: int = 1, c_b: float = 0.5, s0: float = 0.5,
             kappa_b: float = 1.0, kappa_s: float = 0.3, lam0: float = 0.0, lam1: float = 1.0,
             relax: float = 1.0, level: float = 1.0) -> CoefficientModel:
    """Relaxation toward a spatially rough level with measure coupling.

    b0 = -relax u + level + c_b w_alpha(x), sigma0 = s0,
    b1 = kappa_b k(x - y) mean(v) / (1 + |v|^2), sigma1 = kappa_s k(x - y) / (1 + |v|^2),
    k(z) = lam0 + lam1 cos(2 pi z), phi = tanh.
    """
    def b0(x, t, u):
        return -relax * u + level + c_b * lacunary_profile(x, alpha)[..., None]

    b1 = _separable_cos_kernel(kappa_b, lam0, lam1, v_ratio, d)
    s1 = _separable_cos_kernel(kappa_s, lam0, lam1, v_decay, d)
    H = lacunary_hoelder_constant(alpha)
    lip_k = 2 * np.pi * abs(lam1)
    k_max = abs(lam0) + abs(lam1)
    # |k g(v)| Lipschitz in (y, v): spatial part lip_k sup|g|, value part k_max Lip(g)
    lip_b_measure = abs(kappa_b) * math.hypot(lip_k * 0.5, k_max * 9.0 / 8.0)
    lip_s_measure = abs(kappa_s) * math.hypot(lip_k * 1.0, k_max * 3 * math.sqrt(3) / 8)
    constants = {
        "b": max(abs(relax), abs(c_b) * H + abs(kappa_b) * lip_k * 0.5, lip_b_measure),
        "sigma": max(abs(kappa_s) * lip_k, lip_s_measure),
        "growth_b": math.sqrt(d_v) * (abs(level) + abs(c_b) + 1.0) + abs(relax),
        "growth_sigma": math.sqrt(d_v) * (abs(s0) + 1.0),
        "phi": 1.0, "dphi": 1.0, "d2phi": 4.0 / (3.0 * math.sqrt(3.0)),
    }
    params = dict(alpha=alpha, d=d, d_v=d_v, c_b=c_b, s0=s0, kappa_b=kappa_b, kappa_s=kappa_s,
                  lam0=lam0, lam1=lam1, relax=relax, level=level)
    return CoefficientModel(d, d_v, b0, _const(s0, d_v), b1, s1, TANH, alpha, constants,
                            "linrelax", x_homogeneous=(c_b == 0.0 and lam1 == 0.0), params=params)


def decoupled(alpha: float = 0.5, d: int = 1, d_v: int = 1, c_b: float = 0.5, s0: float = 0.5,
              relax: float = 1.0, level: float = 1.0) -> CoefficientModel:
    """linrelax with both interaction kernels switched off."""
    m = linrelax(alpha, d, d_v, c_b, s0, kappa_b=0.0, kappa_s=0.0, relax=relax, level=level)
    m.name = "decoupled"
    m.params.update(kappa_b=0.0, kappa_s=0.0)
    return m


def linear(d: int = 1, d_v: int = 1, s0: float = 0.0, rate: float = 1.0, level: float = 0.0) -> CoefficientModel:
    """b = -rate u + level, sigma = s0, no interaction and phi = 0."""
    def b0(x, t, u):
        return -rate * u + level + 0.0 * x[..., :1]
    constants = {"b": abs(rate), "sigma": 0.0, "growth_b": abs(rate) + math.sqrt(d_v) * abs(level),
                 "growth_sigma": math.sqrt(d_v) * abs(s0), "phi": 0.0, "dphi": 0.0, "d2phi": 0.0}
    return CoefficientModel(d, d_v, b0, _const(s0, d_v), ZERO_KERNEL, ZERO_KERNEL, ZERO, 1.0,
                            constants, "linear", x_homogeneous=True,
                            params=dict(d=d, d_v=d_v, s0=s0, rate=rate, level=level))


def adversarial(d: int = 1, d_v: int = 1, jump: float = 1.0, at: float = 1.0) -> CoefficientModel:
    """Linear relaxation plus a jump in u: violates the declared Lipschitz constant."""
    m = linear(d, d_v)

    def b0(x, t, u):
        return -u + jump * (u > at)
    m.b0 = b0
    m.name = "adversarial"
    m.params.update(jump=jump, at=at)
    return m


def homogeneous(d_v: int = 1, s0: float = 0.5, kappa_b: float = 1.0, kappa_s: float = 0.3,
                relax: float = 1.0, level: float = 1.0) -> CoefficientModel:
    """x-independent linrelax: constant kernel k = 1 and no spatial profile."""
    m = linrelax(1.0, 1, d_v, c_b=0.0, s0=s0, kappa_b=kappa_b, kappa_s=kappa_s, lam0=1.0, lam1=0.0,
                 relax=relax, level=level)
    m.name = "homogeneous"
    m.x_homogeneous = True
    return m


MODELS = {"linrelax": linrelax, "decoupled": decoupled, "linear": linear,
          "adversarial": adversarial, "homogeneous": homogeneous}


def build_model(name: str, **params) -> CoefficientModel:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**params)


# ---------------------------------------------------------------- regularity audit

@dataclass
class AuditReport:
    max_ratio: dict
    declared: dict
    violations: list
    n_samples: int

    @property
    def ok(self) -> bool:
        return not self.violations


def _random_cloud(g, d, d_v, n_atoms, u_max):
    x = g.random((n_atoms, d))
    u = u_max * g.random((n_atoms, d_v))
    w = g.random(n_atoms) + 0.1
    return WeightedPointCloud(x, u, w / w.sum())


def _perturb_cloud(g, c, scale):
    x = np.mod(c.x + scale * g.standard_normal(c.x.shape), 1.0)
    u = np.abs(c.u + scale * g.standard_normal(c.u.shape))
    return WeightedPointCloud(x, u, c.w)


def audit_regularity(model: CoefficientModel, n_samples: int = 200, rng_seed: int = 0,
                     u_max: float = 4.0, n_atoms: int = 6, t: float = 0.0,
                     tolerance: float = 1e-9) -> AuditReport:
    """Sampled Hoelder/Lipschitz and growth ratios against declared constants.

    Half of the samples are independent tuples, half are small perturbations
    (down to 1e-8) of a base tuple, which is where discontinuities show.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    g = np.random.Generator(np.random.Philox(key=rng_seed))
    d, d_v, a = model.d, model.d_v, model.alpha
    ratios = {"b": 0.0, "sigma": 0.0, "growth_b": 0.0, "growth_sigma": 0.0}
    for s in range(n_samples):
        x = g.random(d)
        u = u_max * g.random(d_v)
        mu = _random_cloud(g, d, d_v, n_atoms, u_max)
        if s % 2 == 0:
            x2 = g.random(d)
            u2 = u_max * g.random(d_v)
            mu2 = _random_cloud(g, d, d_v, n_atoms, u_max)
        else:
            scale = 10.0 ** (-g.uniform(1, 8))
            x2 = np.mod(x + scale * g.standard_normal(d), 1.0)
            u2 = np.abs(u + scale * g.standard_normal(d_v))
            mu2 = _perturb_cloud(g, mu, scale) if g.random() < 0.5 else mu
        w1 = wasserstein(mu, mu2, 1, "network-simplex").value
        dx = float(np.sqrt(np.sum((x - x2 - np.round(x - x2)) ** 2)))
        denom = dx ** a + float(np.linalg.norm(u - u2)) + w1 ** a + w1
        s1, s2 = model.summarize(t, mu), model.summarize(t, mu2)
        for key, fn in (("b", model.drift), ("sigma", model.diffusion)):
            v1 = fn(x[None], t, u[None], s1)[0]
            v2 = fn(x2[None], t, u2[None], s2)[0]
            if denom > 0:
                ratios[key] = max(ratios[key], float(np.linalg.norm(v1 - v2)) / denom)
            mom = float(np.dot(mu.w, np.linalg.norm(mu.u, axis=1)))
            gkey = "growth_" + key
            ratios[gkey] = max(ratios[gkey], float(np.linalg.norm(v1)) / (1 + np.linalg.norm(u) + mom))
    # fine line scans through random base points, one coordinate at a time
    n_line = 4001
    for s in range(max(4, n_samples // 50)):
        mu = _random_cloud(g, d, d_v, n_atoms, u_max)
        summ = model.summarize(t, mu)
        x0 = g.random(d)
        u0 = u_max * g.random(d_v)
        for c in range(d_v):
            us = np.tile(u0, (n_line, 1))
            us[:, c] = np.linspace(0.0, u_max, n_line)
            xs = np.tile(x0, (n_line, 1))
            step = u_max / (n_line - 1)
            for key, fn in (("b", model.drift), ("sigma", model.diffusion)):
                vals = fn(xs, t, us, summ)
                jump = np.max(np.linalg.norm(np.diff(vals, axis=0), axis=1))
                ratios[key] = max(ratios[key], float(jump) / step)
        for c in range(d):
            xs = np.tile(x0, (n_line, 1))
            xs[:, c] = np.linspace(0.0, 1.0, n_line)
            us = np.tile(u0, (n_line, 1))
            step = (1.0 / (n_line - 1)) ** a
            for key, fn in (("b", model.drift), ("sigma", model.diffusion)):
                vals = fn(xs, t, us, summ)
                jump = np.max(np.linalg.norm(np.diff(vals, axis=0), axis=1))
                ratios[key] = max(ratios[key], float(jump) / step)
    zs = np.linspace(-20, 20, 4001)
    ratios["phi"] = float(np.max(np.abs(model.phi.f(zs))))
    ratios["dphi"] = float(np.max(np.abs(model.phi.df(zs))))
    ratios["d2phi"] = float(np.max(np.abs(model.phi.d2f(zs))))
    violations = []
    for key, val in ratios.items():
        declared = model.constants.get(key)
        if declared is not None and val > declared * (1 + tolerance) + tolerance:
            violations.append(key)
    return AuditReport(ratios, dict(model.constants), violations, n_samples)
