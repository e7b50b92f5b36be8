"""No-flux test functions psi(x, u) = g(x) h(u), their u-derivatives, weighted norms,
and the generator and its chord linearisation applied to them.

Value factors are h(u) = q^b exp(-q) with q = |u|^2 / (2 s^2). They depend on
u through |u|^2 only, hence are even in every coordinate and have zero
normal derivative on each face {u^beta = 0}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import CoefficientModel, MeasureSummary, PairwiseKernel
from .transport import WeightedPointCloud

_GL16 = np.polynomial.legendre.leggauss(16)


# ---------------------------------------------------------------- factors

@dataclass(frozen=True)
class FourierMode:
    """Product over coordinates of 1, sqrt2 cos(2 pi j x) (j > 0) or sqrt2 sin(2 pi |j| x) (j < 0)."""

    freqs: tuple

    @property
    def degree(self) -> int:
        return max((abs(f) for f in self.freqs), default=0)

    def _factor(self, xc, f, order):
        if f == 0:
            return np.ones_like(xc) if order == 0 else np.zeros_like(xc)
        w = 2 * np.pi * abs(f)
        trig = [np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z)] if f > 0 else \
               [np.sin, np.cos, lambda z: -np.sin(z)]
        return math.sqrt(2.0) * w ** order * trig[order](w * xc)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for c, f in enumerate(self.freqs):
            out = out * self._factor(x[..., c], f, 0)
        return out

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        cols = []
        for c in range(len(self.freqs)):
            v = np.ones(x.shape[:-1])
            for c2, f in enumerate(self.freqs):
                v = v * self._factor(x[..., c2], f, 1 if c2 == c else 0)
            cols.append(v)
        return np.stack(cols, axis=-1)


def _qpow(q, k):
    if k < 0:
        return np.zeros_like(q)
    if k == 0:
        return np.ones_like(q)
    return q ** k


@dataclass(frozen=True)
class ValueFactor:
    """h(u) = q^b exp(-q), q = |u|^2 / (2 s^2)."""

    b: int = 0
    s: float = 1.0

    def _q(self, u):
        u = np.asarray(u, dtype=float)
        return np.sum(u * u, axis=-1) / (2.0 * self.s ** 2)

    def H(self, r):
        q = np.asarray(r, dtype=float) / (2 * self.s ** 2)
        return _qpow(q, self.b) * np.exp(-q)

    def dH(self, r):
        """dH/dr."""
        q = np.asarray(r, dtype=float) / (2 * self.s ** 2)
        return (self.b * _qpow(q, self.b - 1) - _qpow(q, self.b)) * np.exp(-q) / (2 * self.s ** 2)

    def d2H(self, r):
        q = np.asarray(r, dtype=float) / (2 * self.s ** 2)
        b = self.b
        poly = b * (b - 1) * _qpow(q, b - 2) - 2 * b * _qpow(q, b - 1) + _qpow(q, b)
        return poly * np.exp(-q) / (2 * self.s ** 2) ** 2

    def value(self, u):
        u = np.asarray(u, dtype=float)
        return self.H(np.sum(u * u, axis=-1))

    def grad(self, u):
        u = np.asarray(u, dtype=float)
        r = np.sum(u * u, axis=-1)
        return 2.0 * u * self.dH(r)[..., None]

    def hess(self, u):
        u = np.asarray(u, dtype=float)
        r = np.sum(u * u, axis=-1)
        eye = np.eye(u.shape[-1])
        return 2.0 * self.dH(r)[..., None, None] * eye + 4.0 * self.d2H(r)[..., None, None] * \
            u[..., :, None] * u[..., None, :]

    def hess_diag(self, u):
        u = np.asarray(u, dtype=float)
        r = np.sum(u * u, axis=-1)
        return 2.0 * self.dH(r)[..., None] + 4.0 * self.d2H(r)[..., None] * u * u

    def support_radius(self, tol_exp: float = 40.0) -> float:
        """Radius beyond which |h|^2 and its derivatives are negligible."""
        return self.s * math.sqrt(2.0 * (tol_exp + 4.0 * self.b + 4.0))


@dataclass(frozen=True)
class TestFunction:
    """psi(x, u) = g(x) h(u)."""

    g: FourierMode
    h: ValueFactor

    def __call__(self, x, u):
        return self.value(x, u)

    def value(self, x, u):
        return self.g.value(x) * self.h.value(u)

    def grad_u(self, x, u):
        return self.g.value(x)[..., None] * self.h.grad(u)

    def hess_u(self, x, u):
        return self.g.value(x)[..., None, None] * self.h.hess(u)

    def hess_diag_u(self, x, u):
        return self.g.value(x)[..., None] * self.h.hess_diag(u)


@dataclass
class LinearCombination:
    """sum_p coef[p] members[p]."""

    members: Sequence[TestFunction]
    coef: np.ndarray

    def __call__(self, x, u):
        return self.value(x, u)

    def _sum(self, attr, x, u):
        out = 0.0
        for c, m in zip(self.coef, self.members):
            if c != 0.0:
                out = out + c * getattr(m, attr)(x, u)
        return out

    def value(self, x, u):
        return self._sum("value", x, u) + np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1]))

    def grad_u(self, x, u):
        return self._sum("grad_u", x, u) + np.zeros(np.shape(u))

    def hess_u(self, x, u):
        return self._sum("hess_u", x, u) + np.zeros(np.shape(u) + (np.shape(u)[-1],))

    def hess_diag_u(self, x, u):
        return self._sum("hess_diag_u", x, u) + np.zeros(np.shape(u))


def eval_V(j: int, x, u, psi):
    """D_u^j psi at (x, u): value, gradient (..., d_v) or Hessian (..., d_v, d_v)."""
    if j == 0:
        return psi.value(x, u)
    if j == 1:
        return psi.grad_u(x, u)
    if j == 2:
        return psi.hess_u(x, u)
    raise ValueError("j must be 0, 1 or 2")


# ---------------------------------------------------------------- quadrature

def _u_rule(d_v: int, radius: float, per_dim: int | None = None):
    if per_dim is None:
        per_dim = {1: 128, 2: 64}.get(d_v, 24)
    panels = max(1, per_dim // 16)
    nodes, weights = _GL16
    edges = np.linspace(0.0, radius, panels + 1)
    pts = np.concatenate([0.5 * (a + b) + 0.5 * (b - a) * nodes for a, b in zip(edges[:-1], edges[1:])])
    wts = np.concatenate([0.5 * (b - a) * weights for a, b in zip(edges[:-1], edges[1:])])
    mesh = np.meshgrid(*([pts] * d_v), indexing="ij")
    wmesh = np.meshgrid(*([wts] * d_v), indexing="ij")
    u = np.stack([m.ravel() for m in mesh], axis=-1)
    w = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
    return u, w


def _x_rule(d: int, degree: int):
    n = 2 * degree + 2
    ax = (np.arange(n) + 0.5) / n
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1), np.full(n ** d, 1.0 / n ** d)


def _u_weight(u, theta):
    r = np.sqrt(np.sum(u * u, axis=-1))
    return 1.0 / (1.0 + r ** (2.0 * theta))


def _value_gram(factors: Sequence[ValueFactor], d_v: int, k: int, theta: float, radius=None):
    radius = radius or max(f.support_radius() for f in factors)
    u, w = _u_rule(d_v, radius)
    w = w * _u_weight(u, theta)
    vals = [np.stack([f.value(u) for f in factors], axis=-1)[..., None]]
    if k >= 1:
        vals.append(np.stack([f.grad(u) for f in factors], axis=1))
    if k >= 2:
        vals.append(np.stack([f.hess(u).reshape(u.shape[0], -1) for f in factors], axis=1))
    G = np.zeros((len(factors), len(factors)))
    for arr in vals:
        a = arr.reshape(u.shape[0], len(factors), -1)
        G += np.einsum("n,npi,nqi->pq", w, a, a)
    return G


def _mode_gram(modes: Sequence[FourierMode], d: int):
    deg = max(m.degree for m in modes)
    x, w = _x_rule(d, deg)
    V = np.stack([m.value(x) for m in modes], axis=-1)
    return (V * w[:, None]).T @ V


def weighted_norm(psi, k: int = 0, theta: float = 0.0, d_v: int = 1) -> float:
    """Quadrature value of (sum_{j<=k} int_Q int_{R+^dv} |D_u^j psi|^2 / (1 + |u|^(2 theta)))^(1/2)."""
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    if isinstance(psi, TestFunction):
        members, coef = [psi], np.ones(1)
    elif isinstance(psi, LinearCombination):
        members, coef = list(psi.members), np.asarray(psi.coef, dtype=float)
    else:
        raise TypeError("weighted_norm expects a TestFunction or LinearCombination")
    if not np.any(coef):
        return 0.0
    G = gram_matrix(members, k, theta, d_v)
    return float(math.sqrt(max(coef @ G @ coef, 0.0)))


def gram_matrix(members: Sequence[TestFunction], k: int = 0, theta: float = 0.0, d_v: int = 1) -> np.ndarray:
    """Weighted Sobolev Gram matrix; D_u never touches g, so it factors."""
    d = len(members[0].g.freqs)
    modes = list(dict.fromkeys(m.g for m in members))
    facs = list(dict.fromkeys(m.h for m in members))
    Gx = _mode_gram(modes, d)
    Gu = _value_gram(facs, d_v, k, theta)
    ix = np.array([modes.index(m.g) for m in members])
    iu = np.array([facs.index(m.h) for m in members])
    return Gx[np.ix_(ix, ix)] * Gu[np.ix_(iu, iu)]


def orthonormalize(G: np.ndarray, clip: float = 1e-12):
    """Coefficients C with C^T G C = I (Cholesky, so an identity Gram gives C = I).

    Returns (C, clipped) where ``clipped`` is the eigenvalue mass added to
    reach positive definiteness.
    """
    G = 0.5 * (G + G.T)
    lam = np.linalg.eigvalsh(G)
    floor = clip * max(1.0, float(lam.max()))
    added = 0.0
    if lam.min() < floor:
        added = floor - float(lam.min())
        G = G + added * np.eye(G.shape[0])
    L = np.linalg.cholesky(G)
    C = np.linalg.solve(L.T, np.eye(G.shape[0]))
    return C, added


# ---------------------------------------------------------------- dictionary

@dataclass
class DictionaryValues:
    psi: np.ndarray        # (n, P)
    grad: np.ndarray       # (n, P, d_v)
    hdiag: np.ndarray      # (n, P, d_v)


def exponent_defaults(d: int, d_v: int, alpha: float, gamma: float = 0.1) -> dict:
    """Sobolev orders and weights; '+' means adding gamma."""
    k1 = 1 + d_v / 2 + gamma
    extra = max(2.0, d_v / 2 + gamma)
    t2 = 1 + d_v / 2 + gamma
    return {"kappa1": k1, "kappa2": k1 + extra, "theta2": t2, "theta1": t2 + extra,
            "e_alpha": alpha + d / 2, "gamma": gamma}


def _fourier_modes(d: int, count: int):
    out = [FourierMode((0,) * d)]
    F = 0
    while len(out) < count:
        F += 1
        shell = []
        for idx in np.ndindex(*([2 * F + 1] * d)):
            fr = tuple(int(i) - F for i in idx)
            if max(abs(f) for f in fr) == F:
                shell.append(fr)
        # cos before sin, lower coordinates first
        shell.sort(key=lambda fr: (sum(1 for f in fr if f != 0), [-f for f in fr]))
        out.extend(FourierMode(fr) for fr in shell)
    return out[:count]


@dataclass
class TestFunctionDictionary:
    members: list
    d: int
    d_v: int
    exponents: dict
    norm_order: int = 2
    norm_theta: float = 0.0
    gram: np.ndarray = field(default=None, repr=False)
    coef: np.ndarray = field(default=None, repr=False)
    clipped: float = 0.0

    def __post_init__(self):
        if self.gram is None:
            self.gram = self._gram(self.norm_order, self.norm_theta)
            self.coef, self.clipped = orthonormalize(self.gram)

    @property
    def P(self) -> int:
        return len(self.members)

    def _gram(self, k, theta):
        modes = list(dict.fromkeys(m.g for m in self.members))
        facs = list(dict.fromkeys(m.h for m in self.members))
        Gx = _mode_gram(modes, self.d)
        Gu = _value_gram(facs, self.d_v, k, theta)
        ix = np.array([modes.index(m.g) for m in self.members])
        iu = np.array([facs.index(m.h) for m in self.members])
        return Gx[np.ix_(ix, ix)] * Gu[np.ix_(iu, iu)]

    def gram_matrix(self, k: int | None = None, theta: float | None = None):
        return self._gram(self.norm_order if k is None else k, self.norm_theta if theta is None else theta)

    def weighted_norm(self, coef, k: int = 0, theta: float = 0.0) -> float:
        G = self._gram(k, theta)
        c = np.asarray(coef, dtype=float)
        return float(math.sqrt(max(c @ G @ c, 0.0)))

    def orthonormal_members(self):
        return [LinearCombination(self.members, self.coef[:, i]) for i in range(self.P)]

    def evaluate(self, x, u, orthonormal: bool = False) -> DictionaryValues:
        """Values, u-gradients and diagonal u-Hessians of all members at points (n, d), (n, d_v)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        modes = list(dict.fromkeys(m.g for m in self.members))
        facs = list(dict.fromkeys(m.h for m in self.members))
        gv = np.stack([m.value(x) for m in modes], axis=-1)
        hv = np.stack([f.value(u) for f in facs], axis=-1)
        hg = np.stack([f.grad(u) for f in facs], axis=-2)
        hh = np.stack([f.hess_diag(u) for f in facs], axis=-2)
        ix = [modes.index(m.g) for m in self.members]
        iu = [facs.index(m.h) for m in self.members]
        G = gv[..., ix]
        psi = G * hv[..., iu]
        grad = G[..., None] * hg[..., iu, :]
        hdiag = G[..., None] * hh[..., iu, :]
        if orthonormal:
            psi = psi @ self.coef
            grad = np.einsum("...pb,pq->...qb", grad, self.coef)
            hdiag = np.einsum("...pb,pq->...qb", hdiag, self.coef)
        return DictionaryValues(psi, grad, hdiag)

    def pairings(self, cloud: WeightedPointCloud, orthonormal: bool = False) -> np.ndarray:
        """<mu, psi_p> for every member."""
        vals = self.evaluate(cloud.x, cloud.u, orthonormal).psi
        return cloud.w @ vals

    def boundary_flux(self, n_points: int = 100, seed: int = 0, radius: float = 6.0) -> float:
        """Max |d psi / d u^beta| over random points on the faces {u^beta = 0}."""
        g = np.random.Generator(np.random.Philox(key=seed))
        worst = 0.0
        for beta in range(self.d_v):
            x = g.random((n_points, self.d))
            u = radius * g.random((n_points, self.d_v))
            u[:, beta] = 0.0
            ev = self.evaluate(x, u)
            worst = max(worst, float(np.max(np.abs(ev.grad[..., beta]))))
        return worst


def build_dictionary(d: int = 1, d_v: int = 1, P_x: int = 3, P_u: int = 2, scales=(1.0,),
                     alpha: float = 0.5, norm_order: int = 2, norm_theta: float | None = None,
                     gamma: float = 0.1) -> TestFunctionDictionary:
    """All products of the first P_x real Fourier modes with P_u value factors.

    Value factors cycle through ``scales`` with increasing polynomial degree
    b = 0, 1, ...: (s0, b=0), (s1, b=0), ..., (s0, b=1), ...
    """
    if P_x < 1 or P_u < 1:
        raise ValueError("P_x and P_u must be at least 1")
    modes = _fourier_modes(d, P_x)
    scales = tuple(scales)
    facs = [ValueFactor(j // len(scales), float(scales[j % len(scales)])) for j in range(P_u)]
    members = [TestFunction(g, h) for g in modes for h in facs]
    ex = exponent_defaults(d, d_v, alpha, gamma)
    theta = ex["theta2"] if norm_theta is None else norm_theta
    return TestFunctionDictionary(members, d, d_v, ex, norm_order, theta)


# ---------------------------------------------------------------- generator

def _psi_arrays(psi, x, u):
    """Values, gradients and Hessian diagonals for one function or a dictionary."""
    if isinstance(psi, TestFunctionDictionary):
        ev = psi.evaluate(x, u)
        return ev.psi, ev.grad, ev.hdiag, True
    return psi.value(x, u), psi.grad_u(x, u), psi.hess_diag_u(x, u), False


def _as_summary(model, t, mu):
    return mu if isinstance(mu, MeasureSummary) else model.summarize(t, mu)


def generator_values(model: CoefficientModel, t, summary: MeasureSummary, x, u, psi,
                     diffusion_weight: float = 1.0):
    """L_t(mu)[psi](x, u) = grad psi . b + w sum_beta d^2 psi / du_beta^2 sigma_beta^2."""
    b, s = model.coefficients(x, t, u, summary)
    val, grad, hd, many = _psi_arrays(psi, x, u)
    if many:
        return np.einsum("npb,nb->np", grad, b) + diffusion_weight * np.einsum("npb,nb->np", hd, s * s)
    return np.sum(grad * b, axis=-1) + diffusion_weight * np.sum(hd * s * s, axis=-1)


def apply_L(mu, t, psi, model: CoefficientModel, points=None, diffusion_weight: float = 1.0):
    """Generator with measure argument ``mu``; a function of (x, u) unless points are given."""
    summary = _as_summary(model, t, mu)

    def f(x, u):
        return generator_values(model, t, summary, np.asarray(x, float), np.asarray(u, float), psi,
                                diffusion_weight)
    if points is not None:
        return f(*points)
    return f


def chord_dphi(phi, a, b):
    """int_0^1 phi'((1 - lam) a + lam b) d lam by 16-point Gauss-Legendre."""
    nodes, weights = _GL16
    lam = 0.5 * (nodes + 1.0)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    return 0.5 * np.sum(weights * phi.df((1.0 - lam) * a + lam * b), axis=-1)


def _kernel_transpose(kernel, t, xs, us, G, y, v):
    """sum_a G[a, p] k(x_a, y, t, u_a, v) at targets, for G of shape (n_a, P)."""
    if kernel.is_zero():
        return np.zeros((y.shape[0], G.shape[1]))
    if kernel.separable:
        Lm = np.stack([np.broadcast_to(p(xs, t, us), (xs.shape[0],)) for p in kernel.left], axis=-1)
        Rm = np.stack([np.broadcast_to(q(y, t, v), (y.shape[0],)) for q in kernel.right], axis=-1)
        return Rm @ (Lm.T @ G)
    assert isinstance(kernel, PairwiseKernel)
    out = np.empty((y.shape[0], G.shape[1]))
    for s in range(0, y.shape[0], kernel.chunk):
        sl = slice(s, s + kernel.chunk)
        K = kernel.func(xs[None], y[sl, None, :], t, us[None], v[sl, None, :])
        out[sl] = K @ G
    return out


@dataclass
class LinearizationData:
    """Per-atom weights of nu that define the measure terms of the linearised operator."""

    xs: np.ndarray
    us: np.ndarray
    Gb: np.ndarray     # (n_nu, P)
    Gs: np.ndarray     # (n_nu, P)
    summary_mu: MeasureSummary
    many: bool


def linearization_data(mu, nu: WeightedPointCloud, t, psi, model: CoefficientModel,
                       diffusion_weight: float = 1.0) -> LinearizationData:
    sm = _as_summary(model, t, mu)
    sn = model.summarize(t, nu)
    xs, us, w = nu.x, nu.u, nu.w
    _, grad, hd, many = _psi_arrays(psi, xs, us)
    if not many:
        grad, hd = grad[:, None, :], hd[:, None, :]
    bmu, bnu = model.inner_b(xs, t, us, sm), model.inner_b(xs, t, us, sn)
    smu, snu = model.inner_sigma(xs, t, us, sm), model.inner_sigma(xs, t, us, sn)
    phib = chord_dphi(model.phi, bnu, bmu)
    phis = chord_dphi(model.phi, snu, smu)
    s0 = model.sigma0(xs, t, us)
    s0 = np.broadcast_to(s0, us.shape)
    Gb = w[:, None] * phib[:, None] * np.sum(grad, axis=-1)
    both = model.phi.f(snu) + model.phi.f(smu)
    Gs = diffusion_weight * w[:, None] * phis[:, None] * (
        np.einsum("npb,nb->np", hd, 2.0 * s0) + both[:, None] * np.sum(hd, axis=-1))
    return LinearizationData(xs, us, Gb, Gs, sm, many)


def linearized_values(model: CoefficientModel, t, data: LinearizationData, y, v, psi,
                      diffusion_weight: float = 1.0):
    """Linearised operator evaluated at targets (y, v) from precomputed nu-weights."""
    base = generator_values(model, t, data.summary_mu, y, v, psi, diffusion_weight)
    if not data.many:
        base = base[:, None]
    extra = _kernel_transpose(model.b1, t, data.xs, data.us, data.Gb, y, v) + \
        _kernel_transpose(model.sigma1, t, data.xs, data.us, data.Gs, y, v)
    out = base + extra
    return out if data.many else out[:, 0]


def apply_linearized_L(mu, nu: WeightedPointCloud, t, psi, model: CoefficientModel, points=None,
                       diffusion_weight: float = 1.0):
    """(y, v) -> linearised generator of mu around nu applied to psi.

    It satisfies C(<mu, L(mu) psi> - <nu, L(nu) psi>) = <C(mu - nu), result>
    for every pair of measures, up to the chord quadrature.
    """
    data = linearization_data(mu, nu, t, psi, model, diffusion_weight)

    def f(y, v):
        return linearized_values(model, t, data, np.asarray(y, float), np.asarray(v, float), psi,
                                 diffusion_weight)
    if points is not None:
        return f(*points)
    return f
