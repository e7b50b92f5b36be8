"""Spatially eps-correlated, temporally white Gaussian noise on the torus."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import gamma

from . import rng


class ConfigurationError(ValueError):
    """Invalid combination of numerical parameters."""


def bump_profile(r):
    """Default radial profile (1 - r^2)^2 on the unit ball."""
    r = np.asarray(r, dtype=float)
    return np.where(r < 1.0, (1.0 - r * r) ** 2, 0.0)


def torus_delta(x, y):
    """Componentwise periodic displacement x - y mapped into [-1/2, 1/2)."""
    dx = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return dx - np.floor(dx + 0.5)


def torus_distance(x, y):
    """Euclidean distance on the unit torus; trailing axis is the coordinate."""
    return np.sqrt(np.sum(torus_delta(x, y) ** 2, axis=-1))


@dataclass(frozen=True)
class Mollifier:
    """Radial mollifier supported in the unit ball of R^d."""

    d: int = 1
    profile: Callable = bump_profile
    n_radial: int = 64

    @property
    def C_rho(self) -> float:
        """(int rho^2)^-1, by Gauss-Legendre in the radial variable."""
        nodes, weights = np.polynomial.legendre.leggauss(self.n_radial)
        r = 0.5 * (nodes + 1.0)
        surface = 2.0 * math.pi ** (self.d / 2) / gamma(self.d / 2)
        integral = surface * 0.5 * np.sum(weights * self.profile(r) ** 2 * r ** (self.d - 1))
        return 1.0 / integral

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.d == 1 and (z.ndim == 0 or z.shape[-1] != 1):
            return self.profile(np.abs(z))
        return self.profile(np.sqrt(np.sum(z * z, axis=-1)))


def mollifier_eval(z, mollifier: Mollifier | None = None):
    return (mollifier or Mollifier(d=np.atleast_1d(z).shape[-1]))(z)


def correlation_R(x, epsilon: float, mollifier: Mollifier | None = None, order: int = 48):
    """Spatial correlation R^eps(x) = C_rho * int rho(z + x/eps) rho(z) dz.

    ``x`` has shape (..., d) (or is scalar/1-D for d = 1). Fixed-order
    Gauss-Legendre quadrature: on the overlap interval in 1-D, in polar
    coordinates over the unit ball for d >= 2.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    mol = mollifier or Mollifier()
    x = np.asarray(x, dtype=float)
    if mol.d == 1:
        s = np.abs(x[..., 0] if (x.ndim and x.shape[-1] == 1 and x.ndim > 1) else x) / epsilon
        s = np.asarray(s, dtype=float)
        nodes, weights = np.polynomial.legendre.leggauss(order)
        lo = np.maximum(-1.0, -1.0 - s)
        hi = np.minimum(1.0, 1.0 - s)
        width = np.clip(hi - lo, 0.0, None)
        z = lo[..., None] + 0.5 * width[..., None] * (nodes + 1.0)
        vals = mol.profile(np.abs(z + s[..., None])) * mol.profile(np.abs(z))
        out = mol.C_rho * 0.5 * width * np.sum(weights * vals, axis=-1)
        return np.where(s >= 2.0, 0.0, out)
    # radial symmetry: R depends on |x| only
    s = np.sqrt(np.sum(x * x, axis=-1)) / epsilon
    nodes, weights = np.polynomial.legendre.leggauss(order)
    r = 0.5 * (nodes + 1.0)
    wr = 0.5 * weights
    if mol.d == 2:
        th = np.pi * (nodes + 1.0)
        wth = np.pi * weights
        rr, tt = np.meshgrid(r, th, indexing="ij")
        w2 = np.outer(wr, wth) * rr
        z1 = rr * np.cos(tt)
        z2 = rr * np.sin(tt)
        base = mol.profile(rr)
        shifted = mol.profile(np.sqrt((z1[None] + np.ravel(s)[:, None, None]) ** 2 + z2[None] ** 2))
        vals = np.sum(w2[None] * base[None] * shifted, axis=(1, 2))
        out = mol.C_rho * vals.reshape(np.shape(s))
        return np.where(s >= 2.0, 0.0, out)
    raise NotImplementedError("correlation_R implemented for d <= 2")


@dataclass
class NoiseFieldSampler:
    """Discrete increments of W^eps at fixed locations of the torus [0,1]^d.

    White-noise atoms on a periodic auxiliary grid of spacing h are
    convolved with rho_eps. Each location's kernel row is renormalised so
    that its single-step variance is exactly dt. Atoms are keyed by
    (seed, step, cell, copy id, direction) through the counter-based RNG, so
    any two systems using the same sampler parameters and copy ids see the
    same field.

    With ``independent=True`` every location gets its own standard Brownian
    increment instead (same marginal law, no spatial correlation); used for
    law-proxy ensembles where only one-point marginals matter.
    """

    epsilon: float
    locations: np.ndarray
    dt: float
    seed: int
    d_v: int = 1
    h: float | None = None
    mollifier: Mollifier | None = None
    independent: bool = False
    _matrix: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        self.locations = loc
        d = loc.shape[1]
        if self.mollifier is None:
            self.mollifier = Mollifier(d=d)
        if not 0.0 < self.epsilon <= 0.5:
            raise ConfigurationError("epsilon must lie in (0, 0.5]")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.h is None:
            self.h = self.epsilon / 8.0
        if self.h > self.epsilon / 4.0:
            raise ConfigurationError(
                f"auxiliary spacing h={self.h} exceeds eps/4={self.epsilon / 4}; correlation under-resolved")
        if self.independent:
            self._matrix = None
            return
        n_side = int(math.ceil(1.0 / self.h))
        self.n_side = n_side
        self.cell_spacing = 1.0 / n_side
        grids = np.meshgrid(*([(np.arange(n_side) + 0.5) / n_side] * d), indexing="ij")
        cells = np.stack([g.ravel() for g in grids], axis=-1)
        self.n_cells = cells.shape[0]
        reach = int(math.ceil(self.epsilon * n_side)) + 1
        rows, cols, vals = [], [], []
        offsets = np.stack(np.meshgrid(*([np.arange(-reach, reach + 1)] * d), indexing="ij"), -1).reshape(-1, d)
        strides = n_side ** np.arange(d - 1, -1, -1)
        for i, x in enumerate(loc):
            base = np.floor(x * n_side).astype(int)
            idx = (base[None, :] + offsets) % n_side
            flat = idx @ strides
            z = cells[flat]
            w = self.mollifier(torus_delta(z, x[None, :]) / self.epsilon)
            keep = w > 0
            flat, w = flat[keep], w[keep]
            # duplicates only arise when reach wraps all the way round
            flat, inv = np.unique(flat, return_inverse=True)
            w = np.bincount(inv, weights=w)
            w = w / np.sqrt(np.sum(w * w))
            rows.append(np.full(flat.size, i))
            cols.append(flat)
            vals.append(w)
        self._matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(loc.shape[0], self.n_cells))

    @property
    def n_locations(self) -> int:
        return self.locations.shape[0]

    def kernel_matrix(self):
        """Row-normalised (locations x cells) convolution matrix."""
        return self._matrix

    def discrete_correlation(self):
        """Exact same-time correlation matrix of the discrete field."""
        if self.independent:
            return np.eye(self.n_locations)
        return (self._matrix @ self._matrix.T).toarray()

    def sample_increments(self, step_index: int, copies=None):
        """Increments for one step, shape (n_locations, n_copies, d_v).

        ``copies`` are integer copy ids (default: a single copy with id 0).
        """
        if step_index < 0:
            raise ValueError("step_index must be nonnegative")
        copies = np.atleast_1d(np.arange(1) if copies is None else np.asarray(copies))
        scale = math.sqrt(self.dt)
        if self.independent:
            loc_ids = np.arange(self.n_locations)
            z = rng.normals(loc_ids[:, None], copies[None, :], step_index,
                            rng.TAG_NOISE_INDEPENDENT, self.d_v, self.seed)
            return scale * z
        atoms = rng.normals(np.arange(self.n_cells)[:, None], copies[None, :], step_index,
                            rng.TAG_NOISE, self.d_v, self.seed)
        flat = atoms.reshape(self.n_cells, -1)
        out = self._matrix @ flat
        return scale * out.reshape(self.n_locations, copies.size, self.d_v)


@dataclass
class CoarsenedSampler:
    """Sums ``factor`` consecutive increments of a finer sampler.

    Runs at dt and dt/2 then see the same Brownian paths, which is what a
    pathwise dt-halving check needs.
    """

    fine: NoiseFieldSampler
    factor: int

    @property
    def dt(self) -> float:
        return self.fine.dt * self.factor

    @property
    def epsilon(self) -> float:
        return self.fine.epsilon

    @property
    def locations(self):
        return self.fine.locations

    @property
    def n_locations(self) -> int:
        return self.fine.n_locations

    @property
    def d_v(self) -> int:
        return self.fine.d_v

    def discrete_correlation(self):
        return self.fine.discrete_correlation()

    def sample_increments(self, step_index: int, copies=None):
        out = self.fine.sample_increments(step_index * self.factor, copies)
        for j in range(1, self.factor):
            out = out + self.fine.sample_increments(step_index * self.factor + j, copies)
        return out
