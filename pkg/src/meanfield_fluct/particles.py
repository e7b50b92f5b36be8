"""Reflected Euler time stepping for the particle system and McKean-Vlasov ensembles."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng
from .coefficients import CoefficientModel, MeasureSummary, lacunary_profile
from .noise import NoiseFieldSampler
from .transport import WeightedPointCloud


class NumericalError(RuntimeError):
    """Non-finite coefficients or blow-up during time stepping."""


# ---------------------------------------------------------------- grids and initial data

@dataclass
class SpatialGrid:
    """Centers of the N equispaced cells of side N^(-1/d) in [0,1]^d."""

    N: int
    d: int = 1
    centers: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        side = int(round(self.N ** (1.0 / self.d)))
        if side ** self.d != self.N or self.N < 1:
            raise ValueError(f"N={self.N} is not a perfect {self.d}-th power")
        self.n_side = side
        ax = (np.arange(side) + 0.5) / side
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        self.centers = np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def cell_measure(self) -> float:
        return 1.0 / self.N

    @property
    def diameter(self) -> float:
        return math.sqrt(self.d) * self.N ** (-1.0 / self.d)


def jittered_locations(n: int, d: int, seed: int) -> np.ndarray:
    """One uniform point in each of n equal cells (n a perfect d-th power)."""
    grid = SpatialGrid(n, d)
    ids = np.arange(n)
    u = rng.normals(ids, 0, 0, rng.TAG_MISC, 2 * d, seed)
    from scipy.special import ndtr
    jitter = ndtr(u[:, :d]) - 0.5
    return grid.centers + jitter / grid.n_side


@dataclass
class InitialDataSampler:
    """u_k(x, 0) = a0 |xi0| (1 + c w_alpha(x)) + a1 |xi1|, xi standard normal per copy.

    In the default mode one pair (xi0, xi1) per copy and direction drives the
    whole spatial field, so a copy is spatially correlated and alpha-Hoelder
    in mean square. With ``independent=True`` every (location, copy) pair
    draws its own xi, which keeps one-point marginals and drops correlations.
    """

    alpha: float = 0.5
    seed: int = 0
    a0: float = 1.0
    a1: float = 0.5
    c: float = 0.5
    d_v: int = 1
    independent: bool = False
    theta1: float = 1.0
    profile: Callable = None

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("profile amplitude c must lie in [0, 1] to keep data nonnegative")
        if self.a0 < 0 or self.a1 < 0:
            raise ValueError("amplitudes must be nonnegative")

    def spatial_profile(self, x):
        if self.profile is not None:
            return self.profile(x)
        return lacunary_profile(x, self.alpha)

    def xi(self, copies, location_ids=None):
        copies = np.atleast_1d(np.asarray(copies))
        if self.independent:
            z = rng.normals(np.asarray(location_ids)[:, None], copies[None, :], 0,
                            rng.TAG_INITIAL_INDEPENDENT, 2 * self.d_v, self.seed)
        else:
            z = rng.normals(0, copies, 0, rng.TAG_INITIAL, 2 * self.d_v, self.seed)[None]
        return z[..., :self.d_v], z[..., self.d_v:]

    def sample(self, locations, copies, location_ids=None):
        """Initial values at ``locations`` (n, d) for copy ids -> (n, K, d_v)."""
        loc = np.asarray(locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        if self.independent and location_ids is None:
            location_ids = np.arange(loc.shape[0])
        xi0, xi1 = self.xi(copies, location_ids)
        w = self.spatial_profile(loc)[:, None, None]
        return self.a0 * np.abs(xi0) * (1.0 + self.c * w) + self.a1 * np.abs(xi1)


# ---------------------------------------------------------------- state

@dataclass
class ParticleSystemState:
    t: float
    x: np.ndarray      # (N, d)
    u: np.ndarray      # (N, M, d_v)
    ell: np.ndarray    # (N, M, d_v), cumulative reflection, nonpositive
    step: int = 0

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def M(self) -> int:
        return self.u.shape[1]

    @property
    def d_v(self) -> int:
        return self.u.shape[2]

    def copy(self):
        return ParticleSystemState(self.t, self.x, self.u.copy(), self.ell.copy(), self.step)

    def cloud(self) -> WeightedPointCloud:
        N, M, d_v = self.u.shape
        return WeightedPointCloud(np.repeat(self.x, M, axis=0), self.u.reshape(-1, d_v))


@dataclass
class StepData:
    """Everything an online observer may need about one explicit step."""

    step: int
    t: float
    dt: float
    x: np.ndarray
    u: np.ndarray          # start-of-step values
    b: np.ndarray
    sigma: np.ndarray
    dW: np.ndarray
    summary: MeasureSummary
    u_next: np.ndarray


def _as_summary(model, t, x, u, measure):
    if isinstance(measure, MeasureSummary):
        return measure
    if isinstance(measure, WeightedPointCloud):
        return model.summarize(t, measure)
    if measure is None:
        N, M, _ = u.shape
        return model.summarize_arrays(t, x[:, None, :], u, np.full((N, M), 1.0 / (N * M)))
    raise TypeError("frozen measure must be a cloud, a MeasureSummary or None")


def reflected_euler_step(state: ParticleSystemState, model: CoefficientModel, frozen_measure,
                         noise_increments, dt: float, return_details: bool = False):
    """One explicit step followed by projection onto the nonnegative orthant.

    ``frozen_measure`` is a cloud, a precomputed MeasureSummary, or None for
    the state's own empirical measure. ``noise_increments`` has the shape of
    ``state.u``. The reflection increment min(u*, 0) is added to ``ell``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x3 = state.x[:, None, :]
    summary = _as_summary(model, state.t, state.x, state.u, frozen_measure)
    b = model.drift(x3, state.t, state.u, summary)
    s = model.diffusion(x3, state.t, state.u, summary)
    dW = np.asarray(noise_increments, dtype=float).reshape(state.u.shape)
    u_star = state.u + b * dt + s * dW
    if not np.all(np.isfinite(u_star)):
        bad = np.argwhere(~np.isfinite(u_star))[0]
        raise NumericalError(f"non-finite value at particle (i={bad[0]}, k={bad[1]}, beta={bad[2]}) "
                             f"at t={state.t}")
    u_next = np.maximum(u_star, 0.0)
    # reflection increment u* - u_next = min(u*, 0) <= 0
    new = ParticleSystemState(state.t + dt, state.x, u_next, state.ell + (u_star - u_next), state.step + 1)
    if return_details:
        return new, StepData(state.step, state.t, dt, state.x, state.u, b, s, dW, summary, u_next)
    return new


# ---------------------------------------------------------------- law paths

@dataclass
class LawPath:
    """Measure summaries of a reference law at every step start, plus snapshot clouds."""

    dt: float
    summaries: list
    clouds: dict = field(default_factory=dict)   # step -> WeightedPointCloud
    epsilon: float | None = None
    n_atoms: int = 0
    info: dict = field(default_factory=dict)

    def summary(self, step: int) -> MeasureSummary:
        return self.summaries[step]

    def cloud_at(self, step: int) -> WeightedPointCloud:
        return self.clouds[step]

    @property
    def snapshot_steps(self):
        return sorted(self.clouds)


# ---------------------------------------------------------------- trajectories

@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: dict            # step -> ParticleSystemState
    final: ParticleSystemState
    max_abs: float
    dt: float
    law: LawPath | None = None
    epsilon: float | None = None

    def states(self):
        return [self.snapshots[k] for k in sorted(self.snapshots)]

    def empirical_path(self):
        return {k: s.cloud() for k, s in sorted(self.snapshots.items())}


def n_steps_for(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 0 or abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    return n


def _snapshot_steps(snapshot_times, dt, n_steps):
    if snapshot_times is None:
        return {0, n_steps}
    out = set()
    for t in snapshot_times:
        out.add(n_steps_for(t, dt))
    return {s for s in out if 0 <= s <= n_steps}


def _evolve(model, state, n_steps, dt, noise_fn, measure_fn, observers, snap_steps, cap,
            record_law=False, law_cloud_steps=()):
    snapshots = {}
    summaries = [] if record_law else None
    clouds = {}
    max_abs = float(np.max(np.abs(state.u))) if state.u.size else 0.0
    for n in range(n_steps + 1):
        if n in snap_steps:
            snapshots[n] = state.copy()
        if n == n_steps and not record_law:
            break
        summary = measure_fn(n, state)
        if record_law:
            summaries.append(summary)
            if n in law_cloud_steps:
                clouds[n] = state.cloud()
            if n == n_steps:
                break
        dW = noise_fn(n)
        state, data = reflected_euler_step(state, model, summary, dW, dt, return_details=True)
        for obs in observers:
            obs(data)
        m = float(np.max(state.u))
        max_abs = max(max_abs, m)
        if m > cap:
            raise NumericalError(f"blow-up: max|u|={m:.3g} exceeds cap {cap:g} at step {n + 1}")
    return state, snapshots, max_abs, summaries, clouds


def _noise_fn(sampler, copies, shape):
    if sampler is None:
        zeros = np.zeros(shape)
        return lambda n: zeros
    return lambda n: sampler.sample_increments(n, copies)


def simulate_particle_system(model: CoefficientModel, grid: SpatialGrid, M: int, T: float, dt: float,
                             sampler, initial: InitialDataSampler | np.ndarray,
                             snapshot_times=None, observers: Sequence[Callable] = (),
                             cap: float = 1e6, copies=None) -> Trajectory:
    """The N x M particle system driven by its own empirical measure."""
    n_steps = n_steps_for(T, dt)
    copies = np.arange(M) if copies is None else np.asarray(copies)
    x = grid.centers
    u0 = initial.sample(x, copies) if isinstance(initial, InitialDataSampler) else np.asarray(initial, float)
    u0 = np.broadcast_to(u0, (grid.N, M, model.d_v)).copy()
    if np.any(u0 < 0):
        raise ValueError("initial data must be nonnegative")
    w = np.full((grid.N, M), 1.0 / (grid.N * M))
    state = ParticleSystemState(0.0, x, u0, np.zeros_like(u0))
    measure_fn = lambda n, s: model.summarize_arrays(s.t, x[:, None, :], s.u, w)
    state, snaps, mx, _, _ = _evolve(model, state, n_steps, dt, _noise_fn(sampler, copies, u0.shape),
                                     measure_fn, observers, _snapshot_steps(snapshot_times, dt, n_steps), cap)
    return Trajectory(np.arange(n_steps + 1) * dt, snaps, state, mx, dt,
                      epsilon=None if sampler is None else sampler.epsilon)


def simulate_mckean_ensemble(model: CoefficientModel, locations, K: int, T: float, dt: float,
                             sampler, initial: InitialDataSampler | np.ndarray,
                             law: LawPath | None = None, snapshot_times=None,
                             observers: Sequence[Callable] = (), cap: float = 1e6, copies=None,
                             law_cloud_times=None) -> Trajectory:
    """K copies of the McKean-Vlasov SDE at each location.

    Without ``law`` the coefficients see the ensemble's own cloud (each
    location weighted 1/N_f, each copy 1/K), and the resulting measure
    summaries are returned as a LawPath. With ``law`` they see that path
    instead, so copies never influence each other.
    """
    if K < 1 or (law is None and K * len(np.atleast_1d(locations)) < 2):
        raise ValueError("ensemble needs at least two particles")
    if isinstance(locations, SpatialGrid):
        x = locations.centers
    else:
        x = np.asarray(locations, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
    n_steps = n_steps_for(T, dt)
    copies = np.arange(K) if copies is None else np.asarray(copies)
    Nf = x.shape[0]
    u0 = initial.sample(x, copies) if isinstance(initial, InitialDataSampler) else np.asarray(initial, float)
    u0 = np.broadcast_to(u0, (Nf, K, model.d_v)).copy()
    state = ParticleSystemState(0.0, x, u0, np.zeros_like(u0))
    if law is not None:
        if abs(law.dt - dt) > 1e-15:
            raise ValueError("law path was recorded with a different dt")
        if len(law.summaries) < n_steps:
            raise ValueError("law path is shorter than the requested horizon")
        measure_fn = lambda n, s: law.summary(n)
        record = False
    else:
        w = np.full((Nf, K), 1.0 / (Nf * K))
        measure_fn = lambda n, s: model.summarize_arrays(s.t, x[:, None, :], s.u, w)
        record = True
    cloud_steps = _snapshot_steps(law_cloud_times, dt, n_steps) if law_cloud_times is not None else ()
    state, snaps, mx, summaries, clouds = _evolve(
        model, state, n_steps, dt, _noise_fn(sampler, copies, u0.shape), measure_fn, observers,
        _snapshot_steps(snapshot_times, dt, n_steps), cap, record_law=record, law_cloud_steps=cloud_steps)
    out_law = law
    if record:
        out_law = LawPath(dt, summaries, clouds,
                          epsilon=None if sampler is None else sampler.epsilon, n_atoms=Nf * K)
    return Trajectory(np.arange(n_steps + 1) * dt, snaps, state, mx, dt, out_law,
                      epsilon=None if sampler is None else sampler.epsilon)


def reference_law(model: CoefficientModel, T: float, dt: float, epsilon: float, initial: InitialDataSampler,
                  n_locations: int = 2 ** 14, K: int = 8, seed: int = 12345, cloud_times=None,
                  h: float | None = None) -> LawPath:
    """Self-consistent ensemble approximating f(t) = int law(u(x, t)) dx.

    Locations are jittered (one uniform point per cell), and noise and
    initial data are drawn independently per (location, copy): f depends on
    one-point marginals only, so this keeps the estimator unbiased in x and
    its Monte Carlo error of order (n_locations K)^(-1/2).
    """
    x = jittered_locations(n_locations, model.d, rng.derive_seed(seed, 1))
    sampler = NoiseFieldSampler(epsilon, x, dt, rng.derive_seed(seed, 2), model.d_v, h=h, independent=True)
    init = InitialDataSampler(initial.alpha, rng.derive_seed(seed, 3), initial.a0, initial.a1, initial.c,
                              initial.d_v, independent=True, theta1=initial.theta1, profile=initial.profile)
    traj = simulate_mckean_ensemble(model, x, K, T, dt, sampler, init, law_cloud_times=cloud_times)
    law = traj.law
    law.epsilon = epsilon
    law.info.update(n_locations=n_locations, K=K, seed=seed)
    return law


# ---------------------------------------------------------------- coupled runs

@dataclass
class CoupledResult:
    sup_diff: np.ndarray           # (N, M) sup_t |u - ubar|
    particle: Trajectory
    mckean: Trajectory

    def error(self, p: int = 2) -> float:
        """max_i (mean_k sup_t |u_ik - ubar_ik|^p)^(1/p) for this single run."""
        return float(np.max(np.mean(self.sup_diff ** p, axis=1)) ** (1.0 / p))


def coupled_run(model: CoefficientModel, grid: SpatialGrid, M: int, T: float, dt: float,
                sampler, initial: InitialDataSampler, law: LawPath,
                snapshot_times=None, cap: float = 1e6, observers_particle=(), observers_mckean=()) -> CoupledResult:
    """True system and McKean copies at the same points with shared data and noise.

    Particle (i, k) and copy (i, k) start from the same value and consume the
    same increments; the copies see the reference ``law`` instead of the
    empirical measure.
    """
    n_steps = n_steps_for(T, dt)
    if law is not None and len(law.summaries) < n_steps:
        raise ValueError("law path is shorter than the requested horizon")
    x = grid.centers
    copies = np.arange(M)
    u0 = initial.sample(x, copies)
    w = np.full((grid.N, M), 1.0 / (grid.N * M))
    s_true = ParticleSystemState(0.0, x, u0.copy(), np.zeros_like(u0))
    s_mv = ParticleSystemState(0.0, x, u0.copy(), np.zeros_like(u0))
    sup = np.zeros((grid.N, M))
    snap_steps = _snapshot_steps(snapshot_times, dt, n_steps)
    snaps_true, snaps_mv = {}, {}
    mx = 0.0
    for n in range(n_steps + 1):
        if n in snap_steps:
            snaps_true[n] = s_true.copy()
            snaps_mv[n] = s_mv.copy()
        if n == n_steps:
            break
        dW = np.zeros(u0.shape) if sampler is None else sampler.sample_increments(n, copies)
        summ_true = model.summarize_arrays(s_true.t, x[:, None, :], s_true.u, w)
        summ_mv = law.summary(n)
        s_true, d_true = reflected_euler_step(s_true, model, summ_true, dW, dt, return_details=True)
        s_mv, d_mv = reflected_euler_step(s_mv, model, summ_mv, dW, dt, return_details=True)
        for obs in observers_particle:
            obs(d_true)
        for obs in observers_mckean:
            obs(d_mv)
        diff = s_true.u - s_mv.u
        np.maximum(sup, np.sqrt(np.sum(diff * diff, axis=-1)), out=sup)
        mx = max(mx, float(np.max(s_true.u)), float(np.max(s_mv.u)))
        if mx > cap:
            raise NumericalError(f"blow-up: max|u|={mx:.3g} exceeds cap {cap:g} at step {n + 1}")
    times = np.arange(n_steps + 1) * dt
    eps = None if sampler is None else sampler.epsilon
    return CoupledResult(sup, Trajectory(times, snaps_true, s_true, mx, dt, epsilon=eps),
                         Trajectory(times, snaps_mv, s_mv, mx, dt, law, epsilon=eps))


def coupled_error(results: Sequence[CoupledResult], p: int = 2) -> float:
    """sup_i of the Monte Carlo mean of sup_t |u_ik - ubar_ik|^p, to the power 1/p."""
    acc = np.mean([np.mean(r.sup_diff ** p, axis=1) for r in results], axis=0)
    return float(np.max(acc) ** (1.0 / p))


# ---------------------------------------------------------------- export

def write_trajectory_csv(path, trajectory: Trajectory, header: str = ""):
    """Rows (t, i, k, beta, u, ell) for every stored snapshot."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        wr = csv.writer(fh)
        wr.writerow(["t", "i", "k", "beta", "u", "ell"])
        for step in sorted(trajectory.snapshots):
            s = trajectory.snapshots[step]
            N, M, d_v = s.u.shape
            ii, kk, bb = np.meshgrid(np.arange(N), np.arange(M), np.arange(d_v), indexing="ij")
            for i, k, b, u, l in zip(ii.ravel(), kk.ravel(), bb.ravel(), s.u.ravel(), s.ell.ravel()):
                wr.writerow([repr(float(s.t)), int(i), int(k), int(b), repr(float(u)), repr(float(l))])
