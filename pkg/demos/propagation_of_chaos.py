"""Coupling the particle system to its McKean-Vlasov limit and watching the gap close.

Each particle and its McKean copy share initial data and noise; only the
measure they feel differs. The sup-in-time L2 gap should fall like M^(-1/2).

Run: python3 demos/propagation_of_chaos.py      (about 15 s on one core)
"""
import numpy as np

from meanfield_fluct import (InitialDataSampler, NoiseFieldSampler, SpatialGrid, build_model, coupled_error,
                             coupled_run, reference_law)
from meanfield_fluct.experiments import fit_rate

model = build_model("linrelax", lam0=1.0, lam1=0.0, c_b=0.7)
eps, dt, T, N = 0.1, 0.02, 1.0, 64
init = InitialDataSampler(alpha=0.5, seed=3, a0=0.6, a1=0.3, c=0.7)

print("reference law from a large self-consistent ensemble ...")
law = reference_law(model, T, dt, eps, init, n_locations=16384, K=8, seed=1)

grid = SpatialGrid(N)
Ms = np.array([4, 16, 64, 256])
errs = []
for M in Ms:
    runs = []
    for r in range(12):
        sampler = NoiseFieldSampler(eps, grid.centers, dt, seed=1000 + r)
        runs.append(coupled_run(model, grid, int(M), T, dt, sampler,
                                InitialDataSampler(0.5, 2000 + r, 0.6, 0.3, 0.7), law))
    errs.append(coupled_error(runs))
    print(f"M = {M:3d}  coupled error = {errs[-1]:.4f}")

fit = fit_rate(Ms, np.array(errs))
print(f"log-log slope {fit.slope:.3f} (theory -0.5), r^2 = {fit.r2:.3f}")

decoupled = build_model("decoupled")
law0 = reference_law(decoupled, T, dt, eps, init, n_locations=64, K=2, seed=1)
sampler = NoiseFieldSampler(eps, grid.centers, dt, seed=5)
print("decoupled model, coupled error:", coupled_error([coupled_run(decoupled, grid, 8, T, dt, sampler, init, law0)]))
