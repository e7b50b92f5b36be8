"""For an x-homogeneous model the limiting law solves a 1D Fokker-Planck equation on the half line.

We solve it with the finite-volume scheme and compare against a McKean-Vlasov
particle ensemble in W1.

Run: python3 demos/fokker_planck.py
"""
import numpy as np

from meanfield_fluct import (FPGrid1D, InitialDataSampler, NoiseFieldSampler, build_model,
                             simulate_mckean_ensemble, solve_fp_1d, w1_samples_vs_density)

model = build_model("homogeneous")
a0, a1, dt = 0.6, 0.3, 0.005
grid = FPGrid1D(8.0, 400)

# initial density of a0 |xi0| + a1 |xi1| by Monte Carlo histogram; the scheme renormalises the mass
g = np.random.default_rng(0)
s = a0 * np.abs(g.standard_normal(2_000_000)) + a1 * np.abs(g.standard_normal(2_000_000))
f0, _ = np.histogram(s, bins=grid.faces, density=True)

x = (np.arange(64) + 0.5)[:, None] / 64
init = InitialDataSampler(alpha=1.0, seed=5, a0=a0, a1=a1, c=0.0, independent=True)
sampler = NoiseFieldSampler(0.1, x, dt, 6, independent=True)

for T in (0.25, 0.5, 1.0):
    sol = solve_fp_1d(model, f0, T, grid)
    ens = simulate_mckean_ensemble(model, x, 128, T, dt, sampler, init)
    u = ens.final.u.ravel()
    print(f"T = {T:4.2f}  mean(FP) = {np.sum(sol.densities[-1] * grid.centers) * grid.du:.4f}"
          f"  mean(ensemble) = {u.mean():.4f}  W1 = {w1_samples_vs_density(u, sol):.4f}")
