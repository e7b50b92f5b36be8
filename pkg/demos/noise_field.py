"""Correlated noise on the torus: the correlation kernel R and what the sampler actually produces.

Run: python3 demos/noise_field.py
"""
import numpy as np

from meanfield_fluct import NoiseFieldSampler, correlation_R

eps, dt, n_steps = 0.1, 1e-3, 4000

# one anchor point plus points at growing distance from it
dist = np.linspace(0.0, 2.5 * eps, 11)
x = np.concatenate([[0.3], 0.3 + dist])[:, None]
sampler = NoiseFieldSampler(eps, x, dt, seed=11)

dW = np.stack([sampler.sample_increments(n, copies=np.arange(1))[:, 0, 0] for n in range(n_steps)])
emp = dW[:, :1].T @ dW[:, 1:] / n_steps / dt
exact = correlation_R(dist[:, None], eps)

print(f"eps = {eps}, {n_steps} steps of dt = {dt}")
print(f"{'|x - y|':>8} {'R exact':>10} {'empirical':>10}")
for r, a, b in zip(dist, exact, emp[0]):
    print(f"{r:8.3f} {a:10.4f} {b:10.4f}")
print("beyond 2 eps the field values are exactly uncorrelated: R =", exact[dist > 2 * eps])
print("the sampled correlation there is sampling noise of order n_steps^-1/2 =", round(n_steps ** -0.5, 3))
