"""The Galerkin Langevin system dc = A^T c dt + dG with Gaussian start.

For constant A, C the covariance solves a Lyapunov ODE; we compare the
Euler-Maruyama ensemble against it and against the stationary Lyapunov solution.

Run: python3 demos/langevin_fixture.py
"""
import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from meanfield_fluct.langevin import constant_system, covariance_ode, simulate_spde

A = np.array([[-1.0, 0.3], [0.0, -0.5]])
C = np.array([[0.4, 0.1], [0.1, 0.2]])
Q0 = np.diag([0.05, 0.3])
T = 4.0
sys = constant_system(A, C, Q0, T)

times, S = covariance_ode(sys, T, 0.01)
_, paths = simulate_spde(sys, T, 0.01, 20000, seed=7, store_every=100)
stationary = solve_continuous_lyapunov(A.T, -C)

for k, t in enumerate(np.arange(0, T + 1e-9, 1.0)):
    emp = np.cov(paths[k].T)
    ode = S[int(round(t / 0.01))]
    print(f"t = {t:.0f}  diag ODE {np.round(np.diag(ode), 4)}  diag SDE {np.round(np.diag(emp), 4)}")
print("stationary Lyapunov diag:", np.round(np.diag(stationary), 4))
