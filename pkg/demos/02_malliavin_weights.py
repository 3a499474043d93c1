"""The weight machinery behind regression-free conditional expectations.

Builds the per-path pi vectors for a date pair, their deterministic
covariance, and the aggregate weight Gamma via the involution recursion,
then checks the recursion against brute-force enumeration.
"""

import numpy as np

from mcmpricer import (
    TimeGrid,
    build_vol,
    compute_pi,
    compute_pi_covariance,
    gamma_bruteforce,
    gamma_recursive,
    build_vol as _bv,
    simulate_paths,
)

vol = build_vol(3, np.tril([[0.2, 0.0, 0.0], [0.08, 0.25, 0.0], [0.03, 0.05, 0.3]]))
grid = TimeGrid(1.0, 2)
paths = simulate_paths(vol, grid, 100.0, 0.0, 2**15, seed=7)

pi = compute_pi(paths, s_index=1, t_index=2)
print("E[pi^k] (expect 1.0):", pi.mean(axis=0).round(4))

cov = compute_pi_covariance(vol, 0.5, 1.0)
print("closed-form Cov(pi):\n", cov.round(3))
print("sampled   Cov(pi):\n", np.cov(pi.T).round(3))

gam = gamma_recursive(pi, cov)
brute = gamma_bruteforce(pi, cov)
print("max |recursion - enumeration|:", np.abs(gam - brute).max())

# The d=2 closed form: Gamma = pi1 pi2 - C12.
pi2 = np.array([[1.3, 0.7]])
c2 = np.array([[2.0, 0.4], [0.4, 2.0]])
print("d=2 identity:", gamma_recursive(pi2, c2)[0], "=", 1.3 * 0.7 - 0.4)
