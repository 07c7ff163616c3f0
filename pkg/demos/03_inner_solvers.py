"""
IEKF versus IEKF-SL on a small linear-Gaussian problem
======================================================

With a linear map and Gaussian prior, IEKF-SL samples the posterior at its
stationary state while IEKF stays in the span of its initial ensemble.
"""
import numpy as np

from sparse_ekp.core import DiagCovariance
from sparse_ekp.kalman import KalmanConfig, SeedContext, iekf_run, iekfsl_run
from sparse_ekp.problems import make_linear_problem

prob = make_linear_problem(d=5, k=5, sparsity=2, seed=0)
G, gamma, y = prob.forward.G, prob.noise.gamma, prob.y
Gi = np.linalg.inv(gamma)
C = np.linalg.inv(G.T @ Gi @ G + np.eye(5))
m = C @ G.T @ Gi @ y
print("posterior mean:", np.round(m, 4))

P = DiagCovariance(np.ones(5))
sl = iekfsl_run(prob, P, KalmanConfig(alpha=0.1, T=500, N=2000), SeedContext(0))
U = sl.final_ensemble.members
print("IEKF-SL mean:  ", np.round(U.mean(axis=0), 4))
print("cov rel. error: %.3f" % (np.linalg.norm(np.cov(U.T, bias=True) - C) / np.linalg.norm(C)))

for N in (20, 200, 2000):
    res = iekf_run(prob, P, KalmanConfig(alpha=1.0, T=1, N=N), SeedContext(0))
    print(f"IEKF one step, N={N:5d}: rel. error {np.linalg.norm(res.final_mean - m) / np.linalg.norm(m):.3f}")
