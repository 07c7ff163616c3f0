"""
Recovering a log-absorption rate from a transport equation
==========================================================

The forward map solves a first-order PDE on a 21 x 21 grid by
characteristics.  We compare l1 and l0.5 hyperpriors for one solver seed.
"""
import numpy as np

from sparse_ekp.driver import OuterConfig, method_label, run_outer
from sparse_ekp.hyperprior import HyperParams
from sparse_ekp.kalman import KalmanConfig
from sparse_ekp.problems import make_transport_problem, transport_log_rate

prob = make_transport_problem(seed=0)
x = np.linspace(0, 1, 6)
print("true log rate at", x, ":", np.round(transport_log_rate(prob.truth, x), 3))

for r in (1.0, 1 / 3):
    cfg = OuterConfig(KalmanConfig(alpha=0.5, T=20, N=100), HyperParams(r), theta0=0.04, max_outer=4)
    rec = run_outer(prob, cfg, seed=0)
    print(method_label("iekf", r), "l2 error per outer:", np.round(rec.series("l2_error"), 3))
    print("  estimate at x:", np.round(transport_log_rate(rec.final.estimate, x), 3))
