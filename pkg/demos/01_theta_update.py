"""
Closed-form hyperparameter update
=================================

For fixed u the optimal variance theta_i has a closed form.  Here we compare it
with a brute-force minimisation of the scalar objective and print how the
update shrinks small coefficients.
"""
import numpy as np
from scipy.optimize import minimize_scalar

from sparse_ekp.hyperprior import HyperParams, theta_scalar_objective, theta_update_gengamma

u = np.array([1e-3, 0.1, 0.5, 1.0, 3.0])

for r in (1 / 3, 1.0, 2.0):
    hp = HyperParams(r)
    closed = theta_update_gengamma(u, hp)
    # brute force in log theta
    brute = [np.exp(minimize_scalar(lambda s: theta_scalar_objective(np.exp(s), ui, r),
                                    bounds=(-40, 10), method="bounded",
                                    options={"xatol": 1e-10}).x) for ui in u]
    print(f"r = {r:.3f}")
    for ui, a, b in zip(u, closed, brute):
        print(f"  u = {ui:7.3f}  theta = {a:.6e}  brute force = {b:.6e}")
