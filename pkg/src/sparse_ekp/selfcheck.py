"""Fast oracle suite behind ``sparse-ekp selfcheck``.

Every library function is looked up through its module at call time, so a
patched (or broken) implementation is what gets checked.
"""
from __future__ import annotations

import numpy as np
import scipy.optimize

from . import core, hyperprior, problems


def check_theta_update(n=60, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        r = float(rng.choice([1 / 3, 0.5, 1.0]))
        vt = rng.uniform(0.1, 10)
        u = rng.normal() * 3
        hp = hyperprior.HyperParams(r, vartheta=vt)
        got = float(hyperprior.theta_update_gengamma(np.array([u]), hp)[0])
        # minimise over log theta so the bracket covers many decades
        f = lambda s: hyperprior.theta_scalar_objective(np.exp(s), u, r, vt, hp.eta)
        grid = np.linspace(-60, 15, 751)
        i = int(np.clip(np.argmin(f(grid)), 1, grid.size - 2))
        res = scipy.optimize.minimize_scalar(f, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                                             method="golden", options={"xtol": 1e-12})
        ref = np.exp(res.x)
        worst = max(worst, abs(got - ref) / ref)
    return worst < 1e-6, f"max rel. deviation from golden-section argmin {worst:.1e}"


def check_manifold_identity(seed=0):
    prob = problems.make_linear_problem(d=10, k=6, sparsity=3, seed=seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in (1 / 3, 1.0):
        hp = hyperprior.HyperParams(r)
        for _ in range(20):
            u = rng.normal(size=10)
            th = hyperprior.theta_update_gengamma(u, hp)
            a = hyperprior.objective_J(u, th, prob, hp)
            b = hyperprior.objective_Jp(u, prob, hp)
            worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    return worst < 1e-10, f"max |J(u, theta*(u)) - Jp(u)| {worst:.1e}"


def check_penrose(seed=0):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(8, 3))
    P = B @ B.T  # rank 3
    X = core.pseudoinverse(P)
    errs = [
        np.linalg.norm(P @ X @ P - P),
        np.linalg.norm(X @ P @ X - X),
        np.linalg.norm((P @ X).T - P @ X),
        np.linalg.norm((X @ P).T - X @ P),
    ]
    scale = np.linalg.norm(P) + np.linalg.norm(X)
    worst = max(errs) / scale
    return worst < 1e-10, f"max Penrose residual {worst:.1e}"


def check_elliptic_residual(seed=0):
    fwd = problems.EllipticForward()
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(fwd.input_dim)
    coeffs[rng.choice(fwd.input_dim, 6, replace=False)] = rng.uniform(-0.5, 0.5, 6)
    A, b = fwd.assemble(coeffs)
    v = fwd.apply(coeffs)
    res = np.linalg.norm(A @ v - b) / np.linalg.norm(b)
    dense = np.linalg.solve(A.toarray(), b)
    agree = np.max(np.abs(dense - v)) / np.max(np.abs(v))
    ok = v.shape == (210,) and res <= 1e-10 and agree <= 1e-10
    return ok, f"relative residual {res:.1e}, dense-solve gap {agree:.1e}"


def check_transport_fd(seed=0, h=1e-6):
    fwd = problems.TransportForward()
    rng = np.random.default_rng(seed)
    u = 0.1 * rng.normal(size=fwd.input_dim)
    J = fwd.jacobian(u)
    worst = 0.0
    for j in rng.choice(fwd.input_dim, 8, replace=False):
        e = np.zeros_like(u)
        e[j] = h
        fd = (fwd.apply(u + e) - fwd.apply(u - e)) / (2 * h)
        worst = max(worst, np.linalg.norm(fd - J[:, j]) / max(1e-12, np.linalg.norm(fd)))
    v0 = fwd.apply(np.zeros(fwd.input_dim))
    base = np.max(np.abs(v0 - fwd.phi_s))
    return worst < 1e-6 and base < 1e-14, f"Jacobian vs central differences {worst:.1e}"


CHECKS = {
    "theta-update vs golden-section search": check_theta_update,
    "J(u, theta*(u)) = Jp(u)": check_manifold_identity,
    "pseudoinverse Penrose identities": check_penrose,
    "elliptic discrete residual": check_elliptic_residual,
    "transport finite-difference consistency": check_transport_fd,
}


def run_checks():
    """Run every oracle; exceptions count as failures."""
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
