"""Outer alternating loop (l_p-IEKF / l_p-IEKF-SL), metrics and the exact linear oracle."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg

from . import hyperprior
from .core import DEFAULT_THETA_FLOOR, DiagCovariance, Ensemble, InverseProblem
from .hyperprior import HyperParams
from .kalman import INNER_SOLVERS, DivergenceError, KalmanConfig, SeedContext

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OuterConfig:
    """Settings for the alternating loop.

    ``max_outer`` counts inner solves, so ``max_outer=1`` is the vanilla
    method with prior ``D_theta0`` and ``max_outer=4`` reports outer
    iterations 0 through 3. ``theta0`` may be a scalar or a vector.
    """

    inner: KalmanConfig
    hp: HyperParams
    theta0: object = 0.1
    max_outer: int = 4
    rel_tol: Optional[float] = None
    variant: str = "iekf"
    record_ensembles: bool = False
    theta_floor: float = DEFAULT_THETA_FLOOR

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.rel_tol is not None and self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.variant not in INNER_SOLVERS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if np.any(np.asarray(self.theta0, dtype=float) <= 0):
            raise ValueError("theta0 must be positive")

    def theta0_vector(self, d):
        return np.broadcast_to(np.asarray(self.theta0, dtype=float), (d,)).copy()


@dataclass
class OuterStep:
    """One row of a run: the inner solve made with prior variances ``theta``."""

    index: int
    theta: np.ndarray
    estimate: np.ndarray
    theta_next: Optional[np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    misfit: float
    metrics: dict
    inner_iterations: int
    ensemble: Optional[np.ndarray] = None


@dataclass
class RunRecord:
    steps: List[OuterStep] = field(default_factory=list)
    seed: int = 0
    status: str = "ok"
    stop_reason: str = "max_outer"
    config_hash: str = ""

    @property
    def final(self) -> OuterStep:
        return self.steps[-1]

    def series(self, key):
        if key == "misfit":
            return np.array([s.misfit for s in self.steps])
        return np.array([s.metrics.get(key, np.nan) for s in self.steps])


class OuterDivergence(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


def relative_change_stop(u_new, u_old, tau) -> bool:
    """``|u_new - u_old|_inf / |u_old|_inf < tau``; never stops when ``u_old = 0``."""
    u_new = np.asarray(u_new, dtype=float)
    u_old = np.asarray(u_old, dtype=float)
    denom = np.max(np.abs(u_old))
    if denom == 0:
        return False
    return bool(np.max(np.abs(u_new - u_old)) / denom < tau)


def credible_intervals(ensemble, lo=2.5, hi=97.5):
    """Componentwise empirical percentiles (linear interpolation)."""
    U = ensemble.members if isinstance(ensemble, Ensemble) else np.asarray(ensemble, dtype=float)
    if U.shape[0] < 2:
        raise ValueError("credible intervals need N >= 2")
    lower, upper = np.percentile(U, [lo, hi], axis=0, method="linear")
    return lower, upper


def metrics(u_hat, truth=None, support=None, lower=None, upper=None) -> dict:
    """Error against the truth, mean interval width and off-support norm.

    Metrics that need unavailable inputs are omitted.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    out = {}
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        if truth.shape != u_hat.shape:
            raise ValueError("estimate and truth differ in shape")
        out["l2_error"] = float(np.linalg.norm(u_hat - truth))
    if lower is not None and upper is not None:
        out["avg_width"] = float(np.mean(np.asarray(upper) - np.asarray(lower)))
    if support is not None:
        off = np.ones(u_hat.size, dtype=bool)
        off[np.asarray(support, dtype=int)] = False
        out["off_support_norm"] = float(np.linalg.norm(u_hat[off]))
    return out


def run_outer(problem: InverseProblem, cfg: OuterConfig, seed: int = 0) -> RunRecord:
    """Alternate inner ensemble solves for ``u`` with closed-form theta updates.

    Raises :class:`OuterDivergence` (carrying the partial record) if an inner
    solve diverges.
    """
    solver = INNER_SOLVERS[cfg.variant]
    if cfg.max_outer > 1 and cfg.hp.r != -1 and not cfg.hp.is_gengamma_closed_form():
        raise ValueError("outer updates need r*beta = 3/2 with r > 0, or r = -1")
    record = RunRecord(seed=seed)
    theta = cfg.theta0_vector(problem.d)
    prev = None
    for ell in range(cfg.max_outer):
        P = DiagCovariance(theta, floor=cfg.theta_floor)
        try:
            res = solver(problem, P, cfg.inner, SeedContext(seed, ell))
        except DivergenceError as exc:
            record.status = "diverged"
            record.stop_reason = f"outer {ell}: {exc}"
            raise OuterDivergence(str(exc), record) from exc
        u = res.final_mean
        lower, upper = credible_intervals(res.final_ensemble)
        theta_next = hyperprior.theta_update(u, cfg.hp) if ell + 1 < cfg.max_outer else None
        step = OuterStep(
            index=ell,
            theta=theta,
            estimate=u,
            theta_next=theta_next,
            lower=lower,
            upper=upper,
            misfit=res.misfit_trace[-1],
            metrics=metrics(u, problem.truth, problem.support, lower, upper),
            inner_iterations=res.iterations_used,
            ensemble=res.final_ensemble.members.copy() if cfg.record_ensembles else None,
        )
        record.steps.append(step)
        logger.debug("outer %d: %s", ell, step.metrics)
        if cfg.rel_tol is not None and prev is not None and relative_change_stop(u, prev, cfg.rel_tol):
            record.stop_reason = "relative_change"
            break
        if theta_next is None:
            break
        prev = u
        theta = theta_next
    return record


def _map_u_update(G, gamma, theta):
    """``argmin_u 0.5|y - G u|^2_Gamma + 0.5 u^T D^{-1} u`` as ``D G^T (G D G^T + Gamma)^{-1}``."""
    DGt = theta[:, None] * G.T
    S = G @ DGt + gamma
    c = scipy.linalg.cho_factor(0.5 * (S + S.T), lower=True)
    return DGt, c


def linear_exact_alternation(problem: InverseProblem, hp: HyperParams, theta0, iters: int,
                             u0=None, floor: float = DEFAULT_THETA_FLOOR):
    """Exact coordinate descent on ``J`` for a linear forward map.

    Returns the lists ``us`` and ``thetas`` with ``us[0] = u0`` (zeros by
    default), ``thetas[0] = theta0`` and ``us[l + 1]`` the exact minimiser of
    ``J(., thetas[l])``.
    """
    G = getattr(problem.forward, "G", None)
    if G is None:
        raise ValueError("linear_exact_alternation needs a forward map with an explicit matrix G")
    gamma = problem.noise.gamma
    theta = np.broadcast_to(np.asarray(theta0, dtype=float), (problem.d,)).copy()
    u = np.zeros(problem.d) if u0 is None else np.asarray(u0, dtype=float).copy()
    us, thetas = [u], [theta]
    for _ in range(iters):
        th = np.maximum(theta, floor)
        DGt, c = _map_u_update(G, gamma, th)
        u = DGt @ scipy.linalg.cho_solve(c, problem.y)
        if not np.all(np.isfinite(u)):
            raise np.linalg.LinAlgError("singular normal equations in exact alternation")
        theta = hyperprior.theta_update(u, hp)
        us.append(u)
        thetas.append(theta)
    return us, thetas


def method_label(variant: str, r: float, vanilla: bool = False) -> str:
    name = {"iekf": "IEKF", "iekf-sl": "IEKF-SL"}[variant]
    if vanilla:
        return name
    if r == -1:
        return f"invgamma-{name}"
    p = hyperprior.penalty_exponent(r)
    return f"l{p:.3g}-{name}"
