"""Iterative ensemble Kalman inner solvers: IEKF and IEKF-SL.

Both minimise the Tikhonov-Phillips objective
``0.5 |y - G(u)|^2_Gamma + 0.5 |u|^2_P`` with a zero prior mean.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg

from .core import (
    DEFAULT_PINV_TOL,
    Ensemble,
    InverseProblem,
    StreamKey,
    as_covariance,
    ensemble_stats,
    statistical_linearization,
)

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when an inner solve produces non-finite values."""

    def __init__(self, message, iteration=None, member=None):
        super().__init__(message)
        self.iteration = iteration
        self.member = member


@dataclass(frozen=True)
class KalmanConfig:
    alpha: float = 0.5
    T: int = 20
    N: int = 100
    stopping: str = "fixed"
    pinv_tol: float = DEFAULT_PINV_TOL

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("step size must be positive")
        if self.alpha > 1:
            warnings.warn(f"step size {self.alpha} exceeds 1", stacklevel=3)
        if self.T < 1:
            raise ValueError("need at least one inner iteration")
        if self.N < 2:
            raise ValueError("need at least two ensemble members")
        if self.stopping not in ("fixed", "morozov"):
            raise ValueError(f"unknown stopping rule {self.stopping!r}")


@dataclass(frozen=True)
class SeedContext:
    """Where an inner run sits inside an experiment, for stream derivation."""

    seed: int = 0
    outer: int = 0

    def stream(self, purpose, inner=0):
        return StreamKey(self.seed, purpose, self.outer, inner)


@dataclass
class InnerRunResult:
    final_mean: np.ndarray
    final_ensemble: Ensemble
    iterations_used: int
    misfit_trace: List[float]
    history: Optional[List[np.ndarray]] = None
    gains: Optional[List[np.ndarray]] = None
    initial_cov: Optional[np.ndarray] = None
    linearizations: Optional[List[np.ndarray]] = field(default=None, repr=False)


def morozov_check(y, g_of_mean, gamma) -> bool:
    """Discrepancy principle: ``|y - G(m)| <= sqrt(tr(Gamma))``."""
    resid = np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(g_of_mean, dtype=float))
    return bool(resid <= np.sqrt(np.trace(np.atleast_2d(gamma))))


def _gain(A, GN, noise):
    """Kalman gain ``P GN^T (GN P GN^T + Gamma)^{-1}`` for ``P = A A^T``.

    With ``Gamma = L L^T`` and ``W = L^{-1} GN A = U s V^T`` the gain is
    ``A V diag(s / (1 + s^2)) U^T L^{-1}``. The identity shift stays exact,
    so the solve cannot lose definiteness when ``GN P GN^T`` is huge or
    rank deficient.
    """
    L = noise.chol_factor
    W = scipy.linalg.solve_triangular(L, GN @ A, lower=True)
    if not np.all(np.isfinite(W)):
        raise DivergenceError("innovation covariance is non-finite")
    try:
        Uw, sv, Vwt = np.linalg.svd(W, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DivergenceError("SVD of the whitened innovation failed") from exc
    core = (A @ Vwt.T) * (sv / (1.0 + sv**2))
    return scipy.linalg.solve_triangular(L, Uw @ core.T, lower=True, trans="T").T


def _evaluate(problem, U, t):
    GU = problem.forward.apply_batch(U)
    bad = ~np.all(np.isfinite(GU), axis=1)
    if np.any(bad):
        n = int(np.flatnonzero(bad)[0])
        raise DivergenceError(
            f"forward map returned non-finite output for member {n} at inner step {t}",
            iteration=t,
            member=n,
        )
    return GU


def _misfit(problem, m):
    return float(np.linalg.norm(problem.y - problem.forward.apply(m)))


def _run(problem: InverseProblem, P, cfg: KalmanConfig, ctx: SeedContext, variant: str,
         perturbations: bool, keep_history: bool) -> InnerRunResult:
    P = as_covariance(P)
    if P.dim != problem.d:
        raise ValueError(f"prior covariance has dim {P.dim}, problem has d={problem.d}")
    gamma = problem.noise.gamma
    N, alpha = cfg.N, cfg.alpha

    U0 = P.sample(ctx.stream("initial").generator(), N)
    U = U0.copy()
    if variant == "iekf":
        _, _, P0uu, _, _ = ensemble_stats(U0, np.zeros((N, 1)))
        # P0uu = A0 A0^T with centred members as columns
        A = (U0 - U0.mean(axis=0)).T / np.sqrt(N)
    else:
        A = P.sqrt_factor()

    history = [U0.copy()] if keep_history else None
    gains = [] if keep_history else None
    lins = [] if keep_history else None
    misfits = []
    used = 0
    for t in range(cfg.T):
        m = U.mean(axis=0)
        misfits.append(_misfit(problem, m))
        if not np.isfinite(misfits[-1]):
            raise DivergenceError(f"non-finite misfit at inner step {t}", iteration=t)
        if cfg.stopping == "morozov" and morozov_check(problem.y, problem.forward.apply(m), gamma):
            break

        GU = _evaluate(problem, U, t)
        _, _, Puu, Puy, _ = ensemble_stats(U, GU)
        GN = statistical_linearization(Puy, Puu, cfg.pinv_tol)
        if not np.all(np.isfinite(GN)):
            raise DivergenceError(f"surrogate Jacobian is non-finite at inner step {t}", iteration=t)

        if variant == "iekf":
            K = _gain(A, GN, problem.noise)
            if perturbations:
                Yt = problem.y + problem.noise.sample(ctx.stream("data", t).generator(), N, 1.0 / alpha)
            else:
                Yt = np.broadcast_to(problem.y, (N, problem.k))
            anchor = U0
        else:
            K = _gain(A, GN, problem.noise)
            if perturbations:
                Yt = problem.y + problem.noise.sample(ctx.stream("data", t).generator(), N, 2.0 / alpha)
                anchor = P.sample(ctx.stream("prior", t).generator(), N, 2.0 / alpha)
            else:
                Yt = np.broadcast_to(problem.y, (N, problem.k))
                anchor = np.zeros_like(U)

        # row-wise form of u + alpha * (K (y_n - G(u_n)) + (I - K GN)(a_n - u_n))
        D = anchor - U
        step = (Yt - GU) @ K.T + D - (D @ GN.T) @ K.T
        U = U + alpha * step
        used = t + 1
        if not np.all(np.isfinite(U)):
            raise DivergenceError(f"ensemble became non-finite at inner step {t}", iteration=t)
        if keep_history:
            history.append(U.copy())
            gains.append(K)
            lins.append(GN)

    final = Ensemble(U)
    mean = final.mean()
    misfits.append(_misfit(problem, mean))
    if not np.isfinite(misfits[-1]):
        raise DivergenceError("non-finite misfit at the final mean", iteration=used)
    return InnerRunResult(
        final_mean=mean,
        final_ensemble=final,
        iterations_used=used,
        misfit_trace=misfits,
        history=history,
        gains=gains,
        initial_cov=P0uu if (keep_history and variant == "iekf") else None,
        linearizations=lins,
    )


def iekf_run(problem, P, cfg: KalmanConfig, ctx: SeedContext = SeedContext(), *,
             perturbations: bool = True, keep_history: bool = False) -> InnerRunResult:
    """Iterative ensemble Kalman filter.

    The gain is built from the empirical covariance of the initial ensemble,
    which stays frozen for the whole run, and each member is pulled back
    toward its own initial draw. Data perturbations have covariance
    ``Gamma / alpha``.

    ``perturbations=False`` is a test hook that replaces every perturbed
    datum by ``y``; ``keep_history`` stores ensembles, gains and surrogate
    Jacobians per step.
    """
    return _run(problem, P, cfg, ctx, "iekf", perturbations, keep_history)


def iekfsl_run(problem, P, cfg: KalmanConfig, ctx: SeedContext = SeedContext(), *,
               perturbations: bool = True, keep_history: bool = False) -> InnerRunResult:
    """IEKF with statistical linearization.

    The gain uses the prior covariance ``P`` (floored if diagonal). Both the
    data and the zero prior mean are perturbed each step, with covariances
    ``2 Gamma / alpha`` and ``2 P / alpha``.
    """
    return _run(problem, P, cfg, ctx, "iekf-sl", perturbations, keep_history)


INNER_SOLVERS = {"iekf": iekf_run, "iekf-sl": iekfsl_run}
