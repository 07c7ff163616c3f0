"""Generalized-gamma hyperprior: variance updates, objectives, convexity.

The joint objective over the unknown ``u`` and prior variances ``theta`` is

    J(u, theta) = 0.5 |y - G(u)|^2_Gamma + 0.5 sum u_i^2 / theta_i
                  - eta sum log(theta_i / vartheta_i) + sum theta_i^r / vartheta_i

with ``eta = r * beta - 3/2``. When ``eta = 0`` and ``r > 0`` minimising over
``theta`` is closed form, and along that minimiser ``J`` reduces to an
``l_p`` penalised misfit with ``p = 2r / (r + 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .core import InverseProblem

_ETA_ATOL = 1e-12


@dataclass(frozen=True)
class HyperParams:
    """Hyperprior parameters.

    ``beta`` defaults to ``3 / (2 r)`` so that ``r * beta = 3/2``.
    ``vartheta`` may be a scalar or a per-component vector.
    """

    r: float
    beta: Optional[float] = None
    vartheta: object = 1.0

    def __post_init__(self):
        r = float(Fraction(self.r)) if isinstance(self.r, str) else float(self.r)
        if r == 0:
            raise ValueError("r must be non-zero")
        object.__setattr__(self, "r", r)
        beta = 1.5 / r if self.beta is None else float(self.beta)
        if beta < 0:
            raise ValueError("beta must be non-negative")
        object.__setattr__(self, "beta", beta)
        vt = np.asarray(self.vartheta, dtype=float)
        if np.any(vt <= 0):
            raise ValueError("vartheta must be positive")
        object.__setattr__(self, "vartheta", vt)

    @property
    def eta(self) -> float:
        return self.r * self.beta - 1.5

    def is_gengamma_closed_form(self) -> bool:
        return self.r > 0 and abs(self.eta) <= _ETA_ATOL

    def vartheta_for(self, d: int) -> np.ndarray:
        return np.broadcast_to(self.vartheta, (d,)).astype(float)


@dataclass(frozen=True)
class PenaltySpec:
    """Effective ``l_p`` penalty induced by ``r`` and ``vartheta``."""

    r: float
    p: float
    C_r: float
    theta_exponent: float
    weights: np.ndarray

    @classmethod
    def from_hyperparams(cls, hp: HyperParams, d: int) -> "PenaltySpec":
        r = hp.r
        if r <= 0:
            raise ValueError("the l_p penalty is defined for r > 0")
        return cls(
            r=r,
            p=penalty_exponent(r),
            C_r=(r + 1) / (2 * r) ** (r / (r + 1)),
            theta_exponent=2 / (r + 1),
            weights=hp.vartheta_for(d) ** (-1 / (r + 1)),
        )


def penalty_exponent(r: float) -> float:
    """``p = 2r / (r + 1)``."""
    return 2 * r / (r + 1)


def theta_update_gengamma(u, hp: HyperParams) -> np.ndarray:
    """Closed-form argmin over theta for ``r * beta = 3/2``.

    Components with ``u_i = 0`` get exactly zero; flooring happens where
    the variances are used.
    """
    if not hp.is_gengamma_closed_form():
        raise ValueError(
            f"closed-form update needs r > 0 and r*beta = 3/2 (got r={hp.r}, beta={hp.beta})"
        )
    u = np.asarray(u, dtype=float)
    r = hp.r
    vt = hp.vartheta_for(u.size)
    return (vt / (2 * r)) ** (1 / (r + 1)) * np.abs(u) ** (2 / (r + 1))


def theta_update_invgamma(u, hp: HyperParams) -> np.ndarray:
    """Variance update for the inverse-gamma case ``r = -1``."""
    if hp.r != -1:
        raise ValueError(f"inverse-gamma update needs r = -1, got r={hp.r}")
    u = np.asarray(u, dtype=float)
    vt = hp.vartheta_for(u.size)
    return (0.5 * u**2 + 1 / vt) / (hp.beta + 1.5)


def theta_update(u, hp: HyperParams) -> np.ndarray:
    if hp.r == -1:
        return theta_update_invgamma(u, hp)
    return theta_update_gengamma(u, hp)


def theta_scalar_objective(theta, u_i, r, vartheta_i=1.0, eta=0.0):
    """Per-component theta objective ``u^2/(2 theta) - eta log(theta/vt) + theta^r/vt``."""
    theta = np.asarray(theta, dtype=float)
    val = u_i**2 / (2 * theta) + theta**r / vartheta_i
    if eta != 0.0:
        val = val - eta * np.log(theta / vartheta_i)
    return val


def data_misfit(u, problem: InverseProblem) -> float:
    """``0.5 |y - G(u)|^2_Gamma``."""
    resid = problem.y - problem.forward.apply(np.asarray(u, dtype=float))
    return 0.5 * problem.noise.mahalanobis_sq(resid)


def objective_J(u, theta, problem: InverseProblem, hp: HyperParams) -> float:
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("objective_J needs strictly positive theta")
    vt = hp.vartheta_for(u.size)
    val = data_misfit(u, problem) + 0.5 * np.sum(u**2 / theta)
    if hp.eta != 0.0:
        val -= hp.eta * np.sum(np.log(theta / vt))
    return float(val + np.sum(theta**hp.r / vt))


def objective_Jp(u, problem: InverseProblem, hp: HyperParams) -> float:
    u = np.asarray(u, dtype=float)
    spec = PenaltySpec.from_hyperparams(hp, u.size)
    penalty = spec.C_r * np.sum(spec.weights * np.abs(u) ** spec.p)
    return float(data_misfit(u, problem) + penalty)


def convexity_bound(hp: HyperParams, d: int = 1) -> np.ndarray:
    """Per-component upper bound on ``theta_i / vartheta_i`` for joint convexity.

    Returns ``+inf`` where convexity holds everywhere (``r >= 1`` or
    ``r < 0``), ``nan`` ("no guarantee") when ``eta < 0``. For ``0 < r < 1``
    the bound is ``(eta / (r (1 - r)))^(1/r) * vartheta_i^(1/r - 1)``; the
    last factor is 1 for unit scale parameters.
    """
    vt = hp.vartheta_for(d)
    r, eta = hp.r, hp.eta
    if eta < 0:
        return np.full(d, np.nan)
    if r >= 1 or r < 0:
        return np.full(d, np.inf)
    return (eta / (r * (1 - r))) ** (1 / r) * vt ** (1 / r - 1)


def certifies_convexity(theta, hp: HyperParams) -> bool:
    theta = np.asarray(theta, dtype=float)
    bound = convexity_bound(hp, theta.size)
    if np.any(np.isnan(bound)):
        return False
    return bool(np.all(theta / hp.vartheta_for(theta.size) <= bound))


def _jacobian(forward, u, h=1e-6):
    if getattr(forward, "jacobian", None) is not None:
        return np.atleast_2d(forward.jacobian(u))
    cols = []
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        cols.append((forward.apply(u + e) - forward.apply(u - e)) / (2 * h))
    return np.column_stack(cols)


def _hessian_vv(forward, u, v, h=1e-4):
    """Componentwise ``v^T hess(G_i) v``; second differences if not provided."""
    if hasattr(forward, "hessian_vv"):
        return np.asarray(forward.hessian_vv(u, v), dtype=float)
    return (forward.apply(u + h * v) - 2 * forward.apply(u) + forward.apply(u - h * v)) / h**2


def hessian_quadform(u, theta, v, w, problem: InverseProblem, hp: HyperParams) -> float:
    """``q^T H q`` for ``q = (v, w)``, ``H`` the Hessian of ``J`` in ``(u, theta)``.

    Uses the completed-square form, which makes every term except the
    forward-map curvature and the last diagonal one manifestly non-negative.
    The misfit terms carry the ``Gamma`` weighting.
    """
    u, theta, v, w = (np.asarray(a, dtype=float) for a in (u, theta, v, w))
    if np.any(theta <= 0):
        raise ValueError("hessian_quadform needs strictly positive theta")
    r, eta = hp.r, hp.eta
    vt = hp.vartheta_for(u.size)
    fwd = problem.forward

    Jv = _jacobian(fwd, u) @ v
    gn = problem.noise.mahalanobis_sq(Jv)
    weighted_resid = problem.noise.solve(fwd.apply(u) - problem.y)
    curvature = float(weighted_resid @ _hessian_vv(fwd, u, v))
    coupled = np.sum((v - u * w / theta) ** 2 / theta)
    diag = np.sum((r * (r - 1) * theta ** (r - 2) / vt + eta / theta**2) * w**2)
    return float(gn + curvature + coupled + diag)

