"""Ensemble containers, empirical statistics and shared linear algebra.

Ensembles are stored as ``(N, d)`` arrays with one member per row. All
empirical (cross-)covariances use the ``1/N`` normalisation.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg

DEFAULT_PINV_TOL = 1e-10
DEFAULT_THETA_FLOOR = 1e-8

# purpose tags for counter-based random streams
PURPOSES = {
    "initial": 1,
    "data": 2,
    "prior": 3,
    "problem": 4,
    "truth": 5,
}


def max_threads() -> int:
    """Parallelism cap from ``SPARSE_EKP_THREADS`` (default 1)."""
    raw = os.environ.get("SPARSE_EKP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Ensemble:
    """Collection of ``N`` particles in ``R^d`` stored row-wise."""

    members: np.ndarray

    def __post_init__(self):
        members = np.array(self.members, dtype=float, copy=True)
        if members.ndim != 2:
            raise ValueError("ensemble members must form an (N, d) array")
        if members.shape[0] < 2:
            raise ValueError("an ensemble needs at least two members")
        members.setflags(write=False)
        object.__setattr__(self, "members", members)

    @property
    def N(self) -> int:
        return self.members.shape[0]

    @property
    def d(self) -> int:
        return self.members.shape[1]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass(frozen=True)
class StreamKey:
    """Identifier of an independent random stream.

    Streams are derived from ``(seed, purpose, outer, inner, member)`` via
    :class:`numpy.random.SeedSequence`, so draws never depend on the order
    in which streams are requested.
    """

    seed: int
    purpose: str
    outer: int = 0
    inner: int = 0
    member: Optional[int] = None

    def generator(self) -> np.random.Generator:
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown stream purpose {self.purpose!r}")
        key = [PURPOSES[self.purpose], self.outer, self.inner]
        if self.member is not None:
            key.append(self.member)
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=tuple(key))
        return np.random.Generator(np.random.PCG64(ss))


class NoiseModel:
    """Observation noise ``N(0, gamma)`` with a cached Cholesky factor."""

    def __init__(self, gamma):
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
        if gamma.shape[0] != gamma.shape[1]:
            raise ValueError("noise covariance must be square")
        gamma = 0.5 * (gamma + gamma.T)
        try:
            self.chol_factor = scipy.linalg.cholesky(gamma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("noise covariance is not positive definite") from exc
        self.gamma = gamma
        self.gamma.setflags(write=False)

    @classmethod
    def isotropic(cls, k: int, variance: float) -> "NoiseModel":
        return cls(variance * np.eye(k))

    @property
    def k(self) -> int:
        return self.gamma.shape[0]

    def sample(self, rng: np.random.Generator, count: int, scale: float = 1.0) -> np.ndarray:
        """Draw ``count`` rows from ``N(0, scale * gamma)``."""
        z = rng.standard_normal((count, self.k))
        return np.sqrt(scale) * z @ self.chol_factor.T

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self.chol_factor, True), b)

    def mahalanobis_sq(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        z = scipy.linalg.solve_triangular(self.chol_factor, x, lower=True)
        return float(z @ z)


@dataclass(frozen=True)
class DiagCovariance:
    """Diagonal covariance ``D_theta``; ``floor`` guards inversion and sampling."""

    theta: np.ndarray
    floor: float = DEFAULT_THETA_FLOOR

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, copy=True).ravel()
        if np.any(theta < 0) or not np.all(np.isfinite(theta)):
            raise ValueError("variances must be finite and non-negative")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return self.theta.size

    def floored(self) -> np.ndarray:
        return np.maximum(self.theta, self.floor)

    def dense(self) -> np.ndarray:
        return np.diag(self.floored())

    def left_mul(self, x: np.ndarray) -> np.ndarray:
        """``P @ x`` without forming ``P``."""
        x = np.asarray(x, dtype=float)
        d = self.floored()
        return d[:, None] * x if x.ndim == 2 else d * x

    def sqrt_factor(self) -> np.ndarray:
        return np.diag(np.sqrt(self.floored()))

    def inverse_diag(self) -> np.ndarray:
        return 1.0 / self.floored()

    def sample(self, rng: np.random.Generator, count: int, scale: float = 1.0) -> np.ndarray:
        z = rng.standard_normal((count, self.dim))
        return z * np.sqrt(scale * self.floored())


class DenseCovariance:
    """Dense PSD covariance with a symmetric square root for sampling."""

    def __init__(self, matrix):
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.matrix = 0.5 * (m + m.T)
        self._sqrt = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix

    def left_mul(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def sqrt_factor(self) -> np.ndarray:
        if self._sqrt is None:
            self._sqrt = psd_sqrt(self.matrix)
        return self._sqrt

    def sample(self, rng: np.random.Generator, count: int, scale: float = 1.0) -> np.ndarray:
        z = rng.standard_normal((count, self.dim))
        return np.sqrt(scale) * z @ self.sqrt_factor().T


Covariance = Union[DiagCovariance, DenseCovariance]


def as_covariance(P) -> Covariance:
    if isinstance(P, (DiagCovariance, DenseCovariance)):
        return P
    return DenseCovariance(P)


class ForwardModel:
    """Deterministic map ``R^d -> R^k``.

    Subclasses implement :meth:`apply`; :meth:`apply_batch` evaluates the
    rows of an ensemble, concurrently when ``thread_safe`` is true and the
    thread cap allows it.
    """

    input_dim: int
    output_dim: int
    thread_safe: bool = True

    def apply(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 2:
            return self.apply_batch(u)
        return self.apply(u)

    def apply_batch(self, U: np.ndarray, threads: Optional[int] = None) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        threads = max_threads() if threads is None else threads
        if threads > 1 and self.thread_safe and U.shape[0] > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(self.apply, U))
        else:
            rows = [self.apply(u) for u in U]
        return np.vstack(rows)

    jacobian = None
    """Optional ``u -> (k, d)`` Jacobian, used by test oracles only."""


class LinearForward(ForwardModel):
    """``u -> G u`` for an explicit matrix ``G``."""

    def __init__(self, G):
        self.G = np.atleast_2d(np.asarray(G, dtype=float))
        self.output_dim, self.input_dim = self.G.shape

    def apply(self, u):
        return self.G @ u

    def apply_batch(self, U, threads=None):
        return np.asarray(U, dtype=float) @ self.G.T

    def jacobian(self, u):
        return self.G

    def hessian_vv(self, u, v):
        return np.zeros(self.output_dim)


@dataclass
class InverseProblem:
    """Forward map, data and noise, with optional ground truth for metrics."""

    forward: ForwardModel
    y: np.ndarray
    noise: NoiseModel
    truth: Optional[np.ndarray] = None
    support: Optional[np.ndarray] = None
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.y.size != self.forward.output_dim or self.noise.k != self.y.size:
            raise ValueError(
                f"data has {self.y.size} entries, forward map outputs "
                f"{self.forward.output_dim}, noise is {self.noise.k}-dimensional"
            )
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float).ravel()
            if self.support is None:
                self.support = np.flatnonzero(self.truth)
        if self.support is not None:
            self.support = np.asarray(self.support, dtype=int)

    @property
    def d(self) -> int:
        return self.forward.input_dim

    @property
    def k(self) -> int:
        return self.forward.output_dim


def ensemble_stats(E, gE):
    """Empirical means and ``1/N`` (cross-)covariances.

    Parameters
    ----------
    E : Ensemble or array of shape (N, d)
    gE : array of shape (N, k)
        Forward-map images of the members, in the same order.

    Returns
    -------
    m, g, Puu, Puy, Pyy
    """
    U = E.members if isinstance(E, Ensemble) else np.asarray(E, dtype=float)
    Y = np.asarray(gE, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if U.shape[0] != Y.shape[0]:
        raise ValueError(f"{U.shape[0]} members but {Y.shape[0]} forward evaluations")
    if U.shape[0] < 2:
        raise ValueError("ensemble statistics need N >= 2")
    N = U.shape[0]
    m = U.mean(axis=0)
    g = Y.mean(axis=0)
    Uc = U - m
    Yc = Y - g
    Puu = Uc.T @ Uc / N
    Puy = Uc.T @ Yc / N
    Pyy = Yc.T @ Yc / N
    return m, g, 0.5 * (Puu + Puu.T), Puy, 0.5 * (Pyy + Pyy.T)


def pseudoinverse(P, tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix.

    Eigenvalues at or below ``tol * lambda_max`` are treated as zero.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    lam_max = np.max(np.abs(w)) if w.size else 0.0
    if lam_max == 0.0:
        return np.zeros_like(P)
    keep = w > tol * lam_max
    Vk = V[:, keep]
    return (Vk / w[keep]) @ Vk.T


def statistical_linearization(Puy, Puu, tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Ensemble surrogate Jacobian ``Puy^T pinv(Puu)`` of shape (k, d)."""
    Puy = np.atleast_2d(np.asarray(Puy, dtype=float))
    Puu = np.atleast_2d(np.asarray(Puu, dtype=float))
    if Puu.shape[0] != Puy.shape[0]:
        raise ValueError("Puu and Puy disagree on the state dimension")
    return Puy.T @ pseudoinverse(Puu, tol)


def mahalanobis_sq(x, P) -> float:
    """``x^T P^{-1} x`` through a Cholesky solve; raises on non-SPD ``P``."""
    x = np.asarray(x, dtype=float).ravel()
    P = np.atleast_2d(np.asarray(P, dtype=float))
    try:
        c = scipy.linalg.cho_factor(P, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("matrix is not symmetric positive definite") from exc
    return float(x @ scipy.linalg.cho_solve(c, x))


def psd_sqrt(cov) -> np.ndarray:
    """Symmetric square root via eigendecomposition; rejects indefinite input."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    scale = max(np.max(np.abs(w)), 1.0) if w.size else 1.0
    if np.any(w < -1e-10 * scale):
        raise ValueError("covariance is not positive semidefinite")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def sample_gaussian(mean, cov, count: int, stream) -> np.ndarray:
    """Draw ``count`` i.i.d. rows from ``N(mean, cov)``.

    ``stream`` is a :class:`StreamKey` (or a ready ``Generator``); the same
    key always reproduces the same draws. ``cov`` may be a matrix or a
    covariance object from this module.
    """
    rng = stream.generator() if isinstance(stream, StreamKey) else stream
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if isinstance(cov, (DiagCovariance, DenseCovariance)):
        draws = cov.sample(rng, count)
    else:
        root = psd_sqrt(cov)
        draws = rng.standard_normal((count, mean.size)) @ root.T
    return mean + draws
