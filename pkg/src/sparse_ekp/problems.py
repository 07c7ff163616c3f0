"""Benchmark inverse problems: compressed sensing, transport PDE, elliptic PDE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .core import ForwardModel, InverseProblem, LinearForward, NoiseModel, StreamKey

# ---------------------------------------------------------------------------
# linear compressed sensing


def make_linear_problem(d=300, k=30, sparsity=4, seed=0, noise_var=0.01,
                        magnitude=(1.0, 2.0)) -> InverseProblem:
    """Gaussian sensing matrix, sparse truth, ``y = G u + eps``.

    Nonzero magnitudes are uniform on ``[magnitude[0], magnitude[1]]`` with
    random signs.
    """
    if sparsity > d:
        raise ValueError("sparsity cannot exceed d")
    rng = StreamKey(seed, "truth").generator()
    G = rng.standard_normal((k, d))
    truth = np.zeros(d)
    support = np.sort(rng.choice(d, size=sparsity, replace=False))
    signs = rng.choice([-1.0, 1.0], size=sparsity)
    truth[support] = signs * rng.uniform(magnitude[0], magnitude[1], size=sparsity)
    forward = LinearForward(G)
    noise = NoiseModel.isotropic(k, noise_var)
    y = generate_data(forward, truth, np.sqrt(noise_var), seed)
    return InverseProblem(forward, y, noise, truth=truth, support=support, name="linear",
                          meta={"d": d, "k": k, "sparsity": sparsity, "seed": seed})


def generate_data(forward: ForwardModel, truth, sigma: float, seed) -> np.ndarray:
    """``forward(truth)`` plus i.i.d. ``N(0, sigma^2)`` noise."""
    clean = forward.apply(np.asarray(truth, dtype=float))
    if sigma == 0:
        return clean.copy()
    rng = StreamKey(seed, "problem").generator()
    return clean + sigma * rng.standard_normal(clean.shape)


# ---------------------------------------------------------------------------
# first-order transport PDE with closed-form solution


class TransportForward(ForwardModel):
    """Solution of ``d_x1 v - d_x2 v - u(x1) v = 0``, ``v(x1, 0) = phi(x1)``.

    ``v(x1, x2) = phi(x1 + x2) exp(U(x1) - U(x1 + x2))`` where ``U`` is the
    exact antiderivative of the trigonometric expansion
    ``u(z) = sum_j a_j sin(j pi z) + b_j cos(j pi z)``. Coefficients are
    ordered ``(a_1..a_J, b_1..b_J)``; outputs are grid values in C order of
    ``v[i1, i2]``.
    """

    def __init__(self, n_modes=30, n_grid=21, phi=np.cos):
        self.n_modes = n_modes
        self.n_grid = n_grid
        self.input_dim = 2 * n_modes
        self.output_dim = n_grid * n_grid
        x = np.linspace(0.0, 1.0, n_grid)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        x1 = X1.ravel()
        s = (X1 + X2).ravel()
        self.phi_s = phi(s)
        # rows: grid nodes; columns: contribution of each coefficient to U(x1) - U(s)
        self.A = antiderivative_basis(x1, n_modes) - antiderivative_basis(s, n_modes)

    def apply(self, u):
        return self.phi_s * np.exp(self.A @ u)

    def apply_batch(self, U, threads=None):
        return self.phi_s * np.exp(np.asarray(U, dtype=float) @ self.A.T)

    def jacobian(self, u):
        return self.apply(u)[:, None] * self.A

    def hessian_vv(self, u, v):
        return self.apply(u) * (self.A @ v) ** 2


def antiderivative_basis(z, n_modes):
    """Antiderivatives of ``sin(j pi z)`` and ``cos(j pi z)``, j = 1..n_modes."""
    z = np.asarray(z, dtype=float)
    jp = np.pi * np.arange(1, n_modes + 1)
    arg = np.outer(z, jp)
    return np.hstack([-np.cos(arg) / jp, np.sin(arg) / jp])


def trig_basis(z, n_modes):
    z = np.asarray(z, dtype=float)
    arg = np.outer(z, np.pi * np.arange(1, n_modes + 1))
    return np.hstack([np.sin(arg), np.cos(arg)])


def transport_log_rate(coeffs, z):
    """Evaluate ``u(z)`` from its sine/cosine coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    return trig_basis(z, coeffs.size // 2) @ coeffs


def transport_forward(coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    return TransportForward(n_modes=coeffs.size // 2).apply(coeffs)


def make_transport_truth(n_modes=30) -> np.ndarray:
    """``1.2(sin pi x + sin 3pi x - sin 6pi x - cos 3pi x) - 0.6(cos pi x - cos 6pi x)``."""
    c = np.zeros(2 * n_modes)
    c[[0, 2, 5]] = [1.2, 1.2, -1.2]
    c[n_modes + np.array([0, 2, 5])] = [-0.6, -1.2, 0.6]
    return c


def make_transport_problem(seed=0, sigma=0.1, n_modes=30, n_grid=21) -> InverseProblem:
    forward = TransportForward(n_modes, n_grid)
    truth = make_transport_truth(n_modes)
    y = generate_data(forward, truth, sigma, seed)
    noise = NoiseModel.isotropic(forward.output_dim, sigma**2)
    return InverseProblem(forward, y, noise, truth=truth, name="transport",
                          meta={"seed": seed, "sigma": sigma})


# ---------------------------------------------------------------------------
# 2D elliptic PDE, five-point stencil


@dataclass(frozen=True)
class EllipticSetup:
    """Discretisation constants for the elliptic benchmark."""

    n_grid: int = 15
    n_modes: int = 20
    dirichlet_value: float = 100.0
    left_flux: float = 500.0
    source_levels: tuple = (0.0, 137.0, 274.0)
    source_breaks: tuple = (4 / 6, 5 / 6)
    face_average: str = "harmonic"
    observe: str = "all_but_dirichlet_row"


class EllipticForward(ForwardModel):
    """``-div(exp(u) grad v) = f`` on the unit square.

    Boundary conditions: ``v = 100`` on ``x2 = 0``; ``-exp(u) dv/dx1 = 500``
    on ``x1 = 0``; zero normal derivative on ``x1 = 1`` and ``x2 = 1``.
    Neumann rows use first-order ghost-node elimination, face conductivities
    are harmonic means of nodal values, and the output is ``v`` on the
    ``(n_grid - 1) x n_grid`` non-Dirichlet nodes (rows ``x2 > 0``).
    """

    def __init__(self, setup: EllipticSetup = EllipticSetup()):
        self.setup = setup
        n = setup.n_grid
        self.n = n
        self.h = 1.0 / (n - 1)
        self.input_dim = setup.n_modes**2
        self.output_dim = (n - 1) * n
        x = np.linspace(0.0, 1.0, n)
        self.x = x
        self.C = np.cos(np.pi * np.outer(x, np.arange(setup.n_modes)))
        lo, hi = setup.source_breaks
        f_row = np.where(x <= lo, setup.source_levels[0],
                         np.where(x <= hi, setup.source_levels[1], setup.source_levels[2]))
        # f depends on x2 only; grid arrays are indexed [j (x2), i (x1)]
        self.f = np.repeat(f_row[:, None], n, axis=1)
        self._build_pattern()

    def _build_pattern(self):
        n = self.n
        # unknowns: rows j = 1..n-1, all i; index = (j - 1) * n + i
        self.idx = np.arange((n - 1) * n).reshape(n - 1, n)
        jj, ii = np.meshgrid(np.arange(1, n), np.arange(n), indexing="ij")
        self._jj, self._ii = jj, ii

    def log_conductivity(self, coeffs) -> np.ndarray:
        """Nodal ``u(x1, x2)`` as an ``[x2, x1]`` array."""
        U = np.asarray(coeffs, dtype=float).reshape(self.setup.n_modes, self.setup.n_modes)
        # u(x1, x2) = sum_ij U[i, j] cos(i pi x1) cos(j pi x2)
        return (self.C @ U @ self.C.T).T

    def _face(self, a, b):
        if self.setup.face_average == "harmonic":
            return 2 * a * b / (a + b)
        return 0.5 * (a + b)

    def assemble(self, coeffs):
        """Stiffness matrix ``A`` (CSR) and load ``b`` for the unknown nodes."""
        s = self.setup
        n, h = self.n, self.h
        kap = np.exp(self.log_conductivity(coeffs))
        kx = self._face(kap[:, :-1], kap[:, 1:]) / h**2  # between (j, i) and (j, i+1)
        ky = self._face(kap[:-1, :], kap[1:, :]) / h**2  # between (j, i) and (j+1, i)

        rows, cols, vals = [], [], []
        diag = np.zeros((n - 1, n))
        b = self.f[1:, :].copy()

        # horizontal couplings within each unknown row
        kxu = kx[1:, :]
        left = self.idx[:, :-1].ravel()
        right = self.idx[:, 1:].ravel()
        rows += [left, right]
        cols += [right, left]
        vals += [-kxu.ravel(), -kxu.ravel()]
        diag[:, :-1] += kxu
        diag[:, 1:] += kxu

        # vertical couplings between unknown rows
        kyu = ky[1:, :]
        lower = self.idx[:-1, :].ravel()
        upper = self.idx[1:, :].ravel()
        rows += [lower, upper]
        cols += [upper, lower]
        vals += [-kyu.ravel(), -kyu.ravel()]
        diag[:-1, :] += kyu
        diag[1:, :] += kyu

        # coupling to the Dirichlet row j = 0 moves to the load
        ky0 = ky[0, :]
        diag[0, :] += ky0
        b[0, :] += ky0 * s.dirichlet_value

        # inflow flux on x1 = 0 via ghost elimination; x1 = 1 and x2 = 1 are no-flux
        b[:, 0] += s.left_flux / h

        rows.append(self.idx.ravel())
        cols.append(self.idx.ravel())
        vals.append(diag.ravel())
        A = scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.output_dim, self.output_dim),
        )
        return A, b.ravel()

    def apply(self, u):
        A, b = self.assemble(u)
        v = scipy.sparse.linalg.spsolve(A.tocsc(), b)
        return v


def make_elliptic_truth(seed=0, n_nonzero=6, d=400, magnitude=(0.5, 1.5)) -> np.ndarray:
    """Sparse coefficients: random positions, random signs, uniform magnitudes."""
    rng = StreamKey(seed, "truth").generator()
    truth = np.zeros(d)
    support = np.sort(rng.choice(d, size=n_nonzero, replace=False))
    truth[support] = rng.choice([-1.0, 1.0], size=n_nonzero) * rng.uniform(*magnitude, size=n_nonzero)
    return truth


def make_elliptic_problem(seed=0, sigma=0.1, truth_seed=None, setup=EllipticSetup(),
                          magnitude=(0.5, 1.5), n_nonzero=6) -> InverseProblem:
    forward = EllipticForward(setup)
    truth = make_elliptic_truth(seed if truth_seed is None else truth_seed, n_nonzero,
                                forward.input_dim, magnitude)
    y = generate_data(forward, truth, sigma, seed)
    noise = NoiseModel.isotropic(forward.output_dim, sigma**2)
    return InverseProblem(forward, y, noise, truth=truth, name="elliptic",
                          meta={"seed": seed, "sigma": sigma})


def elliptic_forward(coeffs) -> np.ndarray:
    return EllipticForward().apply(coeffs)
