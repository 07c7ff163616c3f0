import numpy as np
import pytest

from sparse_ekp.core import LinearForward
from sparse_ekp.problems import (
    EllipticForward,
    EllipticSetup,
    TransportForward,
    elliptic_forward,
    generate_data,
    make_elliptic_problem,
    make_elliptic_truth,
    make_linear_problem,
    make_transport_problem,
    make_transport_truth,
    transport_forward,
    transport_log_rate,
)

# -- linear ----------------------------------------------------------------------


def test_linear_defaults():
    prob = make_linear_problem(seed=0)
    assert prob.forward.G.shape == (30, 300) and prob.y.shape == (30,)
    assert prob.support.size == 4
    assert np.count_nonzero(prob.truth) == 4
    mags = np.abs(prob.truth[prob.support])
    assert np.all((mags >= 1) & (mags <= 2))
    np.testing.assert_allclose(prob.noise.gamma, 0.01 * np.eye(30))


def test_linear_k100_variant_and_zero_sparsity():
    assert make_linear_problem(k=100).forward.G.shape == (100, 300)
    prob = make_linear_problem(d=20, k=10, sparsity=0, seed=3)
    assert not prob.truth.any()
    eps = prob.y - prob.forward.G @ prob.truth
    np.testing.assert_array_equal(prob.y, eps)
    with pytest.raises(ValueError):
        make_linear_problem(d=3, sparsity=4)


def test_linear_seeded():
    a, b = make_linear_problem(seed=5), make_linear_problem(seed=5)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, make_linear_problem(seed=6).y)


def test_generate_data_noise():
    fwd = LinearForward(np.eye(4))
    truth = np.arange(4.0)
    np.testing.assert_array_equal(generate_data(fwd, truth, 0.0, 1), truth)
    y1, y2 = generate_data(fwd, truth, 0.1, 1), generate_data(fwd, truth, 0.1, 2)
    assert not np.array_equal(y1, y2)
    reps = np.array([generate_data(fwd, truth, 0.1, s) - truth for s in range(10_000)])
    assert reps.var() == pytest.approx(0.01, rel=0.05)


# -- transport ----------------------------------------------------------------------


def test_transport_zero_coefficients_give_boundary_profile():
    fwd = TransportForward()
    x = np.linspace(0, 1, 21)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    np.testing.assert_allclose(fwd.apply(np.zeros(60)), np.cos(X1 + X2).ravel(), atol=1e-15)
    assert fwd.output_dim == 441 and fwd.input_dim == 60


def test_transport_single_mode_value():
    c = np.zeros(60)
    c[0] = 1.0
    v = transport_forward(c).reshape(21, 21)
    assert v[10, 10] == pytest.approx(np.cos(1.0) * np.exp(-1 / np.pi), rel=1e-12)


def test_transport_truth():
    c = make_transport_truth()
    assert np.count_nonzero(c) == 6
    assert transport_log_rate(c, [0.0])[0] == pytest.approx(-1.2)
    x = np.linspace(0, 1, 101)
    s, co = np.sin, np.cos
    pi = np.pi
    display = 1.2 * (s(pi * x) + s(3 * pi * x) - s(6 * pi * x) - co(3 * pi * x)) \
        - 0.6 * (co(pi * x) - co(6 * pi * x))
    np.testing.assert_allclose(transport_log_rate(c, x), display, atol=1e-12)


def test_transport_pde_residual_is_first_order():
    rng = np.random.default_rng(0)
    c = 0.3 * rng.normal(size=60) / np.arange(1, 61) ** 0.5
    res = []
    for n in (81, 161, 321):  # resolve the highest mode before measuring the rate
        fwd = TransportForward(n_grid=n)
        v = fwd.apply(c).reshape(n, n)
        h = 1.0 / (n - 1)
        x = np.linspace(0, 1, n)
        d1 = (v[1:, :-1] - v[:-1, :-1]) / h
        d2 = (v[:-1, 1:] - v[:-1, :-1]) / h
        u = transport_log_rate(c, x[:-1])[:, None]
        res.append(np.max(np.abs(d1 - d2 - u * v[:-1, :-1])))
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(rates > 0.8), rates


def test_transport_jacobian_and_curvature():
    fwd = TransportForward()
    rng = np.random.default_rng(1)
    u, dv = 0.1 * rng.normal(size=60), rng.normal(size=60)
    h = 1e-5
    fd = (fwd.apply(u + h * dv) - fwd.apply(u - h * dv)) / (2 * h)
    np.testing.assert_allclose(fwd.jacobian(u) @ dv, fd, rtol=1e-6, atol=1e-8)
    h = 1e-3
    fd2 = (fwd.apply(u + h * dv) - 2 * fwd.apply(u) + fwd.apply(u - h * dv)) / h**2
    np.testing.assert_allclose(fwd.hessian_vv(u, dv), fd2, rtol=1e-4, atol=1e-4)
    np.testing.assert_allclose(fwd.apply_batch(np.vstack([u, dv])),
                               np.vstack([fwd.apply(u), fwd.apply(dv)]), rtol=1e-13)


def test_transport_problem():
    prob = make_transport_problem(seed=0)
    assert prob.y.shape == (441,) and prob.support.size == 6
    np.testing.assert_allclose(prob.noise.gamma, 0.01 * np.eye(441))


# -- elliptic -------------------------------------------------------------------------


def dense_elliptic_oracle(coeffs, n=15, modes=20):
    """Loop-based five-point assembly written independently of the library."""
    h = 1.0 / (n - 1)
    x = np.linspace(0, 1, n)
    U = np.asarray(coeffs).reshape(modes, modes)
    logk = np.zeros((n, n))  # [i (x1), j (x2)]
    for i in range(n):
        for j in range(n):
            logk[i, j] = sum(U[a, b] * np.cos(a * np.pi * x[i]) * np.cos(b * np.pi * x[j])
                             for a in range(modes) for b in range(modes) if U[a, b] != 0)
    kap = np.exp(logk)

    def face(p, q):
        return 2 * p * q / (p + q)

    def f(x2):
        return 0.0 if x2 <= 4 / 6 else (137.0 if x2 <= 5 / 6 else 274.0)

    m = (n - 1) * n
    A = np.zeros((m, m))
    b = np.zeros(m)
    idx = lambda i, j: (j - 1) * n + i
    for j in range(1, n):
        for i in range(n):
            r = idx(i, j)
            b[r] += f(x[j])
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if not (0 <= ii < n and 0 <= jj < n):
                    continue  # no-flux ghost node
                kf = face(kap[i, j], kap[ii, jj]) / h**2
                A[r, r] += kf
                if jj == 0:
                    b[r] += kf * 100.0
                else:
                    A[r, idx(ii, jj)] -= kf
            if i == 0:
                b[r] += 500.0 / h
    return np.linalg.solve(A, b), A, b


def test_elliptic_zero_coefficients_match_dense_oracle():
    v_ref, _, _ = dense_elliptic_oracle(np.zeros(400))
    v = elliptic_forward(np.zeros(400))
    assert v.shape == (210,)
    np.testing.assert_allclose(v, v_ref, rtol=1e-10)


def test_elliptic_sparse_coefficients_match_dense_oracle():
    truth = make_elliptic_truth(seed=3, magnitude=(0.1, 0.4))
    v_ref, A_ref, b_ref = dense_elliptic_oracle(truth)
    fwd = EllipticForward()
    A, b = fwd.assemble(truth)
    np.testing.assert_allclose(A.toarray(), A_ref, rtol=1e-12)
    np.testing.assert_allclose(b, b_ref, rtol=1e-12)
    np.testing.assert_allclose(fwd.apply(truth), v_ref, rtol=1e-10)


def test_elliptic_residual_and_structure():
    fwd = EllipticForward()
    truth = make_elliptic_truth(seed=1)
    A, b = fwd.assemble(truth)
    v = fwd.apply(truth)
    assert np.linalg.norm(A @ v - b) <= 1e-10 * np.linalg.norm(b)
    A0, _ = fwd.assemble(np.zeros(400))
    D = A0.toarray()
    np.testing.assert_allclose(D, D.T, atol=1e-12)
    off = np.abs(D).sum(axis=1) - np.abs(np.diag(D))
    assert np.all(np.diag(D) >= off - 1e-9)
    assert np.any(np.diag(D) > off + 1e-9)  # strict on the Dirichlet-adjacent row


def test_elliptic_rhs_superposition():
    base = EllipticSetup()
    hom = EllipticSetup(dirichlet_value=0.0, left_flux=0.0)
    hom2 = EllipticSetup(dirichlet_value=0.0, left_flux=0.0, source_levels=(0.0, 274.0, 548.0))
    twice = EllipticSetup(source_levels=(0.0, 274.0, 548.0))
    c = make_elliptic_truth(seed=2, magnitude=(0.1, 0.3))
    v1, v2 = EllipticForward(base).apply(c), EllipticForward(twice).apply(c)
    vf, vf2 = EllipticForward(hom).apply(c), EllipticForward(hom2).apply(c)
    np.testing.assert_allclose(vf2, 2 * vf, rtol=1e-10)
    np.testing.assert_allclose(v2 - v1, vf, rtol=1e-9, atol=1e-9 * np.abs(v1).max())


def test_elliptic_truth_and_problem():
    t = make_elliptic_truth(seed=4)
    assert np.count_nonzero(t) == 6
    np.testing.assert_array_equal(t, make_elliptic_truth(seed=4))
    mags = np.abs(t[t != 0])
    assert np.all((mags >= 0.5) & (mags <= 1.5))
    prob = make_elliptic_problem(seed=4)
    off = np.ones(400, bool)
    off[prob.support] = False
    assert np.linalg.norm(prob.truth[off]) == 0
    assert prob.y.shape == (210,)
    clean = EllipticForward().apply(prob.truth)
    assert np.std(prob.y - clean) == pytest.approx(0.1, rel=0.2)


def test_elliptic_setup_choices_are_visible():
    s = EllipticSetup()
    assert (s.face_average, s.observe) == ("harmonic", "all_but_dirichlet_row")
    arith = EllipticForward(EllipticSetup(face_average="arithmetic"))
    v = arith.apply(make_elliptic_truth(seed=0, magnitude=(0.3, 0.6)))
    assert np.all(np.isfinite(v))
