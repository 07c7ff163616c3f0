import numpy as np
import pytest

from sparse_ekp import driver
from sparse_ekp.core import DiagCovariance, InverseProblem, LinearForward, NoiseModel
from sparse_ekp.driver import (
    OuterConfig,
    OuterDivergence,
    credible_intervals,
    linear_exact_alternation,
    method_label,
    metrics,
    relative_change_stop,
    run_outer,
)
from sparse_ekp.hyperprior import HyperParams, objective_J, objective_Jp
from sparse_ekp.kalman import KalmanConfig, SeedContext, iekf_run
from sparse_ekp.problems import make_linear_problem, make_transport_problem


# -- small helpers --------------------------------------------------------------


def test_relative_change_examples():
    u = np.array([1.0, -3.0])
    assert relative_change_stop(u, u, 1e-9)
    assert not relative_change_stop([1.5, 0.0], [1.0, 0.0], 0.4)
    assert relative_change_stop([2.02, -2.02], [2.0, -2.0], 0.02)
    assert not relative_change_stop([0.0, 0.0], [0.0, 0.0], 1.0)


def test_credible_interval_examples():
    same = np.tile([1.0, -2.0], (5, 1))
    lo, hi = credible_intervals(same)
    np.testing.assert_array_equal(lo, [1.0, -2.0])
    np.testing.assert_array_equal(hi, [1.0, -2.0])

    samples = np.arange(1.0, 101.0)[:, None]
    lo, hi = credible_intervals(samples)
    # order statistic rule h = (n - 1) q + 1
    def by_hand(q):
        h = 99 * q + 1
        j = int(np.floor(h))
        return samples[j - 1, 0] + (h - j) * (samples[j, 0] - samples[j - 1, 0])

    assert lo[0] == pytest.approx(3.475, abs=1e-12) == by_hand(0.025)
    assert hi[0] == pytest.approx(97.525, abs=1e-12) == by_hand(0.975)

    sym = np.linspace(-2.0, 2.0, 41)[:, None]
    lo, hi = credible_intervals(sym)
    assert lo[0] == pytest.approx(-hi[0], abs=1e-12)


def test_metrics_examples():
    truth = np.array([1.0, 0.0, -2.0, 0.0, 0.0])
    support = np.array([0, 2])
    eps = 0.01
    u = truth.copy()
    u[[1, 3, 4]] = eps
    m = metrics(u, truth, support, truth, truth)
    assert m["avg_width"] == 0
    assert m["off_support_norm"] == pytest.approx(eps * np.sqrt(3))
    assert metrics(truth, truth)["l2_error"] == 0
    assert metrics(truth) == {}
    m = metrics(truth, lower=truth - 1, upper=truth + 3)
    assert m == {"avg_width": 4.0}


def test_method_labels():
    assert method_label("iekf", 1 / 3) == "l0.5-IEKF"
    assert method_label("iekf-sl", 1.0) == "l1-IEKF-SL"
    assert method_label("iekf", 1.0, vanilla=True) == "IEKF"


def test_outer_config_validation():
    inner = KalmanConfig()
    with pytest.raises(ValueError):
        OuterConfig(inner, HyperParams(1.0), max_outer=0)
    with pytest.raises(ValueError):
        OuterConfig(inner, HyperParams(1.0), rel_tol=0.0)
    with pytest.raises(ValueError):
        OuterConfig(inner, HyperParams(1.0), theta0=[1.0, 0.0])
    with pytest.raises(ValueError):
        OuterConfig(inner, HyperParams(1.0), variant="enkf")


# -- run_outer ---------------------------------------------------------------------


def test_single_outer_is_vanilla_inner_run():
    prob = make_linear_problem(d=20, k=8, sparsity=2, seed=1)
    inner = KalmanConfig(T=5, N=30)
    rec = run_outer(prob, OuterConfig(inner, HyperParams(1.0), theta0=0.2, max_outer=1), seed=3)
    res = iekf_run(prob, DiagCovariance(np.full(20, 0.2)), inner, SeedContext(3, 0))
    assert len(rec.steps) == 1 and rec.final.theta_next is None
    np.testing.assert_array_equal(rec.final.estimate, res.final_mean)


def test_record_structure_and_ensembles():
    prob = make_linear_problem(d=15, k=6, sparsity=2, seed=2)
    cfg = OuterConfig(KalmanConfig(T=4, N=25), HyperParams(0.5), max_outer=3, record_ensembles=True,
                      variant="iekf-sl")
    rec = run_outer(prob, cfg, seed=0)
    assert [s.index for s in rec.steps] == [0, 1, 2]
    for prev, step in zip(rec.steps, rec.steps[1:]):
        np.testing.assert_array_equal(step.theta, prev.theta_next)
    for s in rec.steps:
        np.testing.assert_allclose(s.ensemble.mean(axis=0), s.estimate, atol=1e-12)
        assert np.all(s.lower <= s.upper)
        assert set(s.metrics) == {"l2_error", "avg_width", "off_support_norm"}
    assert rec.status == "ok" and rec.stop_reason == "max_outer"


def test_relative_change_stops_early():
    prob = make_linear_problem(d=10, k=8, sparsity=2, seed=4)
    cfg = OuterConfig(KalmanConfig(T=10, N=50), HyperParams(1.0), max_outer=30, rel_tol=0.5)
    rec = run_outer(prob, cfg, seed=0)
    assert rec.stop_reason == "relative_change" and len(rec.steps) < 30


def test_divergence_returns_partial_record():
    class Fragile(LinearForward):
        calls = 0

        def apply_batch(self, U, threads=None):
            Fragile.calls += 1
            out = super().apply_batch(U)
            return out * np.nan if Fragile.calls > 3 else out

    prob = InverseProblem(Fragile(np.eye(3)), np.ones(3), NoiseModel.isotropic(3, 0.1))
    cfg = OuterConfig(KalmanConfig(T=2, N=10), HyperParams(1.0), max_outer=4)
    with pytest.raises(OuterDivergence) as info:
        run_outer(prob, cfg)
    rec = info.value.record
    assert rec.status == "diverged" and len(rec.steps) == 1


def test_invgamma_outer_path():
    prob = make_linear_problem(d=10, k=6, sparsity=2, seed=5)
    cfg = OuterConfig(KalmanConfig(T=3, N=20), HyperParams(-1, beta=1.0), max_outer=3)
    rec = run_outer(prob, cfg)
    assert len(rec.steps) == 3 and np.all(rec.final.theta > 0)


def test_non_closed_form_rejected():
    prob = make_linear_problem(d=5, k=3, sparsity=1)
    cfg = OuterConfig(KalmanConfig(T=1, N=5), HyperParams(0.5, beta=1.0), max_outer=2)
    with pytest.raises(ValueError):
        run_outer(prob, cfg)


@pytest.mark.slow
def test_linear_fig1_beats_vanilla_on_average():
    finals, vanillas = [], []
    for s in range(5):
        prob = make_linear_problem(seed=s)
        cfg = OuterConfig(KalmanConfig(alpha=0.5, T=30, N=300), HyperParams("1/3"), theta0=0.1,
                          max_outer=11)
        rec = run_outer(prob, cfg, seed=s)
        errs = rec.series("l2_error")
        vanillas.append(errs[0])
        finals.append(errs[-1])
    assert np.mean(finals) < np.mean(vanillas)


@pytest.mark.slow
def test_transport_l05_not_worse_than_l1():
    prob = make_transport_problem(seed=0)
    out = {}
    for r in (1 / 3, 1.0):
        errs = []
        for s in range(5):
            cfg = OuterConfig(KalmanConfig(T=20, N=100), HyperParams(r), theta0=0.04, max_outer=4)
            errs.append(run_outer(prob, cfg, seed=s).final.metrics["l2_error"])
        out[r] = np.mean(errs)
    assert out[1 / 3] <= out[1.0]


# -- exact linear alternation --------------------------------------------------------


@pytest.mark.parametrize("r", [1 / 3, 0.5, 1.0, 2.0])
def test_exact_alternation_descends(r):
    prob = make_linear_problem(d=30, k=12, sparsity=3, seed=7)
    hp = HyperParams(r)
    us, ths = linear_exact_alternation(prob, hp, 0.5, 12)
    floor = driver.DEFAULT_THETA_FLOOR
    for ell in range(12):
        th = np.maximum(ths[ell], floor)
        before = objective_J(us[ell], th, prob, hp)
        mid = objective_J(us[ell + 1], th, prob, hp)
        after = objective_J(us[ell + 1], np.maximum(ths[ell + 1], floor), prob, hp)
        assert mid <= before + 1e-9 * abs(before)
        assert after <= mid + 1e-9 * abs(mid)


def test_exact_alternation_u_update_is_normal_equation_solution():
    prob = make_linear_problem(d=6, k=4, sparsity=2, seed=8)
    G, gamma, y = prob.forward.G, prob.noise.gamma, prob.y
    th = np.array([0.5, 1.0, 2.0, 0.1, 0.3, 1.5])
    us, _ = linear_exact_alternation(prob, HyperParams(1.0), th, 1)
    Gi = np.linalg.inv(gamma)
    ref = np.linalg.solve(G.T @ Gi @ G + np.diag(1 / th), G.T @ Gi @ y)
    np.testing.assert_allclose(us[1], ref, rtol=1e-9)


def test_exact_alternation_scalar_shrinkage():
    prob = InverseProblem(LinearForward(np.eye(1)), np.array([10.0]), NoiseModel.isotropic(1, 1.0))
    us, _ = linear_exact_alternation(prob, HyperParams(1.0), 1.0, 30)
    assert 0 < us[-1][0] < 10.0
    # l1 shrinkage fixed point with C_1 = sqrt(2): u = y - sqrt(2)
    assert us[-1][0] == pytest.approx(10.0 - np.sqrt(2), rel=1e-6)


def test_exact_alternation_requires_matrix():
    prob = make_transport_problem()
    with pytest.raises(ValueError):
        linear_exact_alternation(prob, HyperParams(1.0), 0.1, 1)


@pytest.mark.slow
def test_exact_alternation_agrees_with_ensemble_method():
    prob = make_linear_problem(d=20, k=10, sparsity=3, seed=9)
    hp = HyperParams(1.0)
    us, _ = linear_exact_alternation(prob, hp, 1.0, 15)
    cfg = OuterConfig(KalmanConfig(alpha=0.5, T=40, N=2000), hp, theta0=1.0, max_outer=15,
                      variant="iekf-sl")
    u_ens = run_outer(prob, cfg, seed=0).final.estimate
    jp_exact = objective_Jp(us[-1], prob, hp)
    assert objective_Jp(u_ens, prob, hp) == pytest.approx(jp_exact, rel=0.01)
