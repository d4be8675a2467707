from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import binomtest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ldp_numeric.data import synth_regression
from ldp_numeric.fedsgd import (
    ClientExample,
    GroupSchedule,
    LossKind,
    ModelState,
    TrainResult,
    TraceRow,
    batch_gradients,
    clamp_gradient,
    evaluate,
    gradient,
    objective,
    train,
    trace_to_csv,
)
from ldp_numeric.mechanisms import RandomStream
from ldp_numeric.multidim import perturb_tuple
from ldp_numeric.params import MechanismKind, variance


def _penalised_loss(loss: LossKind, theta, x, y, lam):
    """Per-example objective written out directly, for finite differences."""
    z = float(np.dot(theta[:-1], x) + theta[-1])
    if loss is LossKind.SQUARED:
        base = 0.5 * (z - y) ** 2
    elif loss is LossKind.LOGISTIC:
        base = math.log1p(math.exp(-y * z))
    else:
        base = max(0.0, 1.0 - y * z)
    return base + 0.5 * lam * float(theta @ theta)


def _separable(n: int, stream: RandomStream):
    x = stream.uniform((n, 2), low=-1.0, high=1.0)
    margin = x[:, 0] + 0.5 * x[:, 1]
    keep = np.abs(margin) > 0.2
    return x[keep], np.where(margin[keep] > 0, 1.0, -1.0)


class TestModelState:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelState(np.zeros(2), eta=0.0)
        with pytest.raises(ValueError):
            ModelState(np.zeros(2), lam=-1.0)

    def test_zeros_has_bias(self):
        s = ModelState.zeros(3, loss="logistic")
        assert s.theta.shape == (4,) and s.loss is LossKind.LOGISTIC and s.lam == 1e-4


class TestGradient:
    def test_zero_at_origin_for_zero_label(self):
        s = ModelState.zeros(3)
        assert np.array_equal(gradient(s, ClientExample(np.array([0.2, -0.4, 0.9]), 0.0)), np.zeros(4))

    def test_hinge_margin_satisfied(self):
        s = ModelState(np.array([2.0, 0.5]), loss=LossKind.HINGE, lam=0.01)
        g = gradient(s, ClientExample(np.array([0.8]), 1.0))  # y z = 2.1
        assert np.allclose(g, 0.01 * s.theta)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gradient(ModelState.zeros(2), ClientExample(np.zeros(3), 0.0))

    @pytest.mark.parametrize("loss", [LossKind.SQUARED, LossKind.LOGISTIC, LossKind.HINGE])
    def test_finite_differences(self, loss):
        rng = np.random.default_rng(42)
        h = 1e-6
        checked = 0
        for _ in range(100):
            p = int(rng.integers(1, 6))
            theta = rng.normal(0, 1, p + 1)
            x = rng.uniform(-1, 1, p)
            y = float(rng.uniform(-1, 1)) if loss is LossKind.SQUARED else float(rng.choice([-1.0, 1.0]))
            lam = float(rng.uniform(0, 0.1))
            if loss is LossKind.HINGE:
                z = float(theta[:-1] @ x + theta[-1])
                if abs(1.0 - y * z) < 1e-3:
                    continue  # kink: no derivative
            s = ModelState(theta, loss=loss, lam=lam)
            g = gradient(s, ClientExample(x, y))
            fd = np.empty_like(theta)
            for j in range(theta.size):
                e = np.zeros_like(theta)
                e[j] = h
                fd[j] = (_penalised_loss(loss, theta + e, x, y, lam) - _penalised_loss(loss, theta - e, x, y, lam)) / (2 * h)
            assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)
            checked += 1
        assert checked > 90

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        s = ModelState(rng.normal(size=4), loss=LossKind.LOGISTIC)
        x = rng.uniform(-1, 1, (10, 3))
        y = rng.choice([-1.0, 1.0], 10)
        b = batch_gradients(s, x, y)
        for i in range(10):
            assert np.allclose(b[i], gradient(s, ClientExample(x[i], y[i])))


class TestClamp:
    def test_examples(self):
        assert clamp_gradient([0.3, -0.9]).tolist() == [0.3, -0.9]
        assert clamp_gradient([2.0, -3.1]).tolist() == [1.0, -1.0]

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
    @settings(max_examples=200, deadline=None)
    def test_idempotent(self, g):
        once = clamp_gradient(g)
        assert np.array_equal(clamp_gradient(once), once)
        assert np.all(np.abs(once) <= 1)


class TestEvaluate:
    def test_exact_fit_zero_mse(self):
        theta = np.array([0.3, -0.2, 0.1])
        x = np.random.default_rng(0).uniform(-1, 1, (50, 2))
        y = x @ theta[:-1] + theta[-1]
        assert evaluate(ModelState(theta), x, y) == pytest.approx(0.0, abs=1e-24)

    def test_zero_classifier_balanced(self):
        n = 10_000
        y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        err = evaluate(ModelState.zeros(1, loss=LossKind.LOGISTIC), np.zeros((n, 1)), y)
        assert abs(err - 0.5) < 4 * math.sqrt(0.25 / n)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(ModelState.zeros(1), np.zeros((0, 1)), np.zeros(0))

    def test_objective_includes_penalty(self):
        s = ModelState(np.array([1.0, 0.0]), lam=0.5)
        assert objective(s, np.zeros((3, 1)), np.zeros(3)) == pytest.approx(0.25)


class TestTrain:
    def test_zero_gradient_examples_leave_theta(self):
        s = ModelState.zeros(2, lam=0.0)
        res = train(np.zeros((40, 2)), np.zeros(40), None, None, GroupSchedule(group_size=8), s, RandomStream(0))
        assert np.array_equal(res.state.theta, s.theta)
        assert len(res.trace) == 5 and res.stop_reason == "clients exhausted"

    def test_separable_non_private(self):
        x, y = _separable(4000, RandomStream(1))
        res = train(
            x, y, None, None, GroupSchedule(group_size=10), ModelState.zeros(2, eta=1.0, loss=LossKind.LOGISTIC, lam=0.0), RandomStream(2)
        )
        assert evaluate(res.state, x, y) == 0.0

    def test_noiseless_regression_recovers_fit(self):
        ds = synth_regression(20_000, 3, 4, 0.0, RandomStream(3))
        res = train(ds.rows, ds.labels, None, None, GroupSchedule(group_size=10), ModelState.zeros(3, eta=0.5, lam=0.0), RandomStream(4))
        assert evaluate(res.state, ds.rows, ds.labels) < 1e-3

    def test_update_is_average_of_member_updates(self):
        ds = synth_regression(30, 2, 0, 0.1, RandomStream(5))
        sched = GroupSchedule(group_size=10, max_iterations=2)
        s0 = ModelState.zeros(2, eta=0.3)
        res = train(ds.rows, ds.labels, MechanismKind.PM_SUB, 2.0, sched, s0, RandomStream(6))
        # replay the same draws sequentially
        stream = RandomStream(6)
        order = stream.permutation(30)
        s = s0
        for it in range(2):
            members = order[it * 10 : (it + 1) * 10]
            grads = clamp_gradient(batch_gradients(s, ds.rows[members], ds.labels[members]))
            noisy = perturb_tuple(MechanismKind.PM_SUB, grads, 2.0, stream)
            theta = s.theta.copy()
            theta -= sum(s.eta * noisy[i] for i in range(10)) / 10
            s = ModelState(theta, eta=s.eta)
        assert np.allclose(res.state.theta, s.theta, rtol=0, atol=1e-14)
        assert res.stop_reason == "max iterations"

    def test_convergence_tolerance(self):
        s = ModelState.zeros(1, lam=0.0)
        res = train(np.zeros((100, 1)), np.zeros(100), None, None, GroupSchedule(group_size=10, convergence_tol=1e-9), s, RandomStream(0))
        assert res.stop_reason == "converged" and len(res.trace) == 1

    def test_each_client_used_once(self):
        ds = synth_regression(95, 1, 0, 0.1, RandomStream(0))
        res = train(ds.rows, ds.labels, MechanismKind.DUCHI, 1.0, GroupSchedule(group_size=10), ModelState.zeros(1), RandomStream(1))
        assert len(res.trace) == 10  # nine full groups and one of five

    def test_deterministic(self):
        ds = synth_regression(500, 2, 0, 0.1, RandomStream(0))
        runs = [
            train(ds.rows, ds.labels, MechanismKind.HM_TP, 4.0, GroupSchedule(group_size=25), ModelState.zeros(2), RandomStream(9)).state.theta
            for _ in range(2)
        ]
        assert np.array_equal(*runs)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            train(np.zeros((0, 2)), np.zeros(0), None, None, GroupSchedule(), ModelState.zeros(2), RandomStream(0))


class TestTrace:
    def test_tail_mean(self):
        r = TrainResult(state=ModelState.zeros(1), trace=[TraceRow(i + 1, float(i), 0.0) for i in range(20)])
        assert r.final_loss == pytest.approx(18.5)

    def test_csv(self, tmp_path):
        r = TrainResult(state=ModelState.zeros(1), trace=[TraceRow(1, 0.5, 0.25), TraceRow(2, 0.4, 0.2)])
        path = tmp_path / "t.csv"
        text = trace_to_csv(r, "pm-sub", 2.0, 7, path)
        assert path.read_text() == text
        lines = text.splitlines()
        assert lines[0] == "iteration,loss,metric,mechanism,epsilon,seed"
        assert lines[1] == "1,0.5,0.25,pm-sub,2.0,7"


@pytest.fixture(scope="module")
def ordering_runs():
    """Final probe losses at epsilon = 4 over 20 seeds, sharing data and client order per seed."""
    ds = synth_regression(80_000, 1, 123, 0.1, RandomStream(99))
    cut = 64_000
    probe = (ds.rows[cut:], ds.labels[cut:])
    out = {}
    for kind in (MechanismKind.PM_SUB, MechanismKind.HM_TP, MechanismKind.PM):
        out[kind] = [
            train(
                ds.rows[:cut], ds.labels[:cut], kind, 4.0, GroupSchedule(group_size=10),
                ModelState.zeros(1, eta=0.5), RandomStream(1000 + seed), probe=probe,
            ).final_loss
            for seed in range(20)
        ]
    return out


@pytest.mark.slow
class TestMechanismOrdering:
    def test_pm_sub_beats_pm(self, ordering_runs):
        a, b = ordering_runs[MechanismKind.PM_SUB], ordering_runs[MechanismKind.PM]
        assert np.median(a) <= np.median(b)
        wins = sum(x < y for x, y in zip(a, b))
        assert binomtest(wins, len(a), alternative="greater").pvalue < 0.05

    @pytest.mark.xfail(
        strict=False,
        reason="averaged over these gradients HM-TP's variance is only about 10% below PM's, "
        "and 20 seeds of training noise do not resolve a gap that small",
    )
    def test_hm_tp_beats_pm(self, ordering_runs):
        a, b = ordering_runs[MechanismKind.HM_TP], ordering_runs[MechanismKind.PM]
        assert np.median(a) <= np.median(b)
        wins = sum(x < y for x, y in zip(a, b))
        assert binomtest(wins, len(a), alternative="greater").pvalue < 0.05

    def test_hm_tp_loses_to_pm_mid_range(self):
        for x in (0.1, 0.3, 0.5, 0.6):
            assert variance(MechanismKind.HM_TP, 4.0, x) > variance(MechanismKind.PM, 4.0, x)
