import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contropt.contraction import (
    ContractionState,
    RunConfig,
    apply_contraction,
    diagnostic_qk,
    error_gate,
    estimate_contraction_factor,
    percentile,
    run,
)
from contropt.error_estimation import ErrorStats
from contropt.errors import DomainError, EvaluationError
from contropt.geometry import BoxDomain, ConstrainedDomain, SampleSet, WalkParams
from contropt.objectives import get_objective
from contropt.surrogate import Hyperparameters, KernelModel

UNIT2 = BoxDomain(np.zeros(2), np.ones(2))


def sort_and_interpolate(values, c):
    """Independent oracle: explicit sort and linear interpolation by position."""
    v = sorted(values)
    pos = c / 100.0 * (len(v) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


class TestPercentile:
    def test_examples(self):
        assert percentile([1, 2, 3], 50) == 2
        assert percentile([1, 2, 3, 4], 50) == 2.5
        vals = [4.0, -1.0, 7.5, 0.0]
        assert percentile(vals, 0) == -1.0 and percentile(vals, 100) == 7.5

    def test_errors(self):
        with pytest.raises(DomainError):
            percentile([], 50)
        with pytest.raises(DomainError):
            percentile([1.0], 101)

    @settings(max_examples=200)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 100))
    def test_matches_oracle(self, values, c):
        got = percentile(values, c)
        assert got == pytest.approx(sort_and_interpolate(values, c), rel=1e-12, abs=1e-12)
        assert min(values) <= got <= max(values)


def zero_stats(mean=0.0, std=0.0):
    return ErrorStats(mean, std, 2, np.zeros(2))


class TestGate:
    def test_examples(self):
        assert error_gate(zero_stats(), 2.0, 1.0, 1.0, 0.0)
        assert not error_gate(zero_stats(0.0, 0.1), 2.0, 1.0, 0.5, 0.5)
        assert error_gate(zero_stats(0.0, 0.1), 2.0, 1.0, 0.25, 0.0)

    def test_omega_scales_budget(self):
        assert not error_gate(zero_stats(0.0, 0.1), 2.0, 0.5, 0.25, 0.0)

    def test_threshold_below_minimum(self):
        with pytest.raises(DomainError):
            error_gate(zero_stats(), 2.0, 1.0, -1.0, 0.0)


def linear_model(weights, offset=0.0):
    w = np.asarray(weights, dtype=float)
    return lambda x: np.atleast_2d(x) @ w + offset


def state_with(points, values, domain=None):
    s = SampleSet(points, values)
    return ContractionState(domain or ConstrainedDomain(UNIT2), s, float(np.min(values)), len(values), 0)


class TestApplyContraction:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.x = rng.uniform(size=(20, 2))
        self.model = KernelModel.build(Hyperparameters(1.0, 3.0, 1e-8), self.x, np.sin(4 * self.x[:, 0]))
        self.values = np.sin(4 * self.x[:, 0])

    def test_max_threshold_keeps_everything(self):
        st0 = state_with(self.x, self.values)
        after = apply_contraction(st0, self.model, float(self.model.mean(self.x).max()))
        assert len(after.samples) == 20 and after.k == 1 and after.domain.level == 1

    def test_min_threshold_keeps_argmin(self):
        st0 = state_with(self.x, self.values)
        means = self.model.mean(self.x)
        after = apply_contraction(st0, self.model, float(means.min()))
        assert any(np.array_equal(p, self.x[np.argmin(means)]) for p in after.samples.points)

    def test_median_keeps_half(self):
        st0 = state_with(self.x, self.values)
        means = self.model.mean(self.x)
        u = float(np.median(means))
        after = apply_contraction(st0, self.model, u)
        brute = int(np.sum(means <= u))
        assert len(after.samples) == brute
        assert abs(brute - 10) <= 1

    def test_retained_samples_satisfy_threshold(self):
        st0 = state_with(self.x, self.values)
        u = percentile(self.values, 40)
        after = apply_contraction(st0, self.model, u)
        assert np.all(self.model.mean(after.samples.points) <= u)
        assert after.domain.contains(after.samples.points).all()
        assert not after.forced_incumbent

    def test_incumbent_forced_when_model_rejects_it(self):
        x = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]])
        st0 = state_with(x, np.array([3.0, 1.0, 2.0]))
        after = apply_contraction(st0, linear_model([1.0, 0.0]), 0.2)
        assert after.forced_incumbent
        assert [p.tolist() for p in after.samples.points] == [[0.1, 0.1], [0.5, 0.5]]


class TestQk:
    def test_uniform_values_median(self):
        rng = np.random.default_rng(3)
        v = rng.uniform(size=10_000)
        diag = diagnostic_qk(v, 0.0, percentile(v, 50), omega=1.0)
        assert diag.q == pytest.approx(1.0, abs=0.05)
        assert diag.factor == pytest.approx(2.0, abs=0.1)

    def test_zero_margin(self):
        v = np.array([0.0, 1.0, 2.0])
        diag = diagnostic_qk(v, 0.5, 0.0)
        assert diag.flag == "zero-margin" and diag.q == math.inf

    def test_constant_values(self):
        assert diagnostic_qk(np.ones(4), 1.0, 1.0).flag == "degenerate-range"

    def test_q_falls_as_threshold_rises(self):
        v = np.linspace(0, 1, 11)
        qs = [diagnostic_qk(v, 0.0, u).q for u in (0.1, 0.3, 0.6, 0.9)]
        assert all(a > b for a, b in zip(qs, qs[1:]))


class TestContractionFactor:
    def test_identity_and_empty(self):
        d = ConstrainedDomain(UNIT2)
        assert estimate_contraction_factor(d, d, 5000, 0) == 1.0
        never = d.restrict(linear_model([0.0, 0.0], 1.0), 0.0)
        assert estimate_contraction_factor(d, never, 5000, 0) == 0.0
        assert math.isnan(estimate_contraction_factor(never, never, 5000, 0))

    def test_left_half(self):
        d = ConstrainedDomain(UNIT2)
        left = d.restrict(linear_model([1.0, 0.0]), 0.5)
        assert estimate_contraction_factor(d, left, 100_000, 1) == pytest.approx(0.5, abs=0.02)


def counting(fn):
    calls = []

    def wrapped(x):
        calls.append(np.array(x))
        return fn(x)

    wrapped.calls = calls
    return wrapped


class TestRun:
    def test_constant_zero_objective(self):
        f = counting(lambda x: 0.0)
        res = run(RunConfig(K=3, m=2, seed=1), f, UNIT2)
        assert res.termination == "completed"
        assert len(res.records) == 3
        for rec in res.records:
            assert rec.cv_mean == 0.0 and rec.cv_std == 0.0
            assert rec.inner_iters == 1
            assert rec.retained == rec.n_total  # nothing is ever dropped
        assert res.n_total == len(f.calls)

    def test_accounting_and_invariants(self):
        spec = get_objective("branin")
        f = counting(spec.func)
        res = run(RunConfig(K=4, m=2, t=2.5, seed=3), f, spec.box)
        assert res.n_total == len(f.calls)
        assert res.trace[-1].eval_index == res.n_total
        best = [p.f_best for p in res.trace]
        assert all(a >= b for a, b in zip(best, best[1:]))
        assert res.f_best == min(spec.func(x) for x in f.calls)
        assert res.domain.contains(res.samples.points).all()
        assert [r.k for r in res.records] == list(range(len(res.records)))

    def test_levels_are_nested(self):
        spec = get_objective("sin2")
        res = run(RunConfig(K=4, m=2, t=2.5, seed=0), spec.func, spec.box)
        probes = np.random.default_rng(0).uniform(spec.lower, spec.upper, (20_000, 2))
        inside = [res.contains(probes, level=k) for k in range(len(res.records) + 1)]
        for outer, inner in zip(inside, inside[1:]):
            assert np.all(outer[inner])

    def test_budget_termination(self):
        spec = get_objective("branin")
        f = counting(spec.func)
        res = run(RunConfig(K=10, budget=15, seed=0), f, spec.box)
        assert res.termination == "budget"
        assert res.n_total == 15 == len(f.calls)

    def test_noncontractible_cap(self):
        rng = np.random.default_rng(0)
        res = run(RunConfig(K=2, max_iter_inner=3, min_iter_inner=1, t=50.0, seed=0),
                  lambda x: float(rng.normal()), UNIT2)
        assert res.termination == "noncontractible-cap"

    def test_non_finite_value_aborts_with_partial(self):
        count = [0]

        def f(x):
            count[0] += 1
            return math.nan if count[0] == 9 else float(np.sum(x**2))

        with pytest.raises(EvaluationError) as info:
            run(RunConfig(K=5, seed=0), f, UNIT2)
        partial = info.value.partial
        assert partial is not None and partial.n_total == 9
        assert len(partial.trace) == 8

    def test_same_seed_same_trace(self):
        spec = get_objective("branin")
        a = run(RunConfig(K=3, seed=5), spec.func, spec.box)
        b = run(RunConfig(K=3, seed=5), spec.func, spec.box)
        assert a.trace == b.trace
        c = run(RunConfig(K=3, seed=6), spec.func, spec.box)
        assert a.trace != c.trace

    def test_returns_points_in_user_coordinates(self):
        spec = get_objective("branin")
        res = run(RunConfig(K=2, seed=0), spec.func, spec.box)
        assert spec.box.contains(res.sample_points()).all()
        assert spec.func(res.x_best) == res.f_best


class TestRunConfig:
    def test_validation(self):
        with pytest.raises(DomainError):
            RunConfig(omega=0.0)
        with pytest.raises(DomainError):
            RunConfig(K=2, c=(50.0,))
        with pytest.raises(DomainError):
            RunConfig(c=100.0)

    def test_schedules(self):
        cfg = RunConfig(K=4, t=3.5, t_ramp=True)
        assert cfg.t_sched == (0.0, 0.875, 1.75, 2.625)
        assert RunConfig(K=2, c=[40, 60]).c_sched == (40.0, 60.0)

    def test_dict_roundtrip(self):
        cfg = RunConfig(K=5, m=3, c=(10, 20, 30, 40, 50), walk=WalkParams(n_c=7, T=4), budget=99)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(DomainError):
            RunConfig.from_dict({"bogus": 1})


@pytest.mark.slow
def test_branin_minimizers_survive_every_level():
    spec = get_objective("branin")
    cfg = dict(K=7, m=2, min_iter_inner=1, omega=1.0, c=50.0, t=3.5)
    kept = 0
    for seed in range(20):
        res = run(RunConfig(seed=seed, **cfg), spec.func, spec.box)
        kept += all(res.contains(x, level=k)[0]
                    for k in range(len(res.records) + 1) for x in spec.minimizers)
    assert kept >= 18
