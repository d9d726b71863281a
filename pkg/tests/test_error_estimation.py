import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contropt.error_estimation import (
    ErrorStats,
    chebyshev_bound,
    coverage_floor,
    cv_error_stats,
    default_folds,
    exp_coverage_floor,
    in_chebyshev_regime,
    partition_folds,
    schedule_confidence,
)
from contropt.errors import DomainError
from contropt.surrogate import Hyperparameters


def stats(mean, std):
    return ErrorStats(mean, std, 2, np.zeros(2))


class TestFolds:
    def test_leave_one_out(self):
        folds = partition_folds(10, 10, 0)
        assert [len(f) for f in folds] == [1] * 10

    def test_balanced_sizes(self):
        assert sorted(len(f) for f in partition_folds(10, 3, 0)) == [3, 3, 4]

    @given(st.integers(2, 60), st.data())
    def test_partition_property(self, n, data):
        s = data.draw(st.integers(2, n))
        folds = partition_folds(n, s, data.draw(st.integers(0, 1000)))
        joined = np.concatenate(folds)
        assert sorted(joined.tolist()) == list(range(n))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_deterministic(self):
        a = partition_folds(17, 4, 123)
        b = partition_folds(17, 4, 123)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_too_many_folds(self):
        with pytest.raises(DomainError):
            partition_folds(3, 4, 0)
        with pytest.raises(DomainError):
            partition_folds(3, 1, 0)

    def test_default_folds(self):
        assert default_folds(25) == 10
        assert default_folds(6) == 6


class TestCvStats:
    h = Hyperparameters(1.5, 4.0, 0.05)

    def test_zero_values(self):
        x = np.random.default_rng(0).uniform(size=(8, 2))
        st_ = cv_error_stats(x, np.zeros(8), self.h, 4, 0)
        assert st_.mean == 0.0 and st_.std == 0.0

    def test_two_fold_closed_form(self):
        x = np.array([[0.0, 0.0], [0.3, 0.1], [0.7, 0.9], [1.0, 0.4]])
        y = np.array([0.5, -1.0, 2.0, 0.25])
        seed = 5
        folds = partition_folds(4, 2, seed)
        h = self.h

        def k(a, b):
            return h.signal_var * math.exp(-h.inv_lengthscale_sq * float(np.sum((a - b) ** 2)))

        expected = np.empty(4)
        for held in folds:
            i, j = [t for t in range(4) if t not in held]
            a = h.signal_var + h.noise_var
            b = k(x[i], x[j])
            det = a * a - b * b
            w_i = (a * y[i] - b * y[j]) / det
            w_j = (a * y[j] - b * y[i]) / det
            for p in held:
                expected[p] = k(x[p], x[i]) * w_i + k(x[p], x[j]) * w_j - y[p]
        got = cv_error_stats(x, y, h, 2, seed)
        np.testing.assert_allclose(got.residuals, expected, atol=1e-10)
        assert got.mean == pytest.approx(expected.mean(), abs=1e-10)
        assert got.std == pytest.approx(np.std(expected, ddof=1), abs=1e-10)

    def test_same_seed_same_residuals(self):
        rng = np.random.default_rng(1)
        x, y = rng.uniform(size=(20, 3)), rng.normal(size=20)
        a = cv_error_stats(x, y, self.h, 5, 9)
        b = cv_error_stats(x, y, self.h, 5, 9)
        np.testing.assert_array_equal(a.residuals, b.residuals)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 100.0))
    def test_scaling_by_c(self, seed, c):
        rng = np.random.default_rng(seed)
        x, y = rng.uniform(size=(15, 2)), rng.normal(size=15)
        h = Hyperparameters(0.8, 6.0, 1e-3)
        hc = Hyperparameters(0.8 * c * c, 6.0, 1e-3 * c * c)
        base = cv_error_stats(x, y, h, 5, seed)
        scaled = cv_error_stats(x, c * y, hc, 5, seed)
        assert scaled.mean == pytest.approx(c * base.mean, rel=1e-9, abs=1e-12 * c)
        assert scaled.std == pytest.approx(c * base.std, rel=1e-9)
        assert chebyshev_bound(scaled, 3) == pytest.approx(c * chebyshev_bound(base, 3), rel=1e-9)

    def test_fallback_fold_is_flagged(self, monkeypatch):
        import contropt.surrogate as surrogate

        def refuse(*args, **kwargs):
            raise np.linalg.LinAlgError("not positive definite")

        monkeypatch.setattr(surrogate, "cholesky", refuse)
        y = np.array([1.0, 2.0, 3.0, 6.0])
        got = cv_error_stats(np.eye(4), y, self.h, 2, 0)
        assert got.flagged and len(got.fallback_folds) == 2
        np.testing.assert_allclose(got.residuals, y - y.mean())


class TestBounds:
    def test_chebyshev_examples(self):
        assert chebyshev_bound(stats(0.0, 1.0), 2) == 2
        assert chebyshev_bound(stats(-0.5, 0.25), 4) == 1.5
        assert chebyshev_bound(stats(0.3, 0.0), 17) == 0.3

    def test_regime_flag(self):
        assert in_chebyshev_regime(2.0) and not in_chebyshev_regime(1.75)

    def test_coverage_examples(self):
        assert coverage_floor(2) == 0.75
        assert exp_coverage_floor(2) == pytest.approx(math.exp(-0.3))
        assert exp_coverage_floor(2) <= coverage_floor(2)
        assert coverage_floor(10) == pytest.approx(0.99)
        assert coverage_floor(1e8) == pytest.approx(1.0)
        assert coverage_floor(0.5) == 0.0

    @given(st.floats(2.0, 1e3))
    def test_exp_floor_below_chebyshev(self, t):
        assert exp_coverage_floor(t) <= coverage_floor(t) + 1e-15

    def test_schedule_confidence(self):
        assert schedule_confidence([2.0, 4.0]) == pytest.approx(math.exp(-1.2 * (0.25 + 0.0625)))
        with pytest.raises(DomainError):
            schedule_confidence([2.0, 0.0])


# name -> (sampler, true mean, true std)
SAMPLERS = {
    "gaussian": (lambda rng, n: rng.normal(1.0, 2.0, n), 1.0, 2.0),
    "uniform": (lambda rng, n: rng.uniform(-3.0, 1.0, n), -1.0, 4.0 / math.sqrt(12.0)),
    "two-point": (lambda rng, n: np.where(rng.random(n) < 0.3, 5.0, -1.0), 0.8, 6.0 * math.sqrt(0.21)),
}


@pytest.mark.parametrize("name", sorted(SAMPLERS))
@pytest.mark.parametrize("t", [2, 3, 4])
def test_empirical_coverage(name, t):
    sampler, mu, sigma = SAMPLERS[name]
    e = sampler(np.random.default_rng([t, sorted(SAMPLERS).index(name)]), 100_000)
    assert np.mean(np.abs(e - mu) <= t * sigma) >= coverage_floor(t) - 0.01
