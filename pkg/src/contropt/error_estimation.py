"""Cross-validated surrogate error statistics and Chebyshev-type bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IllConditionedError
from .surrogate import Hyperparameters, KernelModel

DEFAULT_FOLDS = 10


@dataclass(frozen=True, eq=False)
class ErrorStats:
    """Mean and sample std of the CV residuals ``model - f``.

    ``fallback_folds`` lists folds whose complement could not be factorized;
    their residuals were replaced by ``value - mean(values)``.
    """

    mean: float
    std: float
    folds: int
    residuals: np.ndarray
    fallback_folds: tuple = ()

    @property
    def flagged(self) -> bool:
        return bool(self.fallback_folds)


def partition_folds(n: int, s: int, rng) -> list[np.ndarray]:
    """Random partition of ``range(n)`` into ``s`` folds of near-equal size."""
    if not 2 <= s <= n:
        raise DomainError(f"need 2 <= s <= n, got s={s}, n={n}")
    perm = np.random.default_rng(rng).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, s)]


def default_folds(n: int) -> int:
    return min(DEFAULT_FOLDS, n)


def cv_error_stats(
    points, values, hyper: Hyperparameters, s: int | None = None, rng=None, prior_mean: float = 0.0
) -> ErrorStats:
    """s-fold CV residuals with the hyperparameters held fixed."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(values, dtype=float).reshape(-1)
    n = len(y)
    s = default_folds(n) if s is None else s
    folds = partition_folds(n, s, rng)
    residuals = np.empty(n)
    fallback = []
    for i, held in enumerate(folds):
        train = np.ones(n, dtype=bool)
        train[held] = False
        try:
            model = KernelModel.build(hyper, x[train], y[train], prior_mean)
            residuals[held] = model.mean(x[held]) - y[held]
        except IllConditionedError:
            residuals[held] = y[held] - y.mean()
            fallback.append(i)
    std = float(np.std(residuals, ddof=1)) if n > 1 else 0.0
    return ErrorStats(float(residuals.mean()), std, s, residuals, tuple(fallback))


def chebyshev_bound(stats: ErrorStats, t: float) -> float:
    """``|mean| + t * std``.

    The accompanying coverage claim is only made for ``t >= 2``; see
    :func:`in_chebyshev_regime`.
    """
    return abs(stats.mean) + t * stats.std


def in_chebyshev_regime(t: float) -> bool:
    return t >= 2.0


def coverage_floor(t: float) -> float:
    """Distribution-free lower bound ``1 - 1/t**2`` on ``P(|e - mu| <= t sigma)``.

    Clamped at 0 for ``t < 1`` where the bound is vacuous.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    return max(0.0, 1.0 - 1.0 / t**2)


def exp_coverage_floor(t: float) -> float:
    """``exp(-1.2 / t**2)``, below :func:`coverage_floor` whenever ``t >= 2``."""
    if t <= 0:
        raise DomainError("t must be positive")
    return math.exp(-1.2 / t**2)


def schedule_confidence(ts) -> float:
    """Joint success probability ``prod exp(-1.2 / t_k**2)`` for a schedule with all ``t_k >= 2``."""
    ts = np.asarray(ts, dtype=float)
    if np.any(ts <= 0):
        raise DomainError("confidence parameters must be positive")
    return float(np.exp(-1.2 * np.sum(ts**-2.0)))
