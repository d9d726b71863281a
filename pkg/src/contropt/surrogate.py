"""Gaussian-kernel GP regression used as the contraction surrogate.

The covariance is ``sf2 * exp(-s2 * |x - x'|^2) + sn2 * delta(x, x')``.  The
prior mean is a constant, zero unless ``prior_mean`` is given.
Hyperparameters are chosen by maximizing the log marginal likelihood with
multi-start L-BFGS-B over log-parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import DomainError, FitError, IllConditionedError
from .geometry import ConstrainedDomain

LOG_2PI = math.log(2.0 * math.pi)
NOISE_FLOOR_REL = 1e-10
MAX_JITTER_REL = 1e-4


@dataclass(frozen=True)
class Hyperparameters:
    signal_var: float
    inv_lengthscale_sq: float
    noise_var: float

    def __post_init__(self):
        if not (self.signal_var > 0 and self.inv_lengthscale_sq >= 0 and self.noise_var >= 0):
            raise DomainError(f"invalid hyperparameters {self}")

    def to_log(self) -> np.ndarray:
        return np.log([self.signal_var, self.inv_lengthscale_sq, self.noise_var])

    @classmethod
    def from_log(cls, theta) -> "Hyperparameters":
        sf2, s2, sn2 = np.exp(np.asarray(theta, dtype=float))
        return cls(float(sf2), float(s2), float(sn2))


def kernel_eval(x, y, h: Hyperparameters) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DomainError(f"dimension mismatch: {x.size} vs {y.size}")
    diff = x - y
    return h.signal_var * math.exp(-h.inv_lengthscale_sq * float(diff @ diff))


def _sqdist(a, b):
    return cdist(a, b, "sqeuclidean")


def _factor(sqd: np.ndarray, h: Hyperparameters):
    """Cholesky factor of Psi with x10 jitter escalation on failure.

    Returns ``(L, noise)`` where ``noise`` is the diagonal term actually used.
    """
    k = h.signal_var * np.exp(-h.inv_lengthscale_sq * sqd)
    extra = 0.0
    cap = MAX_JITTER_REL * h.signal_var
    while True:
        noise = h.noise_var + extra
        psi = k.copy()
        psi[np.diag_indices_from(psi)] += noise
        try:
            return cholesky(psi, lower=True, check_finite=False), noise, k
        except np.linalg.LinAlgError:
            pass
        extra = max(extra * 10.0, 1e-12 * h.signal_var)
        if extra > cap:
            raise IllConditionedError("covariance matrix not positive definite", extra)


def _prep(points, values):
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(values, dtype=float).reshape(-1)
    if len(x) != len(y) or len(y) == 0:
        raise DomainError("points and values must be nonempty and of equal length")
    return x, y


def log_marginal_likelihood(h: Hyperparameters, points, values, prior_mean: float = 0.0) -> float:
    x, y = _prep(points, values)
    lml, _ = _lml_and_grad(h, _sqdist(x, x), y - prior_mean, with_grad=False)
    return lml


def _lml_and_grad(h, sqd, y, with_grad=True):
    L, noise, k = _factor(sqd, h)
    alpha = cho_solve((L, True), y, check_finite=False)
    n = len(y)
    lml = -0.5 * float(y @ alpha) - float(np.log(np.diag(L)).sum()) - 0.5 * n * LOG_2PI
    if not with_grad:
        return lml, None
    w = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    grad = np.array([
        0.5 * float(np.sum(w * k)),
        0.5 * float(np.sum(w * (-h.inv_lengthscale_sq * sqd * k))),
        0.5 * h.noise_var * float(np.trace(w)),
    ])
    return lml, grad


@dataclass(frozen=True, eq=False)
class KernelModel:
    """Fitted GP: training data, Cholesky factor of Psi and weights Psi^-1 f."""

    hyper: Hyperparameters
    points: np.ndarray
    values: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    noise: float
    prior_mean: float = 0.0

    @classmethod
    def build(cls, hyper: Hyperparameters, points, values, prior_mean: float = 0.0) -> "KernelModel":
        """Condition the GP on data with fixed hyperparameters (no fitting)."""
        x, y = _prep(points, values)
        L, noise, _ = _factor(_sqdist(x, x), hyper)
        alpha = cho_solve((L, True), y - prior_mean, check_finite=False)
        return cls(hyper, x, y, L, alpha, noise, float(prior_mean))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1) if x.size == self.dim else x.reshape(-1, 1)
        if x.shape[1] != self.dim:
            raise DomainError(f"expected dimension {self.dim}, got {x.shape[1]}")
        return x

    def __post_init__(self):
        # centred copies keep the BLAS distance expansion accurate when points cluster tightly
        shift = self.points.mean(axis=0) if len(self.points) else np.zeros(self.points.shape[1])
        centred = self.points - shift
        object.__setattr__(self, "_shift", shift)
        object.__setattr__(self, "_centred_t", np.ascontiguousarray(centred.T))
        object.__setattr__(self, "_norms", np.einsum("ij,ij->i", centred, centred))

    def cross(self, x) -> np.ndarray:
        x = self._check(x) - self._shift
        sq = x @ self._centred_t
        sq *= -2.0
        sq += self._norms
        sq += np.einsum("ij,ij->i", x, x)[:, None]
        np.maximum(sq, 0.0, out=sq)
        sq *= -self.hyper.inv_lengthscale_sq
        np.exp(sq, out=sq)
        sq *= self.hyper.signal_var
        return sq

    def mean(self, x) -> np.ndarray:
        return self.cross(x) @ self.alpha + self.prior_mean

    __call__ = mean

    def variance(self, x) -> np.ndarray:
        kx = self.cross(x)
        v = solve_triangular(self.chol, kx.T, lower=True, check_finite=False)
        return np.maximum(self.hyper.signal_var - np.sum(v * v, axis=0), 0.0)

    def gradient(self, x) -> np.ndarray:
        """Gradient of the posterior mean, one row per input point."""
        x = self._check(x)
        w = self.cross(x) * self.alpha  # (M, N)
        diff_sum = x * w.sum(axis=1, keepdims=True) - w @ self.points
        return -2.0 * self.hyper.inv_lengthscale_sq * diff_sum


def predict_mean(m: KernelModel, x) -> float:
    return float(m.mean(x)[0])


def predict_variance(m: KernelModel, x) -> float:
    return float(m.variance(x)[0])


def mean_gradient(m: KernelModel, x) -> np.ndarray:
    return m.gradient(x)[0]


@dataclass(frozen=True)
class FitConfig:
    """Multi-start marginal-likelihood search settings.

    Bounds are relative: ``signal_var`` in ``signal_bounds * var(f)``,
    ``inv_lengthscale_sq`` in ``lengthscale_bounds / diameter**2`` and
    ``noise_var`` in ``[1e-10 * range(f)**2, var(f)]``.
    ``spacing_cap`` additionally caps ``inv_lengthscale_sq`` at
    ``spacing_cap / h**2`` with ``h`` the median nearest-neighbour distance
    of the training points; set it to ``None`` to disable the cap.
    """

    starts: int = 8
    diameter: float = 1.0
    signal_bounds: tuple = (1e-4, 1e4)
    lengthscale_bounds: tuple = (1.0, 1e6)
    maxiter: int = 100
    spacing_cap: float | None = 1.0
    warm_start: Hyperparameters | None = None


def _value_scales(y):
    var = float(np.var(y))
    scale = var if var > 0 else float(np.mean(y * y)) or 1.0
    spread = float(np.ptp(y)) ** 2 or scale
    return scale, spread


def fit_bounds(values, config: FitConfig = FitConfig()) -> np.ndarray:
    """Log-space box for ``(signal_var, inv_lengthscale_sq, noise_var)``."""
    y = np.asarray(values, dtype=float)
    scale, spread = _value_scales(y)
    floor = NOISE_FLOOR_REL * spread
    d2 = config.diameter ** 2
    lo = [config.signal_bounds[0] * scale, config.lengthscale_bounds[0] / d2, floor]
    hi = [config.signal_bounds[1] * scale, config.lengthscale_bounds[1] / d2, max(scale, floor)]
    return np.log(np.column_stack([lo, hi]))


def fit(points, values, search: FitConfig = FitConfig(), rng=None, prior_mean: float = 0.0) -> KernelModel:
    """Fit hyperparameters by multi-start marginal-likelihood ascent."""
    x, y0 = _prep(points, values)
    if len(y0) < 2:
        raise DomainError("fit needs at least 2 points")
    y = y0 - prior_mean
    rng = np.random.default_rng(rng)
    bounds = fit_bounds(y, search)
    sqd = _sqdist(x, x)

    if not np.any(y):
        # zero data: any hyperparameters give alpha = 0
        h = Hyperparameters.from_log(bounds[:, 0])
        return KernelModel.build(h, x, y0, prior_mean)

    def objective(theta):
        h = Hyperparameters.from_log(theta)
        try:
            lml, grad = _lml_and_grad(h, sqd, y)
        except IllConditionedError:
            return 1e300, np.zeros(3)
        return -lml, -grad

    nn = np.sqrt(np.partition(sqd + np.diag(np.full(len(y), np.inf)), 0, axis=1)[:, 0])
    spacing = float(np.median(nn))
    if search.spacing_cap is not None and spacing > 0:
        # wiggles shorter than the sample spacing cannot be identified from the data;
        # without the cap the likelihood explains sparse data as white noise around the mean
        cap = math.log(search.spacing_cap / spacing**2)
        bounds[1, 1] = max(bounds[1, 0], min(bounds[1, 1], cap))
    starts = []
    if search.warm_start is not None:
        starts.append(np.clip(search.warm_start.to_log(), bounds[:, 0], bounds[:, 1]))
    guess_s2 = 1.0 / max(4.0 * float(np.median(nn)) ** 2, 1e-300)
    scale, _ = _value_scales(y)
    heuristic = np.log([scale, guess_s2, NOISE_FLOOR_REL * scale * 100])
    starts.append(np.clip(heuristic, bounds[:, 0], bounds[:, 1]))
    while len(starts) < max(search.starts, 1):
        starts.append(bounds[:, 0] + rng.random(3) * (bounds[:, 1] - bounds[:, 0]))

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": search.maxiter})
        val = float(res.fun)
        if val < best_val and val < 1e299:
            best_theta, best_val = res.x, val
    if best_theta is None:
        raise FitError("all hyperparameter starts failed to factorize")
    try:
        return KernelModel.build(Hyperparameters.from_log(best_theta), x, y0, prior_mean)
    except IllConditionedError as exc:
        raise FitError(str(exc)) from exc


@dataclass(frozen=True)
class MinimizeReport:
    argmin: np.ndarray
    value: float
    starts_used: int
    converged: bool


def minimize_model(
    m: KernelModel,
    d: ConstrainedDomain,
    candidates,
    extra_points=None,
    starts: int = 3,
    max_iter: int = 40,
    gtol: float = 1e-8,
) -> MinimizeReport:
    """Minimize the posterior mean over ``d``.

    All candidates (plus any ``extra_points`` lying in ``d``) are scored; the
    best ``starts`` of them seed a projected gradient descent with Armijo
    backtracking whose iterates are clipped to the box and must stay members
    of ``d``.  Ties between seeds go to the lowest index.
    """
    pool = np.asarray(candidates, dtype=float).reshape(-1, m.dim)
    if extra_points is not None and len(extra_points):
        extra = np.asarray(extra_points, dtype=float).reshape(-1, m.dim)
        pool = np.vstack([pool, extra[d.contains(extra)]])
    if len(pool) == 0:
        raise DomainError("minimize_model needs at least one candidate")
    scores = m.mean(pool)
    order = np.argsort(scores, kind="stable")[:starts]
    x = pool[order].copy()
    fx = scores[order].copy()
    box = d.box
    max_move = 0.25 * box.diameter
    active = np.ones(len(x), dtype=bool)
    done = np.zeros(len(x), dtype=bool)

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g = m.gradient(x[idx])
        gn = np.linalg.norm(g, axis=1)
        flat = gn <= gtol * max(1.0, float(np.max(np.abs(fx))))
        done[idx[flat]] = True
        active[idx[flat]] = False
        keep = ~flat
        idx, g, gn = idx[keep], g[keep], gn[keep]
        t = max_move / gn
        pending = np.arange(idx.size)
        for _ in range(40):
            if pending.size == 0:
                break
            rows = idx[pending]
            y = np.clip(x[rows] - t[pending, None] * g[pending], box.lower, box.upper)
            fy = m.mean(y)
            decrease = np.einsum("ij,ij->i", g[pending], x[rows] - y)
            ok = (fy <= fx[rows] - 1e-4 * decrease) & (decrease > 0)
            if ok.any():
                ok[ok] = d.contains(y[ok])
            x[rows[ok]] = y[ok]
            fx[rows[ok]] = fy[ok]
            pending = pending[~ok]
            t[pending] *= 0.5
        # no acceptable step even at a tiny length: projected stationary point
        done[idx[pending]] = True
        active[idx[pending]] = False

    best = int(np.argmin(fx))
    return MinimizeReport(x[best].copy(), float(m.mean(x[best])[0]), len(x), bool(done[best]))
