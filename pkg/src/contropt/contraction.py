"""The contraction method: shrink the search region through surrogate sublevel sets.

Each outer level ``k`` keeps sampling the current region ``D_k`` until the
cross-validated surrogate error is small compared to the gap between the
percentile threshold ``u_k`` and the best sampled value.  The region is then
replaced by ``{x in D_k : model(x) <= u_k}`` and only samples inside it are
kept.

All geometry runs in normalized coordinates: the user box is mapped affinely
onto a centred cube of Euclidean diameter 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .error_estimation import ErrorStats, chebyshev_bound, cv_error_stats, default_folds
from .errors import DomainEmptyError, DomainError, EvaluationError
from .geometry import (
    BoxDomain,
    ConstrainedDomain,
    SampleSet,
    WalkParams,
    generate_candidates,
    low_discrepancy_points,
    select_farthest,
    uniform_members,
)
from .surrogate import FitConfig, KernelModel, fit, minimize_model

log = logging.getLogger(__name__)

TERMINATIONS = ("completed", "budget", "noncontractible-cap", "domain-empty")


def percentile(values, c: float) -> float:
    """Linear-interpolation percentile (position ``c/100 * (N-1)`` in sorted order)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise DomainError("percentile of an empty sequence")
    if not 0.0 <= c <= 100.0:
        raise DomainError(f"percentage {c} outside [0, 100]")
    return float(np.percentile(v, c))


def error_gate(stats: ErrorStats, t: float, omega: float, u: float, f_min: float) -> bool:
    """True when ``|mu| + t*sigma <= omega * (u - f_min)``."""
    if u < f_min:
        raise DomainError(f"threshold {u} below the sample minimum {f_min}")
    return chebyshev_bound(stats, t) <= omega * (u - f_min)


DEDUP_FRACTION = 1e-2
# box draws spent looking for members of a level that holds no sample
EMPTY_PROBES = 2_000_000


@dataclass(frozen=True)
class RunConfig:
    """Settings of one contraction run.

    ``c`` and ``t`` are either constants or length-``K`` schedules; with
    ``t_ramp`` the confidence grows linearly as ``t * k / K``.
    """

    K: int = 10
    m: int = 2
    min_iter_inner: int = 1
    omega: float = 1.0
    c: float | tuple = 50.0
    t: float | tuple = 2.0
    t_ramp: bool = False
    walk: WalkParams = field(default_factory=WalkParams)
    cv_folds: int | None = None
    max_iter_inner: int = 100
    seed: int = 0
    budget: int | None = None
    fit_starts: int = 3
    minimize_starts: int = 3
    factor_probes: int = 0

    def __post_init__(self):
        if self.K < 1 or self.m < 1 or self.min_iter_inner < 1:
            raise DomainError("K, m and min_iter_inner must be >= 1")
        if not 0.0 < self.omega <= 1.0:
            raise DomainError("omega must lie in (0, 1]")
        if self.max_iter_inner < self.min_iter_inner:
            raise DomainError("max_iter_inner must be >= min_iter_inner")
        for name in ("c", "t"):
            val = getattr(self, name)
            if not np.isscalar(val):
                val = tuple(float(v) for v in val)
                if len(val) != self.K:
                    raise DomainError(f"{name} schedule must have length K={self.K}")
                object.__setattr__(self, name, val)
        if any(not 0.0 < c < 100.0 for c in self.c_sched):
            raise DomainError("percentages must lie in (0, 100)")
        if self.budget is not None and self.budget < 1:
            raise DomainError("budget must be >= 1")

    @property
    def c_sched(self) -> tuple:
        return self.c if isinstance(self.c, tuple) else (float(self.c),) * self.K

    @property
    def t_sched(self) -> tuple:
        if isinstance(self.t, tuple):
            return self.t
        if self.t_ramp:
            return tuple(float(self.t) * k / self.K for k in range(self.K))
        return (float(self.t),) * self.K

    def to_dict(self) -> dict:
        out = {
            "K": self.K, "m": self.m, "min_iter_inner": self.min_iter_inner,
            "omega": self.omega, "c": self.c, "t": self.t, "t_ramp": self.t_ramp,
            "n_c": self.walk.n_c, "T": self.walk.T, "a": self.walk.a, "j_max": self.walk.j_max,
            "cv_folds": self.cv_folds, "max_iter_inner": self.max_iter_inner,
            "seed": self.seed, "budget": self.budget, "fit_starts": self.fit_starts,
            "minimize_starts": self.minimize_starts, "factor_probes": self.factor_probes,
        }
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        walk_keys = {"n_c", "T", "a", "j_max"}
        walk = WalkParams(**{k: data.pop(k) for k in list(data) if k in walk_keys})
        unknown = set(data) - {f for f in cls.__dataclass_fields__ if f != "walk"}
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(walk=walk, **data)


@dataclass(frozen=True, eq=False)
class ContractionState:
    domain: ConstrainedDomain
    samples: SampleSet
    f_best: float
    n_total: int
    k: int
    forced_incumbent: bool = False


@dataclass(frozen=True)
class ContractionRecord:
    k: int
    model_size: int
    threshold: float
    bound: float
    inner_iters: int
    f_best_after: float
    n_total: int
    cv_mean: float
    cv_std: float
    t: float
    a_star: float
    retained: int
    forced_incumbent: bool
    est_factor: float | None = None
    q_k: float | None = None
    qk_factor: float | None = None


class TracePoint(NamedTuple):
    eval_index: int
    f_best: float
    level: int
    model_size: int


@dataclass(frozen=True, eq=False)
class RunResult:
    """Outcome of :func:`run`.

    ``domain`` lives in normalized coordinates; use :meth:`contains` to test
    points given in the original box coordinates.
    """

    records: list
    trace: list
    samples: SampleSet
    domain: ConstrainedDomain
    box: BoxDomain
    termination: str
    x_best: np.ndarray
    f_best: float
    n_total: int

    def contains(self, x, level: int | None = None) -> np.ndarray:
        d = self.domain if level is None else self.domain.at_level(level)
        z = self.box.to_unit(np.atleast_2d(np.asarray(x, dtype=float)))
        return d.contains(z)

    def sample_points(self) -> np.ndarray:
        return self.box.from_unit(self.samples.points)


def apply_contraction(state: ContractionState, model, u: float) -> ContractionState:
    """Append ``model <= u`` to the constraint chain and drop samples outside it.

    The incumbent (lowest value) sample is always kept; ``forced_incumbent``
    records whether the model would otherwise have dropped it.
    """
    s = state.samples
    keep = np.asarray(model(s.points), dtype=float) <= u
    forced = False
    if len(s):
        best = int(np.argmin(s.values))
        if not keep[best]:
            keep[best] = True
            forced = True
    return ContractionState(
        domain=state.domain.restrict(model, u),
        samples=s.subset(keep),
        f_best=state.f_best,
        n_total=state.n_total,
        k=state.k + 1,
        forced_incumbent=forced,
    )


class QkDiagnostic(NamedTuple):
    q: float
    factor: float
    flag: str  # "ok", "zero-margin" or "degenerate-range"


def diagnostic_qk(values, a_star: float, u: float, omega: float = 1.0) -> QkDiagnostic:
    """Largest ``q`` with ``u - min(A*, f*) <= (f** - f*) / (1 + q)`` and the rate ``(1+w)^2/(1+q)``."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return QkDiagnostic(math.nan, math.nan, "degenerate-range")
    margin = u - min(a_star, lo)
    if margin <= 0:
        return QkDiagnostic(math.inf, 0.0, "zero-margin")
    q = (hi - lo) / margin - 1.0
    return QkDiagnostic(q, (1.0 + omega) ** 2 / (1.0 + q), "ok")


def estimate_contraction_factor(
    before: ConstrainedDomain, after: ConstrainedDomain, probes: int, rng, batch: int = 200_000
) -> float:
    """Monte-Carlo volume ratio ``|after| / |before|`` from uniform box probes.

    Returns NaN when no probe lands in ``before``.
    """
    if probes < 1:
        raise DomainError("probes must be >= 1")
    rng = np.random.default_rng(rng)
    n_before = n_after = 0
    left = probes
    while left > 0:
        x = before.box.uniform(min(batch, left), rng)
        left -= len(x)
        inside = x[before.contains(x)]
        n_before += len(inside)
        if len(inside):
            n_after += int(after.contains(inside).sum())
    if n_before == 0:
        return math.nan
    return n_after / n_before


class _Stop(Exception):
    def __init__(self, reason):
        self.reason = reason


class _Runner:
    def __init__(self, config: RunConfig, objective: Callable, box: BoxDomain):
        self.cfg = config
        self.objective = objective
        self.box = box
        seq = np.random.SeedSequence(config.seed)
        walk_ss, fit_ss, cv_ss, diag_ss, boot_ss = seq.spawn(5)
        self.rng_walk = np.random.default_rng(walk_ss)
        self.rng_fit = np.random.default_rng(fit_ss)
        self.rng_cv = np.random.default_rng(cv_ss)
        self.rng_diag = np.random.default_rng(diag_ss)
        self.boot_seed = int(boot_ss.generate_state(1)[0])
        self.state = ContractionState(
            ConstrainedDomain(box.unit_box()), SampleSet.empty(box.dim), math.inf, 0, 0
        )
        self.records: list[ContractionRecord] = []
        self.trace: list[TracePoint] = []
        self.model_size = 0
        self.x_best = None

    def evaluate(self, z: np.ndarray) -> None:
        """Evaluate the objective at normalized points, one callback each."""
        cfg, st = self.cfg, self.state
        pts, vals = [], []
        n_total, f_best = st.n_total, st.f_best
        stop = None
        for zi in np.atleast_2d(z):
            if cfg.budget is not None and n_total >= cfg.budget:
                stop = "budget"
                break
            x = self.box.from_unit(zi)
            val = float(self.objective(x))
            if not math.isfinite(val):
                self.state = replace(st, n_total=n_total + 1, f_best=f_best)
                raise EvaluationError(f"objective returned {val} at {x.tolist()}")
            n_total += 1
            if val < f_best:
                f_best = val
                self.x_best = x
            pts.append(zi)
            vals.append(val)
            self.trace.append(TracePoint(n_total, f_best, st.k, self.model_size))
        if pts:
            st.samples.append(np.array(pts), np.array(vals))
        self.state = replace(st, n_total=n_total, f_best=f_best)
        if stop:
            raise _Stop(stop)

    def new_points(self):
        cfg, st = self.cfg, self.state
        if len(st.samples) == 0:
            return low_discrepancy_points(st.domain.box, max(cfg.m, 2), self.boot_seed), None
        cands = generate_candidates(st.samples, cfg.walk, st.domain, self.rng_walk)
        if len(cands) == 0:
            # only a forced incumbent outside the new level survived; walks need member seeds
            try:
                cands = uniform_members(st.domain, cfg.walk.n_c * max(cfg.m, 2), self.rng_walk,
                                        max_draws=EMPTY_PROBES)
            except DomainEmptyError:
                raise _Stop("domain-empty") from None
        return select_farthest(st.samples, cands, cfg.m).points, cands

    def inner_step(self, k: int, it: int):
        cfg = self.cfg
        new, cands = self.new_points()
        self.evaluate(new)
        s = self.state.samples
        if len(s) < 2:
            return None
        offset = float(np.mean(s.values))
        model = fit(s.points, s.values, FitConfig(starts=cfg.fit_starts, warm_start=self.prev_hyper),
                    self.rng_fit, prior_mean=offset)
        self.prev_hyper = model.hyper
        self.model_size = len(s)
        folds = cfg.cv_folds if cfg.cv_folds is not None else default_folds(len(s))
        stats = cv_error_stats(s.points, s.values, model.hyper, min(folds, len(s)), self.rng_cv, offset)
        if cands is None:
            cands = generate_candidates(s, cfg.walk, self.state.domain, self.rng_walk)
        report = minimize_model(model, self.state.domain, cands, extra_points=s.points,
                                starts=cfg.minimize_starts)
        a = report.argmin.reshape(1, -1)
        # a near-duplicate adds no information and wrecks the conditioning of the kernel matrix
        if cKDTree(s.points).query(a)[0][0] > DEDUP_FRACTION * float(np.median(s.nn_dist)):
            self.evaluate(a)
        s = self.state.samples
        u = percentile(s.values, cfg.c_sched[k])
        f_min = float(s.values.min())
        t = cfg.t_sched[k]
        # a smoothing model can sit above u everywhere; cutting then would leave an empty level
        passed = error_gate(stats, t, cfg.omega, u, f_min) and report.value <= u
        log.debug("k=%d it=%d N=%d u=%.6g f*=%.6g bound=%.3g gate=%s",
                  k, it, len(s), u, f_min, chebyshev_bound(stats, t), passed)
        if not (passed and it >= cfg.min_iter_inner):
            return None
        return model, stats, report, u, t

    def contract(self, k, it, model, stats, report, u, t):
        cfg = self.cfg
        before = self.state
        qk = diagnostic_qk(before.samples.values, report.value, u, cfg.omega)
        after = apply_contraction(before, model, u)
        est = None
        if cfg.factor_probes:
            est = estimate_contraction_factor(before.domain, after.domain, cfg.factor_probes, self.rng_diag)
        self.state = after
        self.records.append(ContractionRecord(
            k=k, model_size=len(model.values), threshold=u, bound=chebyshev_bound(stats, t),
            inner_iters=it, f_best_after=after.f_best, n_total=after.n_total,
            cv_mean=stats.mean, cv_std=stats.std, t=t, a_star=report.value,
            retained=len(after.samples), forced_incumbent=after.forced_incumbent,
            est_factor=est, q_k=qk.q, qk_factor=qk.factor,
        ))

    def run(self) -> RunResult:
        cfg = self.cfg
        self.prev_hyper = None
        reason = "completed"
        try:
            for k in range(cfg.K):
                it = 0
                while True:
                    it += 1
                    if it > cfg.max_iter_inner:
                        raise _Stop("noncontractible-cap")
                    step = self.inner_step(k, it)
                    if step is not None:
                        self.contract(k, it, *step)
                        break
        except _Stop as stop:
            reason = stop.reason
        except EvaluationError as exc:
            exc.partial = self.result("aborted")
            raise
        return self.result(reason)

    def result(self, reason) -> RunResult:
        st = self.state
        x_best = self.x_best if self.x_best is not None else np.full(self.box.dim, np.nan)
        return RunResult(
            records=list(self.records), trace=list(self.trace), samples=st.samples.copy(),
            domain=st.domain, box=self.box, termination=reason, x_best=np.array(x_best),
            f_best=st.f_best, n_total=st.n_total,
        )


def run(config: RunConfig, objective: Callable, box: BoxDomain) -> RunResult:
    """Minimize ``objective`` over ``box`` with the contraction method."""
    if not isinstance(box, BoxDomain):
        box = BoxDomain(*box)
    return _Runner(config, objective, box).run()
