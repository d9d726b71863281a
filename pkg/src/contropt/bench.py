"""Baselines and the multi-seed benchmark harness."""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .contraction import RunConfig, RunResult, run
from .errors import DomainError, EvaluationError
from .geometry import BoxDomain
from .objectives import ObjectiveSpec

GRID_CAP = 1_000_000
THREADS_ENV = "CONTROPT_THREADS"


def _box(box) -> BoxDomain:
    return box if isinstance(box, BoxDomain) else BoxDomain(*box)


def random_search_baseline(objective, box, budget: int, rng) -> np.ndarray:
    """Uniform sampling of the box; returns the running best after each evaluation."""
    if budget < 1:
        raise DomainError("budget must be >= 1")
    box = _box(box)
    x = box.uniform(budget, np.random.default_rng(rng))
    values = np.array([float(objective(xi)) for xi in x])
    return np.minimum.accumulate(values)


def grid_points(box, nodes_per_dim: int, cap: int = GRID_CAP) -> np.ndarray:
    """Equispaced grid in row-major order (last coordinate varies fastest)."""
    box = _box(box)
    if nodes_per_dim < 2:
        raise DomainError("nodes_per_dim must be >= 2")
    total = nodes_per_dim**box.dim
    if total > cap:
        raise DomainError(f"grid of {total} nodes exceeds the cap of {cap}")
    axes = [np.linspace(lo, hi, nodes_per_dim) for lo, hi in zip(box.lower, box.upper)]
    return np.array(list(itertools.product(*axes)))


def grid_search_baseline(objective, box, nodes_per_dim: int, cap: int = GRID_CAP) -> np.ndarray:
    """Evaluate the full grid; returns the running best after each evaluation."""
    values = np.array([float(objective(x)) for x in grid_points(box, nodes_per_dim, cap)])
    return np.minimum.accumulate(values)


@dataclass(frozen=True)
class RunSummary:
    """One benchmark repeat, reduced to plain data."""

    seed: int
    trace: list
    records: list
    termination: str
    aborted: bool
    f_best: float
    n_total: int
    error: str | None = None

    @classmethod
    def from_result(cls, seed: int, result: RunResult, error: str | None = None) -> "RunSummary":
        return cls(seed, list(result.trace), list(result.records), result.termination,
                   error is not None, float(result.f_best), int(result.n_total), error)


@dataclass(frozen=True)
class Aggregate:
    """Statistics of a per-evaluation quantity across runs on a shared axis."""

    eval_index: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    mean: np.ndarray


@dataclass(frozen=True, eq=False)
class BenchmarkReport:
    """Per-run traces plus gap statistics against the evaluation count.

    ``aggregate`` summarizes the optimality gap when the objective's minimum is
    known and the raw best value otherwise.
    """

    problem: str
    f_star: float | None
    config: dict
    seeds: tuple
    runs: list
    aggregate: Aggregate
    baselines: dict = field(default_factory=dict)

    @property
    def final_gaps(self) -> np.ndarray:
        ref = 0.0 if self.f_star is None else self.f_star
        return np.array([r.f_best - ref for r in self.runs])

    @property
    def median_final_gap(self) -> float:
        return float(np.median(self.final_gaps))


def step_values(eval_index, values, axis) -> np.ndarray:
    """Right-continuous step interpolation; the last value is carried forward.

    Points of ``axis`` before the first evaluation get NaN.
    """
    eval_index = np.asarray(eval_index)
    values = np.asarray(values, dtype=float)
    pos = np.searchsorted(eval_index, axis, side="right") - 1
    out = np.where(pos >= 0, values[np.clip(pos, 0, None)], np.nan)
    return out


def aggregate_traces(traces, f_star: float | None = None) -> Aggregate:
    """Align ``(eval_index, f_best)`` traces on ``1..max`` and take quantiles.

    A run that ended early contributes its last value to every later index.
    """
    ref = 0.0 if f_star is None else f_star
    length = max((int(idx[-1]) for idx, _ in traces if len(idx)), default=0)
    axis = np.arange(1, length + 1)
    if length == 0:
        empty = np.empty(0)
        return Aggregate(axis, empty, empty, empty, empty)
    table = np.vstack([step_values(idx, vals, axis) - ref for idx, vals in traces])
    q25, med, q75 = np.nanpercentile(table, [25, 50, 75], axis=0)
    return Aggregate(axis, med, q25, q75, np.nanmean(table, axis=0))


def _one_run(job):
    spec, config, seed = job
    cfg = RunConfig.from_dict({**config.to_dict(), "seed": seed})
    try:
        return RunSummary.from_result(seed, run(cfg, spec.func, spec.box))
    except EvaluationError as exc:
        if exc.partial is None:
            raise
        return RunSummary.from_result(seed, exc.partial, str(exc))


def worker_count(repeats: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise DomainError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(cap, repeats))


def run_benchmark(spec: ObjectiveSpec, config: RunConfig, repeats: int, seeds=None,
                  baselines=()) -> BenchmarkReport:
    """Run the method ``repeats`` times and aggregate the traces.

    ``seeds`` defaults to ``config.seed + i``. ``baselines`` may name
    ``"random"`` (same budget as the longest run, one draw per seed) and
    ``"grid"`` (largest grid not exceeding that budget).
    """
    if repeats < 1:
        raise DomainError("repeats must be >= 1")
    seeds = tuple(range(config.seed, config.seed + repeats)) if seeds is None else tuple(seeds)
    if len(seeds) != repeats:
        raise DomainError(f"got {len(seeds)} seeds for {repeats} repeats")
    unknown = set(baselines) - {"random", "grid"}
    if unknown:
        raise DomainError(f"unknown baselines: {sorted(unknown)}")
    jobs = [(spec, config, s) for s in seeds]
    workers = worker_count(repeats)
    if workers == 1:
        runs = [_one_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_one_run, jobs))
    traces = [([p.eval_index for p in r.trace], [p.f_best for p in r.trace]) for r in runs]
    agg = aggregate_traces(traces, spec.f_star)
    extra = {}
    budget = max((r.n_total for r in runs), default=0)
    if "random" in baselines and budget:
        rs = [random_search_baseline(spec.func, spec.box, budget, s) for s in seeds]
        extra["random"] = aggregate_traces([(np.arange(1, budget + 1), t) for t in rs], spec.f_star)
    if "grid" in baselines and budget:
        nodes = max(2, int(math.floor(budget ** (1.0 / spec.dim) + 1e-9)))
        g = grid_search_baseline(spec.func, spec.box, nodes)
        extra["grid"] = aggregate_traces([(np.arange(1, len(g) + 1), g)], spec.f_star)
    return BenchmarkReport(spec.name, spec.f_star, config.to_dict(), seeds, runs, agg, extra)
