"""Domains, sample sets and quasi-uniform sampling inside implicit regions.

A :class:`ConstrainedDomain` is a box intersected with an ordered chain of
sublevel constraints ``model(x) <= u``.  New samples are produced in two
stages: reflected random walks started from the existing points fill the
domain with a dense candidate cloud, and a greedy farthest-point rule picks
the few candidates that best cover the gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from .errors import DomainEmptyError, DomainError

Model = Callable[[np.ndarray], np.ndarray]


def _as_2d(points, dim=None):
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if dim is None or arr.size == dim else arr.reshape(-1, 1)
    if dim is not None and arr.shape[1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True, eq=False)
class BoxDomain:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.shape != upper.shape or lower.ndim != 1 or lower.size < 1:
            raise DomainError("lower and upper must be 1-D vectors of equal length")
        if not np.all(lower < upper):
            raise DomainError("box requires lower[i] < upper[i] in every coordinate")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, points) -> np.ndarray:
        x = _as_2d(points, self.dim)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def uniform(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return self.lower + rng.random((count, self.dim)) * self.width

    # Affine map onto the centred cube of Euclidean diameter 1.

    def unit_box(self) -> "BoxDomain":
        half = 0.5 / math.sqrt(self.dim)
        return BoxDomain(np.full(self.dim, -half), np.full(self.dim, half))

    def to_unit(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        return (x - self.center) / (self.width * math.sqrt(self.dim))

    def from_unit(self, points) -> np.ndarray:
        z = np.asarray(points, dtype=float)
        x = self.center + z * (self.width * math.sqrt(self.dim))
        return np.clip(x, self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class ConstrainedDomain:
    """Box plus an ordered chain of ``(model, threshold)`` sublevel constraints.

    ``model`` is any callable mapping an ``(M, n)`` array to ``M`` values.
    A point is a member when it lies in the box and ``model(x) <= u`` for
    every constraint.  ``level`` is the number of constraints.
    """

    box: BoxDomain
    constraints: tuple = ()

    @property
    def level(self) -> int:
        return len(self.constraints)

    @property
    def dim(self) -> int:
        return self.box.dim

    def restrict(self, model: Model, threshold: float) -> "ConstrainedDomain":
        """Return the sub-domain with one more constraint appended."""
        return ConstrainedDomain(self.box, self.constraints + ((model, float(threshold)),))

    def at_level(self, k: int) -> "ConstrainedDomain":
        if not 0 <= k <= self.level:
            raise DomainError(f"level {k} outside 0..{self.level}")
        return ConstrainedDomain(self.box, self.constraints[:k])

    def contains(self, points) -> np.ndarray:
        x = _as_2d(points, self.dim)
        inside = self.box.contains(x)
        # newest constraint is usually the tightest, so test it first
        for model, threshold in reversed(self.constraints):
            idx = np.flatnonzero(inside)
            if idx.size == 0:
                break
            inside[idx] = np.asarray(model(x[idx]), dtype=float) <= threshold
        return inside

    def contains_point(self, x) -> bool:
        return bool(self.contains(np.asarray(x, dtype=float).reshape(1, -1))[0])


def unconstrained(box: BoxDomain) -> ConstrainedDomain:
    return ConstrainedDomain(box)


def _nn_distances(points: np.ndarray) -> np.ndarray:
    n = len(points)
    if n < 2:
        return np.full(n, np.inf)
    dist = cdist(points, points)
    np.fill_diagonal(dist, np.inf)
    return dist.min(axis=1)


class SampleSet:
    """Evaluated (or pending) sample points with cached nearest-neighbour distances.

    Supports a single writer appending new points; ``nn_dist`` is updated
    incrementally so it always equals the exact nearest-neighbour distance.
    """

    def __init__(self, points, values=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        self.points = pts.copy()
        if values is None:
            self.values = np.full(len(pts), np.nan)
        else:
            self.values = np.asarray(values, dtype=float).reshape(-1).copy()
            if self.values.size != len(pts):
                raise DomainError("values and points must have the same length")
        self.nn_dist = _nn_distances(self.points)

    @classmethod
    def empty(cls, dim: int) -> "SampleSet":
        return cls(np.empty((0, dim)))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, points, values=None) -> None:
        new = _as_2d(points, self.dim)
        vals = np.full(len(new), np.nan) if values is None else np.asarray(values, float).reshape(-1)
        if len(self.points):
            cross = cdist(new, self.points)
            self.nn_dist = np.minimum(self.nn_dist, cross.min(axis=0))
            new_nn = cross.min(axis=1)
        else:
            new_nn = np.full(len(new), np.inf)
        if len(new) > 1:
            own = _nn_distances(new)
            new_nn = np.minimum(new_nn, own)
        self.points = np.vstack([self.points, new])
        self.values = np.concatenate([self.values, vals])
        self.nn_dist = np.concatenate([self.nn_dist, new_nn])

    def subset(self, mask) -> "SampleSet":
        mask = np.asarray(mask)
        return SampleSet(self.points[mask], self.values[mask])

    def copy(self) -> "SampleSet":
        return self.subset(np.ones(len(self), dtype=bool))


@dataclass(frozen=True)
class WalkParams:
    """Reflected random walk settings.

    n_c: candidates generated per existing point.
    T: number of walk steps.
    a: reflection reduction factor, ``0 < a < 1``.
    j_max: largest reflection exponent tried before a step is abandoned.
    """

    n_c: int = 10
    T: int = 10
    a: float = 0.5
    j_max: int = 50

    def __post_init__(self):
        if self.n_c < 1 or self.T < 1 or self.j_max < 1:
            raise DomainError("n_c, T and j_max must be >= 1")
        if not 0.0 < self.a < 1.0:
            raise DomainError("reflection factor a must lie in (0, 1)")


def separation_distance(s) -> float:
    """Half the smallest pairwise distance of the sample set."""
    nn = _nn_of(s)
    return 0.5 * float(nn.min())


def max_nn_distance(s) -> float:
    """Largest nearest-neighbour distance, used to scale the walk step."""
    nn = _nn_of(s)
    return float(nn.max())


def _nn_of(s) -> np.ndarray:
    if isinstance(s, SampleSet):
        if len(s) < 2:
            raise DomainError("need at least 2 points")
        return s.nn_dist
    pts = np.asarray(s, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if len(pts) < 2:
        raise DomainError("need at least 2 points")
    return _nn_distances(pts)


def uniform_members(
    d: ConstrainedDomain,
    count: int,
    rng: np.random.Generator,
    max_draws: int = 50_000_000,
    batch: int = 100_000,
) -> np.ndarray:
    """Draw ``count`` uniform members of ``d`` by rejection from its box."""
    found = []
    have = 0
    drawn = 0
    while have < count:
        if drawn >= max_draws:
            if have == 0:
                raise DomainEmptyError(f"no member of the domain found in {drawn} draws")
            raise DomainEmptyError(f"only {have} of {count} members found in {drawn} draws")
        x = d.box.uniform(batch, rng)
        drawn += batch
        hit = x[d.contains(x)]
        found.append(hit)
        have += len(hit)
    return np.vstack(found)[:count]


def fill_distance_probe(s, d: ConstrainedDomain, probes: int, seed) -> float:
    """Monte-Carlo lower estimate of the fill distance of ``s`` over ``d``.

    The probes are ``uniform_members(d, probes, default_rng(seed))``, so a
    sample set built from the same seed yields exactly zero.
    """
    if probes < 1:
        raise DomainError("probes must be >= 1")
    pts = s.points if isinstance(s, SampleSet) else _as_2d(s, d.dim)
    if len(pts) == 0:
        raise DomainError("sample set is empty")
    rng = np.random.default_rng(seed)
    x = uniform_members(d, probes, rng)
    dist, _ = cKDTree(pts).query(x)
    return float(dist.max())


class WalkOutcome(NamedTuple):
    endpoints: np.ndarray
    abandoned: int


def reflected_walks(
    starts: np.ndarray,
    sigma,
    walk: WalkParams,
    d: ConstrainedDomain,
    rng: np.random.Generator,
) -> WalkOutcome:
    """Run one reflected random walk per row of ``starts`` in parallel.

    A step leaving ``d`` is retried as ``Z - (-a)**j * sigma*W + a**(j+1) * sigma*W'``
    for ``j = 0, 1, ..., j_max``; if none of these is a member the walker
    stays put for that step.
    """
    rng = np.random.default_rng(rng)
    z = np.array(starts, dtype=float, copy=True)
    m, n = z.shape
    sig = np.broadcast_to(np.asarray(sigma, dtype=float).reshape(-1, 1), (m, 1))
    abandoned = 0
    for _ in range(walk.T):
        w = rng.standard_normal((m, n)) * sig
        w2 = rng.standard_normal((m, n)) * sig
        prop = z + w
        ok = d.contains(prop)
        z[ok] = prop[ok]
        pending = np.flatnonzero(~ok)
        for j in range(walk.j_max + 1):
            if pending.size == 0:
                break
            prop = z[pending] - (-walk.a) ** j * w[pending] + walk.a ** (j + 1) * w2[pending]
            ok = d.contains(prop)
            z[pending[ok]] = prop[ok]
            pending = pending[~ok]
        abandoned += pending.size
    return WalkOutcome(z, abandoned)


def rrw_endpoint(start, sigma: float, walk: WalkParams, d: ConstrainedDomain, rng) -> np.ndarray:
    """Endpoint of a single reflected random walk started at ``start``."""
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    start = np.asarray(start, dtype=float).reshape(1, -1)
    if not d.contains(start)[0]:
        raise DomainError("walk must start inside the domain")
    return reflected_walks(start, sigma, walk, d, rng).endpoints[0]


def walk_sigma(s: SampleSet, walk: WalkParams, d: ConstrainedDomain) -> float:
    """Step size ``d_chi / sqrt(T)``; falls back to the box diameter for N < 2."""
    if len(s) >= 2:
        return max_nn_distance(s) / math.sqrt(walk.T)
    return d.box.diameter / math.sqrt(walk.T)


def generate_candidates(
    s: SampleSet,
    walk: WalkParams,
    d: ConstrainedDomain,
    rng: np.random.Generator,
    sigma: float | None = None,
) -> np.ndarray:
    """Candidate cloud of ``n_c`` walk endpoints per seed point of ``s``.

    Seeds that are not members of ``d`` are skipped, so the result has
    ``n_c * (number of member seeds)`` rows.
    """
    if len(s) == 0:
        raise DomainError("cannot generate candidates from an empty sample set")
    if sigma is None:
        sigma = walk_sigma(s, walk, d)
    seeds = s.points[d.contains(s.points)]
    starts = np.repeat(seeds, walk.n_c, axis=0)
    return reflected_walks(starts, sigma, walk, d, rng).endpoints


class Selection(NamedTuple):
    points: np.ndarray
    gains: np.ndarray
    short: bool


def select_farthest(existing, candidates, count: int) -> Selection:
    """Greedy farthest-point selection of ``count`` candidates.

    Each pick maximizes the distance to ``existing`` plus the points already
    picked; ties go to the lowest candidate index.  Runs in
    ``O(count * len(candidates))`` after the initial distance pass.
    """
    cand = np.asarray(candidates, dtype=float)
    if cand.ndim == 1:
        cand = cand.reshape(-1, 1)
    if len(cand) == 0:
        raise DomainError("candidate pool is empty")
    pts = existing.points if isinstance(existing, SampleSet) else np.asarray(existing, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, cand.shape[1])
    if len(pts):
        best = cKDTree(pts).query(cand)[0]
    else:
        best = np.full(len(cand), np.inf)
    alive = np.ones(len(cand), dtype=bool)
    chosen, gains = [], []
    for _ in range(count):
        if not alive.any():
            break
        score = np.where(alive, best, -np.inf)
        i = int(np.argmax(score))
        chosen.append(i)
        gains.append(best[i])
        alive[i] = False
        best = np.minimum(best, np.linalg.norm(cand - cand[i], axis=1))
    short = len(chosen) < count
    return Selection(cand[chosen].reshape(len(chosen), cand.shape[1]), np.asarray(gains), short)


def low_discrepancy_points(box: BoxDomain, count: int, seed) -> np.ndarray:
    """Scrambled Halton points in ``box`` for cold starts."""
    sampler = qmc.Halton(d=box.dim, scramble=True, seed=seed)
    return box.lower + sampler.random(count) * box.width
