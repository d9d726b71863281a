"""Benchmark objectives and their registry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import DomainError
from .geometry import BoxDomain

BRANIN_FSTAR = 0.397887
LJ_RMIN = 0.5
_BOX_TOL = 1e-9


def _check_box(x, lower, upper, name):
    x = np.asarray(x, dtype=float).ravel()
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    span = upper - lower
    if np.any(x < lower - _BOX_TOL * span) or np.any(x > upper + _BOX_TOL * span):
        raise DomainError(f"{name}: point {x.tolist()} outside its box")
    return x


def branin(x) -> float:
    x1, x2 = _check_box(x, [-5.0, 0.0], [10.0, 15.0], "branin")
    a, b, c, r, s, t = 1.0, 5.1 / (4 * math.pi**2), 5 / math.pi, 6.0, 10.0, 1 / (8 * math.pi)
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * math.cos(x1) + s


def sin2(x) -> float:
    x1, x2 = _check_box(x, -5.0, 5.0, "sin2")
    return 1.0 + math.sin(x1) ** 2 + math.sin(x2) ** 2 - 0.1 * math.exp(-x1**2 - x2**2)


def ackley(x, bound: float = 32.768) -> float:
    x = _check_box(x, -bound, bound, "ackley")
    a, b, c = 20.0, 0.2, 2 * math.pi
    n = x.size
    rms = math.sqrt(float(x @ x) / n)
    cos_mean = float(np.cos(c * x).sum()) / n
    # e^{1 - 1} is exactly 1, so the origin evaluates to exactly 0
    return -a * math.exp(-b * rms) - math.exp(cos_mean) + a + math.e


def rosenbrock(x, bound: float = 2.048) -> float:
    x = _check_box(x, -bound, bound, "rosenbrock")
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (x[:-1] - 1.0) ** 2))


def lj_dimension(s: int) -> int:
    if s < 2:
        raise DomainError("need at least 2 atoms")
    return 1 if s == 2 else 3 * s - 6


def lj_positions(coords, s: int) -> np.ndarray:
    """Cartesian atom positions from reduced coordinates.

    Atom 1 sits at the origin, atom 2 at ``(c0, 0, 0)``, atom 3 at
    ``(c1, c2, 0)`` and every further atom takes three free coordinates.
    """
    c = np.asarray(coords, dtype=float).ravel()
    if c.size != lj_dimension(s):
        raise DomainError(f"LJ with {s} atoms needs {lj_dimension(s)} coordinates, got {c.size}")
    pos = np.zeros((s, 3))
    pos[1, 0] = c[0]
    if s >= 3:
        pos[2, :2] = c[1:3]
        pos[3:] = c[3:].reshape(s - 3, 3)
    return pos


def lj_pair(r):
    return r**-12 - 2.0 * r**-6


def lj_cluster(coords, s: int, with_flag: bool = False):
    """Total Lennard-Jones energy in reduced units.

    Pair distances below ``LJ_RMIN`` are clamped to it; ``with_flag``
    additionally returns whether any clamp was applied.
    """
    pos = lj_positions(coords, s)
    i, j = np.triu_indices(s, 1)
    r = np.linalg.norm(pos[i] - pos[j], axis=1)
    clamped = bool(np.any(r < LJ_RMIN))
    energy = float(np.sum(lj_pair(np.maximum(r, LJ_RMIN))))
    return (energy, clamped) if with_flag else energy


def lj_bounds(s: int):
    dim = lj_dimension(s)
    lower = np.full(dim, -2.5)
    upper = np.full(dim, 2.5)
    lower[0] = 0.0
    return lower, upper


def _lj_boxed(coords, s: int) -> float:
    lower, upper = lj_bounds(s)
    _check_box(coords, lower, upper, "lj")
    return lj_cluster(coords, s)


def tetrahedron_coords() -> np.ndarray:
    """Reduced coordinates of the unit-edge regular tetrahedron (4 atoms)."""
    return np.array([1.0, 0.5, math.sqrt(3) / 2, 0.5, math.sqrt(3) / 6, math.sqrt(2.0 / 3.0)])


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    func: Callable
    f_star: float | None = None
    minimizers: tuple = ()
    description: str = ""

    @property
    def box(self) -> BoxDomain:
        return BoxDomain(self.lower, self.upper)

    def __call__(self, x) -> float:
        return self.func(x)


def _branin_spec(dim=None):
    if dim not in (None, 2):
        raise DomainError("branin is 2-dimensional")
    mins = ((-math.pi, 12.275), (math.pi, 2.275), (3 * math.pi, 2.475))
    return ObjectiveSpec("branin", 2, np.array([-5.0, 0.0]), np.array([10.0, 15.0]), branin,
                         BRANIN_FSTAR, tuple(np.array(m) for m in mins), "three global minima")


def _sin2_spec(dim=None):
    if dim not in (None, 2):
        raise DomainError("sin2 is 2-dimensional")
    return ObjectiveSpec("sin2", 2, np.full(2, -5.0), np.full(2, 5.0), sin2, 0.9,
                         (np.zeros(2),), "many local minima")


def _ackley_spec(dim=None, bound=None):
    dim = 4 if dim is None else dim
    if bound is None:
        bound = 5.0 if dim == 10 else 32.768
    return ObjectiveSpec("ackley", dim, np.full(dim, -bound), np.full(dim, bound),
                         partial(ackley, bound=bound), 0.0, (np.zeros(dim),), "many local minima")


def _rosenbrock_spec(dim=None, bound=None):
    dim = 4 if dim is None else dim
    if dim < 2:
        raise DomainError("rosenbrock needs dimension >= 2")
    if bound is None:
        bound = 5.0 if dim == 2 else 2.048
    return ObjectiveSpec("rosenbrock", dim, np.full(dim, -bound), np.full(dim, bound),
                         partial(rosenbrock, bound=bound), 0.0, (np.ones(dim),), "narrow valley")


def _lj_spec(dim=None):
    dim = 6 if dim is None else dim
    if dim == 1:
        s = 2
    elif dim % 3 == 0 and dim >= 3:
        s = dim // 3 + 2
    else:
        raise DomainError("lj dimension must be 1 or a multiple of 3 (3s - 6)")
    if s > 5:
        raise DomainError("lj clusters are supported up to 5 atoms")
    lower, upper = lj_bounds(s)
    f_star = {2: -1.0, 3: -3.0, 4: -6.0, 5: -9.103852}[s]
    mins = (tetrahedron_coords(),) if s == 4 else ()
    return ObjectiveSpec(f"lj{s}", dim, lower, upper, partial(_lj_boxed, s=s), f_star, mins,
                         f"Lennard-Jones cluster, {s} atoms")


REGISTRY = {
    "branin": _branin_spec,
    "sin2": _sin2_spec,
    "ackley": _ackley_spec,
    "rosenbrock": _rosenbrock_spec,
    "lj": _lj_spec,
}


def get_objective(name: str, dim: int | None = None) -> ObjectiveSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise DomainError(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(dim)
