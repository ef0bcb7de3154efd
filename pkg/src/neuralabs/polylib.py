"""Boxes, halfspaces and bounded polyhedra with LP-based queries."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import NumericalInstability
from .simplex import FEAS_TOL, linprog


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _frozen(np.atleast_1d(self.lo)), _frozen(np.atleast_1d(self.hi))
        if lo.shape != hi.shape:
            raise ValueError("box bounds have different shapes")
        if np.any(lo > hi):
            raise ValueError(f"empty box {lo} > {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> "Box":
        b = np.asarray(bounds, dtype=float).reshape(-1, 2)
        return cls(b[:, 0], b[:, 1])

    def __eq__(self, other):
        return isinstance(other, Box) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self):
        return "Box(" + " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(self.lo, self.hi)) + ")"

    @property
    def n(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.width))

    def bounds(self) -> List[List[float]]:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def intersects(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(np.all(self.lo <= other.hi + tol) and np.all(other.lo <= self.hi + tol))

    def intersection(self, other: "Box") -> Optional["Box"]:
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def hull(self, other: "Box") -> "Box":
        return Box(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lo, self.hi))))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lo + rng.random((count, self.n)) * self.width

    def halfspaces(self):
        """Facets as ``(A, c)`` with ``A x <= c``."""
        eye = np.eye(self.n)
        return np.vstack([eye, -eye]), np.concatenate([self.hi, -self.lo])

    def as_polyhedron(self) -> "Polyhedron":
        return Polyhedron(np.zeros((0, self.n)), np.zeros(0), self)


@dataclass(frozen=True, eq=False)
class Halfspace:
    """The set ``{y : a @ y <= c}``."""

    a: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(self.a))
        object.__setattr__(self, "c", float(self.c))

    @property
    def trivial(self) -> bool:
        return not np.any(self.a)

    def contains(self, x, tol: float = 0.0):
        return np.asarray(x) @ self.a <= self.c + tol


class LPFeasibility(NamedTuple):
    feasible: bool
    witness: Optional[np.ndarray]


class Chebyshev(NamedTuple):
    center: Optional[np.ndarray]
    radius: float


@dataclass(eq=False)
class Polyhedron:
    """``{x in box : A x <= c}``.

    The bounding box of the ambient domain is stored separately from the
    general rows; it doubles as the LP variable bounds.
    """

    A: np.ndarray
    c: np.ndarray
    box: Box
    _cheb: Optional[Chebyshev] = field(default=None, repr=False)
    _bbox: Optional[Box] = field(default=None, repr=False)

    def __post_init__(self):
        self.A = _frozen(np.asarray(self.A, dtype=float).reshape(-1, self.box.n))
        self.c = _frozen(np.asarray(self.c, dtype=float).reshape(-1))
        if self.A.shape[0] != self.c.shape[0]:
            raise ValueError("row count mismatch")

    @classmethod
    def from_halfspaces(cls, halfspaces: Sequence[Halfspace], box: Box) -> "Polyhedron":
        if not halfspaces:
            return box.as_polyhedron()
        return cls(np.array([h.a for h in halfspaces]), np.array([h.c for h in halfspaces]), box)

    @property
    def n(self) -> int:
        return self.box.n

    @property
    def halfspaces(self) -> List[Halfspace]:
        A, c = self.all_rows()
        return [Halfspace(a, ci) for a, ci in zip(A, c)]

    def all_rows(self):
        bA, bc = self.box.halfspaces()
        return np.vstack([self.A, bA]), np.concatenate([self.c, bc])

    def contains(self, x, tol: float = 1e-9):
        x = np.asarray(x, dtype=float)
        inside = self.box.contains(x, tol)
        if self.A.shape[0]:
            inside = inside & np.all(x @ self.A.T <= self.c + tol, axis=-1)
        return inside

    def add(self, a, c) -> "Polyhedron":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return Polyhedron(np.vstack([self.A, a]), np.concatenate([self.c, np.atleast_1d(c)]), self.box)

    def intersect(self, other: "Polyhedron") -> "Polyhedron":
        box = self.box.intersection(other.box)
        if box is None:
            # empty: encode with an infeasible row over a degenerate box
            box = Box(self.box.lo, self.box.lo)
            return Polyhedron(np.zeros((1, self.n)), [-1.0], box)
        return Polyhedron(np.vstack([self.A, other.A]), np.concatenate([self.c, other.c]), box)

    def with_box(self, box: Box) -> "Polyhedron":
        inner = self.box.intersection(box)
        if inner is None:
            return Polyhedron(np.zeros((1, self.n)), [-1.0], Box(box.lo, box.lo))
        return Polyhedron(self.A, self.c, inner)

    def to_json(self):
        A, c = self.all_rows()
        return [{"a": [float(v) for v in a], "c": float(ci)} for a, ci in zip(A, c)]


def _clean_rows(A, c):
    """Drop zero rows; report infeasibility of ``0 <= c`` with ``c < 0``."""
    if A.shape[0] == 0:
        return A, c, True
    norms = np.abs(A).sum(axis=1)
    zero = norms == 0
    if np.any(c[zero] < -FEAS_TOL):
        return A, c, False
    return A[~zero], c[~zero], True


def lp_feasible(p: Polyhedron) -> LPFeasibility:
    A, c, ok = _clean_rows(p.A, p.c)
    if not ok:
        return LPFeasibility(False, None)
    res = linprog(np.zeros(p.n), A, c, p.box.lo, p.box.hi)
    if res.status != "optimal":
        return LPFeasibility(False, None)
    return LPFeasibility(True, res.x)


def chebyshev(p: Polyhedron) -> Chebyshev:
    """Largest inscribed 2-norm ball. Infeasible input gives radius ``-inf``."""
    if p._cheb is not None:
        return p._cheb
    A, c, ok = _clean_rows(p.A, p.c)
    if not ok:
        p._cheb = Chebyshev(None, -math.inf)
        return p._cheb
    n = p.n
    norms = np.linalg.norm(A, axis=1)
    eye = np.eye(n)
    rows = np.vstack([np.hstack([A, norms[:, None]]), np.hstack([eye, np.ones((n, 1))]), np.hstack([-eye, np.ones((n, 1))])])
    rhs = np.concatenate([c, p.box.hi, -p.box.lo])
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    rmax = 0.5 * float(p.box.width.max()) + 1.0
    res = linprog(cost, rows, rhs, np.concatenate([p.box.lo, [0.0]]), np.concatenate([p.box.hi, [rmax]]))
    if res.status != "optimal":
        p._cheb = Chebyshev(None, -math.inf)
    else:
        p._cheb = Chebyshev(res.x[:n], float(res.x[-1]))
    return p._cheb


def bbox(p: Polyhedron) -> Optional[Box]:
    """Tight bounding box via 2n LPs; ``None`` when ``p`` is empty."""
    if p._bbox is not None:
        return p._bbox
    A, c, ok = _clean_rows(p.A, p.c)
    if not ok:
        return None
    if A.shape[0] == 0:
        p._bbox = p.box
        return p.box
    n = p.n
    lo, hi = np.empty(n), np.empty(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        r1 = linprog(e, A, c, p.box.lo, p.box.hi)
        if r1.status != "optimal":
            return None
        r2 = linprog(-e, A, c, p.box.lo, p.box.hi)
        if r2.status != "optimal":
            raise NumericalInstability("bbox LP became infeasible after a feasible solve")
        lo[j], hi[j] = r1.x[j], r2.x[j]
    p._bbox = Box(np.minimum(lo, hi), np.maximum(lo, hi))
    return p._bbox


def maximize(p: Polyhedron, direction) -> Optional[float]:
    """Support value ``max d @ x`` over ``p`` (``None`` if empty)."""
    A, c, ok = _clean_rows(p.A, p.c)
    if not ok:
        return None
    d = np.asarray(direction, dtype=float)
    res = linprog(-d, A, c, p.box.lo, p.box.hi)
    if res.status != "optimal":
        return None
    return float(d @ res.x)


def remove_redundant(p: Polyhedron, tol: float = 1e-9) -> Polyhedron:
    """Drop general rows implied by the others (one LP per row)."""
    keep = list(range(p.A.shape[0]))
    for i in range(p.A.shape[0]):
        others = [k for k in keep if k != i]
        q = Polyhedron(p.A[others], p.c[others], p.box)
        val = maximize(q, p.A[i])
        if val is None:
            return p
        if val <= p.c[i] + tol:
            keep = others
    return Polyhedron(p.A[keep], p.c[keep], p.box)


def clip_polygon(poly: np.ndarray, A, c) -> np.ndarray:
    """Clip a convex polygon (vertices in order) by the halfplanes ``A x <= c``."""
    pts = list(poly)
    for a, ci in zip(A, c):
        out = []
        m = len(pts)
        for k in range(m):
            P, Q = pts[k], pts[(k + 1) % m]
            fp, fq = a @ P - ci, a @ Q - ci
            if fp <= 0:
                out.append(P)
            if (fp < 0 < fq) or (fq < 0 < fp):
                out.append(P + fp / (fp - fq) * (Q - P))
        pts = out
        if not pts:
            break
    return np.array(pts, dtype=float).reshape(-1, 2)


def polygon_2d(p: Polyhedron) -> np.ndarray:
    """Vertices of a 2D polyhedron in counter-clockwise order (empty array if empty)."""
    lo, hi = p.box.lo, p.box.hi
    square = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    return clip_polygon(square, p.A, p.c)
