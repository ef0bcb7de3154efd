"""Affine simplicial mesh baseline.

The domain box is cut into a ``g^n`` grid and every cell into ``n!`` Kuhn
simplices. On each simplex the dynamics are replaced by the affine map
interpolating ``f`` at the vertices, and the interpolation residual is
bounded by the interval branch-and-bound of :mod:`neuralabs.certifier`.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .certifier import AffineApproximant, CertBudget, CertResult, ErrorBound, ResidualBound, bound_residual, certify
from .errors import SingularSimplex
from .polylib import Box


@dataclass(eq=False)
class Simplex:
    vertices: np.ndarray  # (n+1,) vertex ids
    cell: Box
    A_ub: np.ndarray  # facets, A_ub x <= c_ub
    c_ub: np.ndarray
    A: np.ndarray  # interpolant x -> A x + b
    b: np.ndarray

    @property
    def approximant(self) -> AffineApproximant:
        return AffineApproximant(self.A, self.b)


@dataclass(eq=False)
class SimplicialMesh:
    g: int
    domain: Box
    points: np.ndarray  # vertex coordinates
    simplices: List[Simplex]

    @property
    def count(self) -> int:
        return len(self.simplices)

    def volumes(self) -> np.ndarray:
        V = self.points[np.array([s.vertices for s in self.simplices])]
        dets = np.abs(np.linalg.det(V[:, 1:] - V[:, :1]))
        return dets / math.factorial(self.domain.n)

    def locate(self, x) -> int:
        """Index of a simplex containing ``x``."""
        x = np.asarray(x, dtype=float)
        for i, s in enumerate(self.simplices):
            if np.all(s.A_ub @ x <= s.c_ub + 1e-12):
                return i
        raise ValueError(f"{x} is outside the mesh")

    def interpolate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty_like(X)
        for r, x in enumerate(X):
            s = self.simplices[self.locate(x)]
            out[r] = s.A @ x + s.b
        return out


def _kuhn_facets(lo, w, perm):
    """Rows for ``1 >= u[p0] >= u[p1] >= ... >= u[p_{n-1}] >= 0`` with ``u = (x - lo) / w``."""
    n = lo.size
    A = np.zeros((n + 1, n))
    c = np.zeros(n + 1)
    A[0, perm[0]] = 1.0 / w[perm[0]]
    c[0] = 1.0 + lo[perm[0]] / w[perm[0]]
    for k in range(n - 1):
        a, b = perm[k + 1], perm[k]
        A[k + 1, a] = 1.0 / w[a]
        A[k + 1, b] = -1.0 / w[b]
        c[k + 1] = lo[a] / w[a] - lo[b] / w[b]
    last = perm[-1]
    A[n, last] = -1.0 / w[last]
    c[n] = -lo[last] / w[last]
    return A, c


def build_mesh(domain: Box, g: int, f=None) -> SimplicialMesh:
    """Kuhn triangulation of a ``g^n`` grid; ``f`` (batched) fixes the interpolants."""
    if g < 1:
        raise ValueError("grid resolution must be at least 1")
    n = domain.n
    w = domain.width / g
    grid = np.array(list(itertools.product(range(g + 1), repeat=n)))
    points = domain.lo + grid * w
    index = {tuple(p): i for i, p in enumerate(grid)}
    values = f(points) if f is not None else np.zeros_like(points)
    simplices = []
    eye = np.eye(n, dtype=int)
    for cell in itertools.product(range(g), repeat=n):
        base = np.array(cell)
        lo = domain.lo + base * w
        box = Box(lo, lo + w)
        for perm in itertools.permutations(range(n)):
            ids = [index[tuple(base)]]
            cur = base.copy()
            for axis in perm:
                cur = cur + eye[axis]
                ids.append(index[tuple(cur)])
            ids = np.array(ids)
            V = np.hstack([points[ids], np.ones((n + 1, 1))])
            if abs(np.linalg.det(V)) < 1e-300:
                raise SingularSimplex(f"degenerate simplex in cell {cell}")
            coef = np.linalg.solve(V, values[ids])
            A_ub, c_ub = _kuhn_facets(lo, w, perm)
            simplices.append(Simplex(ids, box, A_ub, c_ub, coef[:n].T.copy(), coef[n].copy()))
    return SimplicialMesh(g, domain, points, simplices)


@dataclass(eq=False)
class AsmReport:
    g: int
    partitions: int
    bounds: np.ndarray  # (S, n) certified residual bound per simplex
    global_bound: np.ndarray
    seconds: float
    results: Optional[List[CertResult]] = field(default=None, repr=False)

    @property
    def eps(self) -> float:
        return float(np.linalg.norm(self.global_bound))

    @property
    def certified(self) -> Optional[bool]:
        if self.results is None:
            return None
        return all(r.certified for r in self.results)


def certify_asm(model, mesh: SimplicialMesh, target: Optional[ErrorBound] = None, budget: Optional[CertBudget] = None, rel_tol: float = 1e-2) -> AsmReport:
    """Certified residual bound on every simplex; with ``target`` also a verdict per simplex."""
    t0 = time.perf_counter()
    bounds = []
    results = [] if target is not None else None
    for s in mesh.simplices:
        cons = (s.A_ub, s.c_ub)
        rb: ResidualBound = bound_residual(model, s.approximant, domain=s.cell, constraints=cons, rel_tol=rel_tol, budget=budget)
        bounds.append(rb.upper)
        if target is not None:
            results.append(certify(model, s.approximant, target, budget, domain=s.cell, constraints=cons))
    bounds = np.array(bounds)
    return AsmReport(mesh.g, mesh.count, bounds, bounds.max(axis=0), time.perf_counter() - t0, results)


def report_csv(rows: List[AsmReport]) -> str:
    lines = ["g,N_p,eps,seconds"]
    for r in rows:
        lines.append(f"{r.g},{r.partitions},{r.eps!r},{r.seconds:.3f}")
    return "\n".join(lines) + "\n"
