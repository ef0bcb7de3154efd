"""Dense two-phase simplex with Bland's anti-cycling rule.

Problems here are tiny (a handful of variables, at most a few hundred rows),
so a dense tableau is both fast enough and fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalInstability

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray]
    fun: float
    phase1: float = 0.0
    iterations: int = 0


def _pivot(T, basis, r, j):
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    nz = np.nonzero(np.abs(col) > 0)[0]
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])
    basis[r] = j


def _run(T, basis, ncols, max_iter):
    """Minimise with the reduced-cost row stored in ``T[-1]``."""
    m = T.shape[0] - 1
    for it in range(max_iter):
        d = T[-1, :ncols]
        cand = np.nonzero(d < -PIVOT_TOL)[0]
        if cand.size == 0:
            return "optimal", it
        j = int(cand[0])
        col = T[:m, j]
        rows = np.nonzero(col > PIVOT_TOL)[0]
        if rows.size == 0:
            return "unbounded", it
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(tied[np.argmin(np.asarray(basis)[tied])])
        _pivot(T, basis, r, j)
    raise NumericalInstability(f"simplex did not converge in {max_iter} iterations")


def linprog(c, A_ub, b_ub, lb, ub, max_iter: int = 5000) -> LPResult:
    """Minimise ``c @ x`` subject to ``A_ub @ x <= b_ub`` and ``lb <= x <= ub``.

    ``lb`` must be finite; entries of ``ub`` may be ``inf``.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A = np.asarray(A_ub, dtype=float).reshape(-1, n)
    b = np.asarray(b_ub, dtype=float).reshape(-1)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(ub < lb - FEAS_TOL):
        return LPResult("infeasible", None, np.inf, np.inf)
    # shift to y = x - lb >= 0
    rhs = b - A @ lb
    fin = np.isfinite(ub)
    if fin.any():
        U = np.eye(n)[fin]
        A = np.vstack([A, U])
        rhs = np.concatenate([rhs, (ub - lb)[fin]])
    m = A.shape[0]
    neg = rhs < 0
    n_art = int(neg.sum())
    ncols = n + m + n_art
    T = np.zeros((m + 1, ncols + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = rhs
    T[:m][neg] *= -1.0
    basis = list(range(n, n + m))
    art_rows = np.nonzero(neg)[0]
    for k, r in enumerate(art_rows):
        T[r, n + m + k] = 1.0
        basis[r] = n + m + k

    phase1 = 0.0
    iters = 0
    if n_art:
        T[-1, :] = 0.0
        T[-1, :] -= T[art_rows].sum(axis=0)
        T[-1, n + m :ncols] = 0.0
        _, it = _run(T, basis, ncols, max_iter)
        iters += it
        phase1 = -T[-1, -1]
        if phase1 > FEAS_TOL * max(1.0, np.abs(rhs).max()):
            return LPResult("infeasible", None, np.inf, phase1, iters)
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= n + m:
                cand = np.nonzero(np.abs(T[r, : n + m]) > 1e-9)[0]
                if cand.size:
                    _pivot(T, basis, r, int(cand[0]))
                else:
                    keep[r] = False
        if not keep.all():
            rows = np.concatenate([np.nonzero(keep)[0], [m]])
            T = T[rows]
            basis = [basis[r] for r in range(m) if keep[r]]
            m = len(basis)
        ncols = n + A.shape[0]
        T = np.concatenate([T[:, :ncols], T[:, -1:]], axis=1)

    cost = np.zeros(ncols)
    cost[:n] = c
    T[-1, :ncols] = cost
    T[-1, -1] = 0.0
    for r, j in enumerate(basis):
        if cost[j] != 0.0:
            T[-1] -= cost[j] * T[r]
    status, it = _run(T, basis, ncols, max_iter)
    iters += it
    if status == "unbounded":
        return LPResult("unbounded", None, -np.inf, phase1, iters)
    y = np.zeros(ncols)
    y[basis] = T[: len(basis), -1]
    x = y[:n] + lb
    return LPResult("optimal", x, float(c @ x), phase1, iters)
