"""Interval branch-and-bound certification of approximation error.

Decides ``forall x in X: |f_i(x) - N_i(x)| + delta <= e_i`` for every
component ``i``. Boxes are processed breadth-first in batches; for each box
the residual ``f - N`` is enclosed with interval arithmetic (``f``) and
affine relaxation bounds (``N``). A box is a certified leaf when its
enclosure already meets the bound; otherwise its midpoint and corners are
checked for a concrete violation, and failing that it is bisected.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateBox, DomainError
from .netlearn import NeuralNet, forward, interval_forward, jacobian_interval, linear_bounds
from .polylib import Box

CERTIFIED = "certified"
COUNTEREXAMPLE = "counterexample"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True, eq=False)
class ErrorBound:
    """Per-component error vector ``e`` plus the concrete disturbance radius."""

    per_component: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        e = np.array(self.per_component, dtype=float, ndmin=1)
        if np.any(e < 0):
            raise ValueError("error bounds must be non-negative")
        e.setflags(write=False)
        object.__setattr__(self, "per_component", e)

    @classmethod
    def from_eps(cls, eps: float, n: int, delta: float = 0.0) -> "ErrorBound":
        """Split a 2-norm budget evenly: ``e_i = eps / sqrt(n)``."""
        return cls(np.full(n, eps / np.sqrt(n)), delta)

    @property
    def reported_eps(self) -> float:
        return float(np.linalg.norm(self.per_component))

    @property
    def allowance(self) -> np.ndarray:
        """Admissible residual per component (the delta share is subtracted)."""
        return self.per_component - self.delta

    def scaled(self, factor: float) -> "ErrorBound":
        return ErrorBound(self.per_component * factor, self.delta)

    def to_json(self):
        return {"e": self.per_component.tolist(), "eps": self.reported_eps, "delta": self.delta}


@dataclass
class CertBudget:
    max_boxes: int = 2_000_000
    min_width_rel: float = 1e-4
    batch_size: int = 4096
    threads: int = 1
    deadline: Optional[float] = None  # time.perf_counter() value
    keep_proof: bool = False


@dataclass
class CertResult:
    verdict: str
    boxes_processed: int
    max_residual_upper_bound: np.ndarray
    point: Optional[np.ndarray] = None
    violated: Tuple[int, ...] = ()
    margin: float = 0.0
    worst_box: Optional[Box] = None
    leaves: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default=None, repr=False)
    outside: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    seconds: float = 0.0

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def proof_json(self) -> str:
        """Certified leaf boxes with their residual enclosures."""
        if self.leaves is None:
            raise ValueError("run certify with keep_proof=True to record the proof")
        lo, hi, ub = self.leaves
        rows = [{"lo": a.tolist(), "hi": b.tolist(), "residual_bound": u.tolist()} for a, b, u in zip(lo, hi, ub)]
        return json.dumps({"verdict": self.verdict, "leaves": rows})


# ---------------------------------------------------------------- approximants


class NetApproximant:
    def __init__(self, net: NeuralNet):
        self.net = net

    def point(self, X):
        return forward(self.net, X)

    def enclose(self, lo, hi):
        if len(self.net.weights) == 1:
            return interval_forward(self.net, lo, hi)
        return linear_bounds(self.net, lo, hi)[4:]

    def jacobian_enclose(self, lo, hi):
        return jacobian_interval(self.net, lo, hi)


class AffineApproximant:
    """``x -> A x + b`` (used for mesh simplices)."""

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def point(self, X):
        return np.asarray(X) @ self.A.T + self.b

    def enclose(self, lo, hi):
        c = 0.5 * (lo + hi) @ self.A.T + self.b
        r = 0.5 * (hi - lo) @ np.abs(self.A).T
        slack = 1e-14 * (np.abs(c) + r) + 1e-300
        return c - r - slack, c + r + slack

    def jacobian_enclose(self, lo, hi):
        J = np.broadcast_to(self.A, (lo.shape[0],) + self.A.shape)
        return J, J


def as_approximant(obj):
    if isinstance(obj, NeuralNet):
        return NetApproximant(obj)
    return obj


# ---------------------------------------------------------------- splitting


def pick_split(box: Box, residual_widths: Sequence[float], min_width: float = 0.0) -> int:
    """Axis maximising ``width * sensitivity``; ties go to the lowest index."""
    w = box.width
    s = np.asarray(residual_widths, dtype=float)
    if np.all(w <= min_width):
        raise DegenerateBox(f"all widths of {box} are below {min_width}")
    score = np.where(w > min_width, w * s, -np.inf)
    if not np.any(score > 0):
        score = np.where(w > min_width, w, -np.inf)
    return int(np.argmax(score))


def _split_axes(W, S, minw):
    score = np.where(W > minw, W * S, -np.inf)
    flat = ~np.any(score > 0, axis=1)
    if np.any(flat):
        score[flat] = np.where(W[flat] > minw, W[flat], -np.inf)
    return np.argmax(score, axis=1)


def _bisect(lo, hi, axes):
    idx = np.arange(lo.shape[0])
    mid = 0.5 * (lo[idx, axes] + hi[idx, axes])
    lhi = hi.copy()
    lhi[idx, axes] = mid
    rlo = lo.copy()
    rlo[idx, axes] = mid
    # interleave so children of box k stay adjacent (canonical order)
    new_lo = np.empty((2 * lo.shape[0], lo.shape[1]))
    new_hi = np.empty_like(new_lo)
    new_lo[0::2], new_hi[0::2] = lo, lhi
    new_lo[1::2], new_hi[1::2] = rlo, hi
    return new_lo, new_hi


# ---------------------------------------------------------------- core


class _Evaluator:
    """Residual enclosures and point checks for a batch of boxes."""

    def __init__(self, model, approx, constraints, threads: int):
        self.model = model
        self.approx = approx
        self.constraints = constraints
        self.threads = max(1, int(threads))
        n = model.n
        self.offsets = np.array(list(itertools.product((0.0, 1.0), repeat=n)))  # corners
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        self.mean_value = hasattr(approx, "jacobian_enclose") and hasattr(model, "jacobian_interval")

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def _chunked(self, fn, lo, hi):
        if self._pool is None or lo.shape[0] < 2 * self.threads:
            return fn(lo, hi)
        parts = np.array_split(np.arange(lo.shape[0]), self.threads)
        outs = list(self._pool.map(lambda ix: fn(lo[ix], hi[ix]), parts))
        return tuple(np.concatenate([o[k] for o in outs]) for k in range(len(outs[0])))

    def enclose(self, lo, hi):
        def work(lo, hi):
            flo, fhi = self.model.f_interval(lo, hi)
            nlo, nhi = self.approx.enclose(lo, hi)
            rlo, rhi = flo - nhi, fhi - nlo
            if self.mean_value:
                mlo, mhi = self._mean_value(lo, hi)
                rlo, rhi = np.maximum(rlo, mlo), np.minimum(rhi, mhi)
            return np.maximum(np.abs(rlo), np.abs(rhi)), rlo, rhi

        return self._chunked(work, lo, hi)

    def _mean_value(self, lo, hi):
        """``r(c) + J_r(box) (box - c)``; cancels the linear part f and N share."""
        c = 0.5 * (lo + hi)
        with np.errstate(all="ignore"):
            try:
                fc = self.model.f(c)
            except DomainError:
                inf = np.full_like(lo, np.inf)
                return -inf, inf
            nc = self.approx.point(c)
            jf_lo, jf_hi = self.model.jacobian_interval(lo, hi)
            jn_lo, jn_hi = self.approx.jacobian_enclose(lo, hi)
            mag = np.maximum(np.abs(jf_lo - jn_hi), np.abs(jf_hi - jn_lo))
            spread = np.einsum("bij,bj->bi", mag, 0.5 * (hi - lo))
            rc = fc - nc
            slack = 1e-13 * (np.abs(fc) + np.abs(nc) + spread) + 1e-300
            out_lo, out_hi = rc - spread - slack, rc + spread + slack
        bad = ~(np.isfinite(out_lo) & np.isfinite(out_hi))
        out_lo[bad], out_hi[bad] = -np.inf, np.inf
        return out_lo, out_hi

    def outside(self, lo, hi, tol=1e-12):
        if self.constraints is None:
            return np.zeros(lo.shape[0], dtype=bool)
        A, c = self.constraints
        Ap, Am = np.maximum(A, 0), np.minimum(A, 0)
        low = lo @ Ap.T + hi @ Am.T
        return np.any(low > c + tol, axis=1)

    def inside(self, X, tol=1e-12):
        if self.constraints is None:
            return np.ones(X.shape[:-1], dtype=bool)
        A, c = self.constraints
        return np.all(X @ A.T <= c + tol, axis=-1)

    def probe(self, lo, hi):
        """Residuals at midpoint and corners: points (B, P, n), residual, f, N."""
        B, n = lo.shape
        mid = 0.5 * (lo + hi)
        pts = np.concatenate([mid[:, None, :], lo[:, None, :] + self.offsets[None] * (hi - lo)[:, None, :]], axis=1)
        flat = pts.reshape(-1, n)
        fv = self.model.f(flat).reshape(pts.shape)
        nv = self.approx.point(flat).reshape(pts.shape)
        return pts, fv - nv, fv, nv

    def sensitivity(self, lo, hi, fv, nv):
        """Per-axis variation of f and N across the box corners, per unit width."""
        B, n = lo.shape
        W = hi - lo
        corners_f = fv[:, 1:, :]
        corners_n = nv[:, 1:, :]
        S = np.zeros((B, n))
        for j in range(n):
            a = self.offsets[:, j] == 0
            b = self.offsets[:, j] == 1
            df = np.abs(corners_f[:, b, :] - corners_f[:, a, :]).sum(axis=(1, 2))
            dn = np.abs(corners_n[:, b, :] - corners_n[:, a, :]).sum(axis=(1, 2))
            S[:, j] = (df + dn) / np.maximum(W[:, j], 1e-300)
        floor = 1e-3 * S.max(axis=1, keepdims=True) + 1e-12
        return S + floor


def certify(model, net, target: ErrorBound, budget: Optional[CertBudget] = None, *, domain: Optional[Box] = None, constraints=None) -> CertResult:
    """Prove the per-component error bound over the domain or find a violation.

    ``constraints=(A, c)`` restricts the domain to ``{x : A x <= c}`` (used for
    mesh simplices); points outside never count as counterexamples.
    """
    budget = budget or CertBudget()
    t0 = time.perf_counter()
    approx = as_approximant(net)
    domain = domain or model.domain
    n = model.n
    allow = np.asarray(target.allowance, dtype=float)
    if allow.shape != (n,):
        raise ValueError(f"error bound has {allow.size} components, model has {n}")
    if np.any(allow <= 0):
        raise ValueError("error bound must exceed the disturbance radius in every component")
    if constraints is not None:
        constraints = (np.asarray(constraints[0], dtype=float).reshape(-1, n), np.asarray(constraints[1], dtype=float))
    ev = _Evaluator(model, approx, constraints, budget.threads)
    minw = budget.min_width_rel * domain.width
    pend_lo = [domain.lo[None].copy()]
    pend_hi = [domain.hi[None].copy()]
    processed = 0
    max_ub = np.zeros(n)
    leaves_lo, leaves_hi, leaves_ub = [], [], []
    out_lo, out_hi = [], []

    def finish(verdict, **kw):
        ev.close()
        leaves = out = None
        if budget.keep_proof:
            leaves = (
                np.concatenate(leaves_lo) if leaves_lo else np.zeros((0, n)),
                np.concatenate(leaves_hi) if leaves_hi else np.zeros((0, n)),
                np.concatenate(leaves_ub) if leaves_ub else np.zeros((0, n)),
            )
            out = (np.concatenate(out_lo) if out_lo else np.zeros((0, n)), np.concatenate(out_hi) if out_hi else np.zeros((0, n)))
        return CertResult(verdict, processed, max_ub, leaves=leaves, outside=out, seconds=time.perf_counter() - t0, **kw)

    while pend_lo:
        lo, hi = _take(pend_lo, pend_hi, budget.batch_size)
        processed += lo.shape[0]
        outside = ev.outside(lo, hi)
        if outside.any():
            if budget.keep_proof:
                out_lo.append(lo[outside])
                out_hi.append(hi[outside])
            lo, hi = lo[~outside], hi[~outside]
            if lo.shape[0] == 0:
                continue
        ub, _, _ = ev.enclose(lo, hi)
        ok = np.all(ub <= allow, axis=1)
        if ok.any():
            max_ub = np.maximum(max_ub, ub[ok].max(axis=0))
            if budget.keep_proof:
                leaves_lo.append(lo[ok])
                leaves_hi.append(hi[ok])
                leaves_ub.append(ub[ok])
        lo, hi, ub = lo[~ok], hi[~ok], ub[~ok]
        if lo.shape[0] == 0:
            continue
        pts, res, fv, nv = ev.probe(lo, hi)
        excess = np.abs(res) - allow  # (B, P, n)
        valid = ev.inside(pts)
        viol = np.any(excess > 0, axis=2) & valid
        if viol.any():
            b = int(np.nonzero(viol.any(axis=1))[0][0])
            score = np.where(viol[b], excess[b].max(axis=1), -np.inf)
            p = int(np.argmax(score))
            comps = tuple(int(i) for i in np.nonzero(excess[b, p] > 0)[0])
            return finish(
                COUNTEREXAMPLE,
                point=pts[b, p].copy(),
                violated=comps,
                margin=float(excess[b, p].max()),
                worst_box=Box(lo[b], hi[b]),
            )
        W = hi - lo
        stuck = np.all(W <= minw, axis=1)
        if stuck.any():
            b = int(np.argmax(np.where(stuck, (ub - allow).max(axis=1), -np.inf)))
            return finish(INCONCLUSIVE, worst_box=Box(lo[b], hi[b]), point=0.5 * (lo[b] + hi[b]))
        over_budget = processed + 2 * lo.shape[0] > budget.max_boxes
        late = budget.deadline is not None and time.perf_counter() > budget.deadline
        if over_budget or late:
            b = int(np.argmax((ub - allow).max(axis=1)))
            return finish(INCONCLUSIVE, worst_box=Box(lo[b], hi[b]), point=0.5 * (lo[b] + hi[b]))
        S = ev.sensitivity(lo, hi, fv, nv)
        axes = _split_axes(W, S, minw)
        nlo, nhi = _bisect(lo, hi, axes)
        pend_lo.append(nlo)
        pend_hi.append(nhi)
    return finish(CERTIFIED)


def _take(pend_lo, pend_hi, size):
    """Pop up to ``size`` boxes from the front of the FIFO queue."""
    out_lo, out_hi, count = [], [], 0
    while pend_lo and count < size:
        lo, hi = pend_lo[0], pend_hi[0]
        room = size - count
        if lo.shape[0] <= room:
            out_lo.append(lo)
            out_hi.append(hi)
            count += lo.shape[0]
            pend_lo.pop(0)
            pend_hi.pop(0)
        else:
            out_lo.append(lo[:room])
            out_hi.append(hi[:room])
            pend_lo[0], pend_hi[0] = lo[room:], hi[room:]
            count += room
    return np.concatenate(out_lo), np.concatenate(out_hi)


# ---------------------------------------------------------------- bounding


@dataclass
class ResidualBound:
    upper: np.ndarray
    lower: np.ndarray
    boxes_processed: int
    witness: Optional[np.ndarray] = None

    @property
    def eps(self) -> float:
        return float(np.linalg.norm(self.upper))


def bound_residual(
    model,
    net,
    *,
    domain: Optional[Box] = None,
    constraints=None,
    rel_tol: float = 1e-2,
    abs_tol: float = 1e-9,
    budget: Optional[CertBudget] = None,
) -> ResidualBound:
    """Certified upper bound on ``max |f_i - N_i|`` per component.

    Branch-and-bound maximisation: a box is closed once its enclosure could
    raise the 2-norm of the best sampled residual by at most ``rel_tol``.
    Components that are nearly linear in both ``f`` and ``N`` would otherwise
    force tiny boxes everywhere, because interval evaluation cannot cancel them.
    """
    budget = budget or CertBudget()
    approx = as_approximant(net)
    domain = domain or model.domain
    n = model.n
    if constraints is not None:
        constraints = (np.asarray(constraints[0], dtype=float).reshape(-1, n), np.asarray(constraints[1], dtype=float))
    ev = _Evaluator(model, approx, constraints, budget.threads)
    minw = budget.min_width_rel * domain.width
    pend_lo = [domain.lo[None].copy()]
    pend_hi = [domain.hi[None].copy()]
    best = np.zeros(n)
    witness = None
    upper = np.zeros(n)
    processed = 0
    try:
        while pend_lo:
            lo, hi = _take(pend_lo, pend_hi, budget.batch_size)
            processed += lo.shape[0]
            keep = ~ev.outside(lo, hi)
            lo, hi = lo[keep], hi[keep]
            if lo.shape[0] == 0:
                continue
            ub, _, _ = ev.enclose(lo, hi)
            pts, res, fv, nv = ev.probe(lo, hi)
            valid = ev.inside(pts)
            absr = np.where(valid[:, :, None], np.abs(res), 0.0)
            flat = absr.reshape(-1, n)
            k = flat.argmax(axis=0)
            improved = flat[k, np.arange(n)] > best
            if improved.any():
                best = np.maximum(best, flat[k, np.arange(n)])
                witness = pts.reshape(-1, n)[k[np.argmax(improved)]].copy()
            W = hi - lo
            stuck = np.all(W <= minw, axis=1)
            reach = np.linalg.norm(np.maximum(ub, best), axis=1)
            done = (reach <= np.linalg.norm(best) * (1 + rel_tol) + abs_tol) | stuck
            if processed + 2 * lo.shape[0] > budget.max_boxes:
                done[:] = True
            if done.any():
                upper = np.maximum(upper, ub[done].max(axis=0))
            lo, hi = lo[~done], hi[~done]
            if lo.shape[0] == 0:
                continue
            S = ev.sensitivity(lo, hi, fv[~done], nv[~done])
            axes = _split_axes(hi - lo, S, minw)
            nlo, nhi = _bisect(lo, hi, axes)
            pend_lo.append(nlo)
            pend_hi.append(nhi)
    finally:
        ev.close()
    return ResidualBound(upper=np.maximum(upper, best), lower=best, boxes_processed=processed, witness=witness)
