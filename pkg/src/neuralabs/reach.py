"""Flowpipe reachability for hybrid automata with affine modes and box disturbance.

Within a mode ``x' = A x + b + d`` with ``|d_i| <= e_i`` the reachable set is
propagated on a fixed time grid with zonotopes:

    Z_{k+1} = Phi Z_k + G(h) b + V,     Phi = exp(A h),  G(h) = int_0^h exp(A s) ds

where ``V`` is the box ``G(|A|, h) e`` bounding the accumulated disturbance.
The set over ``[t_k, t_{k+1}]`` is the convex-hull enclosure of ``Z_k`` and its
undisturbed successor, bloated by an interpolation-error box and ``V``.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import BranchExplosion, DomainError, OrderOverflow, ValidationError
from .polylib import Box, Polyhedron, bbox, clip_polygon, lp_feasible, maximize, polygon_2d
from .simplex import linprog

log = logging.getLogger(__name__)

SAFE = "safe"
UNKNOWN = "unknown"


# ---------------------------------------------------------------- zonotopes


@dataclass(eq=False)
class Zonotope:
    center: np.ndarray
    generators: np.ndarray  # (n, m)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.generators = np.asarray(self.generators, dtype=float).reshape(self.center.size, -1)

    @classmethod
    def from_box(cls, box: Box) -> "Zonotope":
        return cls(box.center, np.diag(0.5 * box.width))

    @property
    def n(self) -> int:
        return self.center.size

    @property
    def order(self) -> float:
        return self.generators.shape[1] / self.n

    def radius(self) -> np.ndarray:
        return np.abs(self.generators).sum(axis=1)

    def box(self) -> Box:
        r = self.radius()
        return Box(self.center - r, self.center + r)

    def linear_map(self, M) -> "Zonotope":
        return Zonotope(M @ self.center, M @ self.generators)

    def translate(self, v) -> "Zonotope":
        return Zonotope(self.center + v, self.generators)

    def plus_box(self, radius) -> "Zonotope":
        radius = np.asarray(radius, dtype=float)
        keep = radius > 0
        if not keep.any():
            return self
        return Zonotope(self.center, np.hstack([self.generators, np.diag(radius)[:, keep]]))

    def support(self, d) -> float:
        d = np.asarray(d, dtype=float)
        return float(d @ self.center + np.abs(d @ self.generators).sum())

    def contains_point(self, x, tol: float = 1e-9) -> bool:
        """Exact membership via an LP over the generator coefficients."""
        G = self.generators
        m = G.shape[1]
        r = np.asarray(x, dtype=float) - self.center
        if m == 0:
            return bool(np.all(np.abs(r) <= tol))
        A = np.vstack([G, -G])
        b = np.concatenate([r + tol, -r + tol])
        res = linprog(np.zeros(m), A, b, -np.ones(m), np.ones(m))
        return res.status == "optimal"

    def halfspaces(self) -> Tuple[np.ndarray, np.ndarray]:
        """Facet description ``(A, c)`` with ``Z = {x : A x <= c}`` (``n <= 3``)."""
        n = self.n
        G = self.generators
        G = G[:, np.linalg.norm(G, axis=0) > 0]
        if n == 1 or G.shape[1] == 0:
            eye = np.eye(n)
            normals = np.vstack([eye, -eye]) if n == 1 or G.shape[1] == 0 else None
        elif n == 2:
            normals = np.stack([-G[1], G[0]], axis=1)
        elif n == 3:
            i, j = np.triu_indices(G.shape[1], 1)
            normals = np.cross(G[:, i].T, G[:, j].T)
            if normals.shape[0] == 0:
                normals = np.eye(3)
        else:
            raise ValueError("facet enumeration is implemented up to three dimensions")
        norms = np.linalg.norm(normals, axis=1)
        normals = normals[norms > 1e-14 * max(1.0, norms.max())]
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.vstack([normals, -normals, np.eye(n), -np.eye(n)])
        c = normals @ self.center + np.abs(normals @ G).sum(axis=1)
        return normals, c

    def reduce(self, max_order: float) -> "Zonotope":
        """Box the smallest generators so that the order stays within ``max_order``."""
        n = self.n
        G = self.generators
        G = G[:, np.any(G != 0, axis=0)]
        limit = int(max_order * n)
        if G.shape[1] <= limit:
            return Zonotope(self.center, G)
        score = np.abs(G).sum(axis=0) - np.abs(G).max(axis=0)
        order = np.argsort(score, kind="stable")
        n_box = G.shape[1] - limit + n
        small, big = order[:n_box], order[n_box:]
        boxed = np.abs(G[:, small]).sum(axis=1)
        out = np.hstack([G[:, np.sort(big)], np.diag(boxed)])
        if out.shape[1] > limit:
            raise OrderOverflow(f"zonotope order {out.shape[1] / n} exceeds cap {max_order}")
        return Zonotope(self.center, out)


def hull_enclosure(z1: Zonotope, z2: Zonotope) -> Zonotope:
    """Zonotope containing the convex hull of ``z1`` and ``z2``.

    Requires the generators to correspond (``z2`` a linear image of ``z1``).
    """
    G1, G2 = z1.generators, z2.generators
    c = 0.5 * (z1.center + z2.center)
    G = np.hstack([0.5 * (G1 + G2), 0.5 * (z1.center - z2.center)[:, None], 0.5 * (G1 - G2)])
    return Zonotope(c, G)


# ---------------------------------------------------------------- matrix exponential


def expm(M, tol: float = 1e-12) -> np.ndarray:
    """Scaling and squaring with a truncated Taylor series."""
    M = np.asarray(M, dtype=float)
    norm = np.abs(M).sum(axis=1).max() if M.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    X = M / (2.0**s)
    term = np.eye(M.shape[0])
    E = term.copy()
    for k in range(1, 40):
        term = term @ X / k
        E = E + term
        if np.abs(term).max() <= tol * np.abs(E).max():
            break
    for _ in range(s):
        E = E @ E
    return E


def phi_gamma(A, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """``exp(A h)`` and ``int_0^h exp(A s) ds`` from one augmented exponential."""
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A
    aug[:n, n:] = np.eye(n)
    E = expm(aug * h)
    return E[:n, :n], E[:n, n:]


@dataclass(frozen=True, eq=False)
class StepOperators:
    phi: np.ndarray
    gamma: np.ndarray
    gamma_abs: np.ndarray  # G(|A|, h), elementwise non-negative
    interp: np.ndarray  # bounds the chord error of the undisturbed flow over one step
    v_radius: np.ndarray  # disturbance box radius accumulated over one step


def step_operators(A, b, e, h: float) -> StepOperators:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    phi, gamma = phi_gamma(A, h)
    _, gabs = phi_gamma(np.abs(A), h)
    # y(t) = y0 + G(t) v with v = A y0 + b; the chord error is
    # sum_{k>=2} (t^k - t h^(k-1)) A^(k-1) / k! v, bounded termwise.
    absA = np.abs(A)
    tail = np.maximum(gabs - h * np.eye(n) - 0.5 * h * h * absA, 0.0)
    interp = 0.125 * h * h * absA + tail
    v_radius = gabs @ np.asarray(e, dtype=float)
    return StepOperators(phi, gamma, gabs, interp, v_radius)


# ---------------------------------------------------------------- flowpipes


@dataclass(eq=False)
class ReachSegment:
    mode: int
    t_lo: float
    t_hi: float
    set: Zonotope
    box: Box


@dataclass
class ReachConfig:
    step: float = 0.01
    max_order: float = 20.0
    bucket_steps: int = 10
    branch_cap: int = 10_000
    inflation: float = 1e-9
    max_lag_buckets: float = 2.0
    stop_on_bad: bool = False
    # "enclosure": one flowpipe whose steps absorb every mode they touch;
    # "branch": one branch per (mode, time bucket), hulled on arrival
    switching: str = "enclosure"
    init_splits: int = 1
    validation_rounds: int = 8
    # halve a piece when the mode-mixing error exceeds this multiple of the
    # disturbance, while fewer than max_pieces pieces are alive
    split_ratio: float = 1.0
    max_pieces: int = 64
    min_piece: float = 1e-4


@dataclass(eq=False)
class Flowpipe:
    segments: List[ReachSegment] = field(default_factory=list)
    verdict: str = UNKNOWN
    stats: dict = field(default_factory=dict)
    final_sets: List[Tuple[int, Zonotope]] = field(default_factory=list)

    def segments_at(self, t: float, tol: float = 1e-12) -> List[ReachSegment]:
        return [s for s in self.segments if s.t_lo - tol <= t <= s.t_hi + tol]

    def contains(self, t: float, x, tol: float = 1e-9) -> bool:
        """Is ``x`` inside some segment alive at time ``t``?"""
        x = np.asarray(x, dtype=float)
        for s in self.segments_at(t):
            if s.box.contains(x, tol) and s.set.contains_point(x, tol):
                return True
        return False

    def covers(self, times, states, tol: float = 1e-9) -> np.ndarray:
        """Vectorised membership: ``states[k, b]`` inside some segment alive at ``times[k]``.

        NaN states (trajectory already gone) count as covered.
        """
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        K, B, n = states.shape
        covered = np.any(np.isnan(states), axis=2)
        for s in self.segments:
            ks = np.nonzero((times >= s.t_lo - 1e-12) & (times <= s.t_hi + 1e-12))[0]
            if ks.size == 0:
                continue
            sub = states[ks]
            todo = ~covered[ks] & s.box.contains(sub, tol)
            if not todo.any():
                continue
            A, c = s.set.halfspaces()
            pts = sub[todo]
            inside = np.all(pts @ A.T <= c + tol * (1.0 + np.abs(c)), axis=1)
            kk, bb = np.nonzero(todo)
            covered[ks[kk[inside]], bb[inside]] = True
        return covered

    def to_csv(self) -> str:
        if not self.segments:
            return "t_lo,t_hi,mode\n"
        n = self.segments[0].box.n
        head = ["t_lo", "t_hi", "mode"] + [f"lo{i}" for i in range(n)] + [f"hi{i}" for i in range(n)]
        rows = [",".join(head)]
        for s in self.segments:
            vals = [repr(s.t_lo), repr(s.t_hi), str(s.mode)] + [repr(float(v)) for v in s.box.lo] + [repr(float(v)) for v in s.box.hi]
            rows.append(",".join(vals))
        return "\n".join(rows) + "\n"


def mode_flowpipe(
    A,
    b,
    e,
    init: Zonotope,
    t0: float,
    horizon: float,
    h: float,
    *,
    invariant: Optional[Polyhedron] = None,
    domain: Optional[Box] = None,
    max_order: float = 20.0,
    inflation: float = 1e-9,
    lag: float = 0.0,
    mode: int = 0,
    ops: Optional[StepOperators] = None,
) -> Tuple[List[ReachSegment], Optional[Zonotope]]:
    """Segments of one mode from ``t0`` until ``horizon`` or until the set leaves the invariant.

    ``lag`` widens every segment's time interval to the right (entry-time
    uncertainty inherited from earlier switches). Returns the segments and the
    set reached exactly at ``horizon`` (``None`` if the run stopped early).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    ops = ops or step_operators(A, b, e, h)
    gb = ops.gamma @ b
    Z = init.plus_box(np.full(n, inflation)) if inflation > 0 else init
    segments = []
    steps = max(0, int(math.ceil((horizon - t0) / h - 1e-9)))
    for k in range(steps):
        t_lo = t0 + k * h
        t_hi = min(t0 + (k + 1) * h, horizon)
        hk = t_hi - t_lo
        if hk < h * (1 - 1e-9):
            ops_k = step_operators(A, b, e, hk)
            gb_k = ops_k.gamma @ b
        else:
            ops_k, gb_k = ops, gb
        Zn = Z.linear_map(ops_k.phi).translate(gb_k)
        zbox = Z.box()
        v = np.abs(A @ zbox.center + b) + np.abs(A) @ (0.5 * zbox.width)
        bloat = ops_k.interp @ v + ops_k.v_radius
        seg = hull_enclosure(Z, Zn).plus_box(bloat).reduce(max_order)
        sbox = seg.box()
        if domain is not None:
            clipped = sbox.intersection(domain)
            if clipped is None:
                break
            if not domain.contains_box(sbox):
                sbox = clipped
        if invariant is not None and not _box_meets(sbox, invariant):
            break
        segments.append(ReachSegment(mode, t_lo, min(t_hi + lag, horizon), seg, sbox))
        Z = Zn.plus_box(ops_k.v_radius).reduce(max_order)
        if domain is not None:
            zb = Z.box()
            if not domain.contains_box(zb):
                inner = zb.intersection(domain)
                if inner is None:
                    break
                Z = Zonotope.from_box(inner)
    else:
        return segments, Z
    return segments, None


def _row_ranges(box: Box, A):
    """Min and max of every row ``a . x`` over the box."""
    c = A @ box.center
    r = np.abs(A) @ (0.5 * box.width)
    return c - r, c + r


def _classify(box: Box, p: Polyhedron, tol: float = 1e-12) -> int:
    """1 if the box lies inside ``p``, -1 if provably outside, 0 if cut."""
    if not p.box.intersects(box, tol=tol):
        return -1
    if p.A.shape[0] == 0:
        return 1 if p.box.contains_box(box, tol) else 0
    low, high = _row_ranges(box, p.A)
    if np.any(low > p.c + tol):
        return -1
    if np.all(high <= p.c + tol) and p.box.contains_box(box, tol):
        return 1
    return 0


def _propagate(box: Box, p: Polyhedron, rounds: int = 3) -> Optional[Box]:
    """Interval constraint propagation: a cheap superset of ``bbox(p ∩ box)``."""
    inner = box.intersection(p.box)
    if inner is None:
        return None
    lo, hi = inner.lo.copy(), inner.hi.copy()
    A, c = p.A, p.c
    for _ in range(rounds):
        changed = False
        for a, ci in zip(A, c):
            terms_lo = np.where(a > 0, a * lo, a * hi)
            total = terms_lo.sum()
            if total > ci + 1e-12:
                return None
            for k in np.nonzero(a)[0]:
                rest = total - terms_lo[k]
                bound = (ci - rest) / a[k]
                if a[k] > 0 and bound < hi[k]:
                    hi[k] = bound
                    changed = True
                elif a[k] < 0 and bound > lo[k]:
                    lo[k] = bound
                    changed = True
            if np.any(lo > hi + 1e-12):
                return None
        if not changed:
            break
    return Box(np.minimum(lo, hi), np.maximum(lo, hi))


def _box_meets(box: Box, p: Polyhedron) -> bool:
    kind = _classify(box, p)
    if kind != 0:
        return kind > 0
    return lp_feasible(p.with_box(box)).feasible


def _entry_box(box: Box, p: Polyhedron) -> Optional[Box]:
    """``bbox(p ∩ box)``; LPs only when the box is cut by ``p``."""
    kind = _classify(box, p)
    if kind < 0:
        return None
    if kind > 0:
        return box
    tight = _propagate(box, p)
    if tight is None:
        return None
    if _classify(tight, p) > 0:
        return tight
    return bbox(p.with_box(tight))


# ---------------------------------------------------------------- automaton reach


def reach(ha, cfg: Optional[ReachConfig] = None) -> Flowpipe:
    """Flowpipe of the automaton up to its horizon, with a safety verdict."""
    cfg = cfg or ReachConfig()
    if cfg.switching == "branch":
        return reach_branching(ha, cfg)
    if cfg.switching != "enclosure":
        raise ValueError(f"unknown switching scheme {cfg.switching!r}")
    return reach_enclosure(ha, cfg)


def reach_branching(ha, cfg: Optional[ReachConfig] = None) -> Flowpipe:
    """Propagate all branches to the horizon and decide safety.

    Successor sets are keyed by (mode, time bucket) and merged by box hull.
    Each branch carries a window of possible entry times; once that window
    exceeds ``cfg.max_lag_buckets`` buckets its segments are labelled up to
    the horizon instead, which stops boundary ping-pong from creating ever
    new branches.
    """
    cfg = cfg or ReachConfig()
    h = cfg.step
    T = ha.horizon
    bucket_len = cfg.bucket_steps * h
    max_lag = cfg.max_lag_buckets * bucket_len
    seeds = []
    for i, m in enumerate(ha.modes):
        seed_box = _entry_box(ha.init, m.invariant)
        if seed_box is not None:
            seeds.append((i, seed_box))
    if not seeds:
        raise ValidationError("the initial set meets no mode invariant")
    inv_boxes = [bbox(m.invariant) for m in ha.modes]
    ops_cache: Dict[int, StepOperators] = {}
    # work items keyed by (bucket, mode); value: [box, t_start, latest entry time]
    pending: Dict[Tuple[int, int], list] = {}
    done: Dict[Tuple[int, int], tuple] = {}
    heap: list = []
    stats = {"branches": 0, "merges": 0, "subsumed": 0, "segments": 0, "max_order": 0.0}

    def push(mode, box, t_start, t_entry_hi):
        if t_entry_hi - t_start > max_lag:
            t_entry_hi = T
        key = (int(math.floor(t_start / bucket_len + 1e-9)), mode)
        if key in pending:
            cur = pending[key]
            cur[0] = cur[0].hull(box)
            cur[1] = min(cur[1], t_start)
            cur[2] = max(cur[2], t_entry_hi)
            stats["merges"] += 1
            return
        if key in done:
            old_box, old_start, old_entry = done[key]
            if old_box.contains_box(box, tol=1e-12) and old_start <= t_start and t_entry_hi <= old_entry:
                stats["subsumed"] += 1
                return
            box, t_start, t_entry_hi = box.hull(old_box), min(t_start, old_start), max(t_entry_hi, old_entry)
            if t_entry_hi - t_start > max_lag:
                t_entry_hi = T
        pending[key] = [box, t_start, t_entry_hi]
        heapq.heappush(heap, key)

    for i, box in seeds:
        push(i, box, 0.0, 0.0)
    fp = Flowpipe(stats=stats)
    while heap:
        key = heapq.heappop(heap)
        item = pending.pop(key, None)
        if item is None:
            continue
        box, t_start, t_entry_hi = item
        done[key] = (box, t_start, t_entry_hi)
        stats["branches"] += 1
        if stats["branches"] > cfg.branch_cap:
            fp.verdict = UNKNOWN
            fp.stats["error"] = str(BranchExplosion(f"more than {cfg.branch_cap} branches"))
            return fp
        i = key[1]
        mode = ha.modes[i]
        if i not in ops_cache:
            ops_cache[i] = step_operators(mode.A, mode.b, mode.disturbance.hi, h)
        segs, final = mode_flowpipe(
            mode.A,
            mode.b,
            mode.disturbance.hi,
            Zonotope.from_box(box),
            t_start,
            T,
            h,
            invariant=mode.invariant,
            domain=ha.domain,
            max_order=cfg.max_order,
            inflation=cfg.inflation,
            lag=t_entry_hi - t_start,
            mode=i,
            ops=ops_cache[i],
        )
        fp.segments.extend(segs)
        stats["segments"] += len(segs)
        if final is not None:
            fp.final_sets.append((i, final))
        for s in segs:
            stats["max_order"] = max(stats["max_order"], s.set.order)
            if cfg.stop_on_bad and not segment_misses(s, ha.bad):
                fp.verdict = UNKNOWN
                return fp
            if s.t_lo >= T:
                continue
            for j in ha.successors(i):
                jb = inv_boxes[j]
                if jb is None or not jb.intersects(s.box, tol=1e-12):
                    continue
                entry = _entry_box(s.box, ha.modes[j].invariant)
                if entry is not None:
                    push(j, entry, s.t_lo, s.t_hi)
    fp.verdict = check_safety(fp, ha.bad)
    return fp


class _ModeTable:
    """All invariants stacked for vectorised box tests."""

    def __init__(self, ha):
        modes = ha.modes
        n = ha.n
        rows = max((m.invariant.A.shape[0] for m in modes), default=0)
        self.A = np.zeros((len(modes), rows, n))
        self.c = np.zeros((len(modes), rows))  # padding rows read 0 <= 0
        for i, m in enumerate(modes):
            k = m.invariant.A.shape[0]
            self.A[i, :k] = m.invariant.A
            self.c[i, :k] = m.invariant.c
        self.absA = np.abs(self.A)
        self.flow_A = np.array([m.A for m in modes]).reshape(len(modes), n, n)
        self.flow_b = np.array([m.b for m in modes]).reshape(len(modes), n)
        self.e = np.array([m.disturbance.hi for m in modes]).reshape(len(modes), n)
        # in the plane the mismatch is bounded exactly at polygon vertices
        self.polygons = [polygon_2d(m.invariant) for m in modes] if n == 2 else None

    def meeting(self, box: Box, tol: float = 1e-12) -> np.ndarray:
        """Indices of invariants that may intersect the box (never misses one)."""
        low = self.A @ box.center - self.absA @ (0.5 * box.width)
        return np.nonzero(np.all(low <= self.c + tol, axis=1))[0]

    def containing(self, x, tol: float = 1e-12) -> np.ndarray:
        return np.nonzero(np.all(self.A @ x <= self.c + tol, axis=1))[0]

    def linearize(self, box: Box, samples: int = 5):
        """Affine fit of the piecewise flow over the box and a bound on its error.

        Returns ``(A, b, err, touched)`` with ``|flow_j(x) - (A x + b)| <= err``
        on ``box ∩ inv_j`` for every mode ``j`` in ``touched``; the bound comes
        from the vertices of ``box ∩ inv_j`` in one or two dimensions and from
        two LPs per mode and component otherwise.
        """
        touched = self.meeting(box)
        if touched.size == 1:
            j = touched[0]
            return self.flow_A[j], self.flow_b[j], np.zeros(box.n), touched
        n = box.n
        axes = [np.linspace(lo, hi, samples) for lo, hi in zip(box.lo, box.hi)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        inside = np.all(np.einsum("mrn,kn->kmr", self.A[touched], X) <= self.c[touched][None] + 1e-12, axis=2)
        owner = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
        keep = owner >= 0
        X, owner = X[keep], touched[owner[keep]]
        Y = np.einsum("kij,kj->ki", self.flow_A[owner], X) + self.flow_b[owner]
        design = np.hstack([X, np.ones((X.shape[0], 1))])
        coef, *_ = np.linalg.lstsq(design, Y, rcond=None)
        A_ref, b_ref = coef[:n].T, coef[n]
        err = np.zeros(n)
        live = []
        for j in touched:
            dA = self.flow_A[j] - A_ref
            db = self.flow_b[j] - b_ref
            # cheap box bound first; LPs only where it is not already below the running max
            crude = np.abs(dA @ box.center + db) + np.abs(dA) @ (0.5 * box.width)
            if np.all(crude <= err):
                live.append(j)
                continue
            if n <= 2:
                V = self._vertices(j, box)
                if V.shape[0] == 0:
                    continue
                dev = np.abs(V @ dA.T + db)
                slack = 1e-9 * (np.abs(V) @ np.abs(dA).T + np.abs(db)) + 1e-12
                err = np.maximum(err, (dev + slack).max(axis=0))
                live.append(j)
                continue
            poly = Polyhedron(self.A[j], self.c[j], box)
            hit = False
            for i in range(n):
                if crude[i] <= err[i]:
                    continue
                up = maximize(poly, dA[i])
                if up is None:
                    break
                down = maximize(poly, -dA[i])
                hit = True
                err[i] = max(err[i], abs(up + db[i]), abs(db[i] - down))
            if hit or np.all(crude <= err):
                live.append(j)
        return A_ref, b_ref, err, np.array(live, dtype=int)

    def _vertices(self, j: int, box: Box) -> np.ndarray:
        if box.n == 1:
            a, c = self.A[j][:, 0], self.c[j]
            lo, hi = box.lo[0], box.hi[0]
            pos, neg = a > 0, a < 0
            if pos.any():
                hi = min(hi, float(np.min(c[pos] / a[pos])))
            if neg.any():
                lo = max(lo, float(np.max(c[neg] / a[neg])))
            return np.array([[lo], [hi]]) if lo <= hi + 1e-12 else np.zeros((0, 1))
        P = self.polygons[j]
        if P.shape[0] == 0:
            return P
        eye = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        return clip_polygon(P, eye, np.concatenate([box.hi, -box.lo]))


def _grid(box: Box, k: int) -> List[Box]:
    if k <= 1:
        return [box]
    w = box.width / k
    out = []
    for cell in itertools.product(range(k), repeat=box.n):
        lo = box.lo + np.array(cell) * w
        out.append(Box(lo, np.where(np.array(cell) == k - 1, box.hi, lo + w)))
    return out


def _step_segment(Z: Zonotope, A, b, ops: StepOperators, gb, E):
    """Set over one step under ``x' in A x + b + [-E, E]`` and the undisturbed successor."""
    Zn = Z.linear_map(ops.phi).translate(gb)
    zbox = Z.box()
    v = np.abs(A @ zbox.center + b) + np.abs(A) @ (0.5 * zbox.width)
    dist = ops.gamma_abs @ E
    return hull_enclosure(Z, Zn).plus_box(ops.interp @ v + dist), Zn, dist


def _split_zonotope(Z: Zonotope) -> Tuple[Zonotope, Zonotope]:
    """Halve the longest generator; the two halves cover ``Z`` exactly."""
    G = Z.generators
    k = int(np.argmax(np.linalg.norm(G, axis=0)))
    g = G[:, k]
    H = G.copy()
    H[:, k] = 0.5 * g
    return Zonotope(Z.center - 0.5 * g, H), Zonotope(Z.center + 0.5 * g, H.copy())


class _Stepper:
    """One validated step of the enclosure scheme for a single piece."""

    def __init__(self, ha, table: _ModeTable, rounds: int):
        self.ha = ha
        self.table = table
        self.rounds = rounds
        self.dom = ha.domain
        self._ops: Dict[Tuple[int, float], tuple] = {}

    def ops_for(self, i: int, hk: float):
        key = (i, hk)
        if key not in self._ops:
            m = self.ha.modes[i]
            ops = step_operators(m.A, m.b, np.zeros(self.ha.n), hk)
            self._ops[key] = (ops, ops.gamma @ m.b)
        return self._ops[key]

    def __call__(self, Z: Zonotope, hk: float):
        """``(segment, next set, segment box, reference mode, mismatch, retries)``; segment None if not validated."""
        table, dom = self.table, self.dom
        zbox = Z.box().intersection(dom)
        here = table.meeting(zbox)
        inside = table.containing(np.clip(Z.center, dom.lo, dom.hi))
        ref = int(inside[0]) if inside.size else int(here[0])
        m = self.ha.modes[ref]
        ops, gb = self.ops_for(ref, hk)
        seg, Zn, dist = _step_segment(Z, m.A, m.b, ops, gb, table.e[here].max(axis=0))
        sb = seg.box()
        B = Box(sb.lo - 0.1 * sb.width - 1e-9, sb.hi + 0.1 * sb.width + 1e-9)
        err = np.zeros(Z.n)
        for tries in range(self.rounds):
            Bd = B.intersection(dom)
            A_ref, b_ref, err, touched = table.linearize(Bd)
            if touched.size == 1:
                ref = int(touched[0])
                ops, gb = self.ops_for(ref, hk)
            else:
                ops = step_operators(A_ref, b_ref, np.zeros(Z.n), hk)
                gb = ops.gamma @ b_ref
            E = table.e[touched].max(axis=0) + err
            seg, Zn, dist = _step_segment(Z, A_ref, b_ref, ops, gb, E)
            sb = seg.box()
            if B.contains_box(sb):
                return seg, Zn.plus_box(dist), sb, ref, err, tries
            grown = B.hull(sb)
            B = Box(grown.lo - 0.1 * grown.width, grown.hi + 0.1 * grown.width)
        return None, None, sb, ref, err, self.rounds


def reach_enclosure(ha, cfg: Optional[ReachConfig] = None) -> Flowpipe:
    """Flowpipe whose steps cover every mode they touch.

    Each step follows an affine reference flow: the mode's own when the step
    stays in one mode, otherwise a least-squares fit of the touched modes,
    whose deviation (bounded by LPs on the step box) joins the disturbance.
    The step is accepted once its segment lies inside the box used for that
    bound, which makes the bound valid for the whole step. Pieces whose
    deviation dominates the disturbance are halved, up to ``cfg.max_pieces``.
    """
    cfg = cfg or ReachConfig()
    h = cfg.step
    T = ha.horizon
    table = _ModeTable(ha)
    dom = ha.domain
    pieces = [p.intersection(dom) for p in _grid(ha.init, cfg.init_splits)]
    pieces = [p for p in pieces if p is not None and table.meeting(p).size]
    if not pieces:
        raise ValidationError("the initial set meets no mode invariant")
    step = _Stepper(ha, table, cfg.validation_rounds)
    stats = {"branches": len(pieces), "merges": 0, "segments": 0, "max_order": 0.0, "retries": 0, "splits": 0, "max_pieces": len(pieces)}
    fp = Flowpipe(stats=stats)
    live = []
    for p in pieces:
        Z = Zonotope.from_box(p)
        live.append(Z.plus_box(np.full(ha.n, cfg.inflation)) if cfg.inflation > 0 else Z)
    steps = max(0, int(math.ceil(T / h - 1e-9)))
    for k in range(steps):
        t_lo = k * h
        t_hi = min((k + 1) * h, T)
        hk = t_hi - t_lo
        todo = list(reversed(live))
        live = []
        while todo:
            Z = todo.pop()
            if Z.box().intersection(dom) is None or table.meeting(Z.box().intersection(dom)).size == 0:
                continue  # left the domain
            seg, Zn, sb, ref, err, tries = step(Z, hk)
            stats["retries"] += tries
            e_ref = table.e[ref]
            # per-component comparison against the modes' own disturbance
            coarse = seg is None or np.any(err > cfg.split_ratio * np.maximum(e_ref, 1e-12))
            room = len(live) + len(todo) + 2 <= cfg.max_pieces
            if coarse and room and np.max(Z.radius()) > cfg.min_piece:
                a, b = _split_zonotope(Z)
                todo.extend([b, a])
                stats["splits"] += 1
                continue
            if seg is None:
                fp.verdict = UNKNOWN
                stats["error"] = f"step enclosure not validated at t={t_lo:.6g}"
                return fp
            seg = seg.reduce(cfg.max_order)
            clipped = sb.intersection(dom)
            if clipped is None:
                continue
            fp.segments.append(ReachSegment(ref, t_lo, t_hi, seg, clipped))
            stats["segments"] += 1
            stats["max_order"] = max(stats["max_order"], seg.order)
            if cfg.stop_on_bad and not segment_misses(fp.segments[-1], ha.bad):
                fp.verdict = UNKNOWN
                return fp
            Zn = Zn.reduce(cfg.max_order)
            # no clipping: states outside the domain are spurious but harmless,
            # while re-boxing at every step would destroy the zonotope's shape
            if Zn.box().intersects(dom):
                live.append(Zn)
        stats["max_pieces"] = max(stats["max_pieces"], len(live))
        if not live:
            break
    for Z in live:
        owner = table.containing(np.clip(Z.center, dom.lo, dom.hi))
        fp.final_sets.append((int(owner[0]) if owner.size else -1, Z))
    fp.verdict = check_safety(fp, ha.bad)
    return fp


def segment_misses(seg: ReachSegment, bad) -> bool:
    """Provably disjoint from ``bad`` (a Box or Polyhedron)."""
    if isinstance(bad, Box):
        if not seg.box.intersects(bad):
            return True
        A, c = bad.halfspaces()
    else:
        A, c = bad.all_rows()
        bb = bad.box
        if not seg.box.intersects(bb):
            return True
    z = seg.set
    # separation along the facet normals of the bad set
    for a, ci in zip(A, c):
        if -z.support(-a) > ci + 1e-12:
            return True
    # exact test: does some point of the zonotope (within its clipped box) satisfy all rows?
    G = z.generators
    m = G.shape[1]
    if m == 0:
        return not bool(np.all(A @ z.center <= c + 1e-12))
    rows = np.vstack([A @ G, G, -G])
    rhs = np.concatenate([c - A @ z.center, seg.box.hi - z.center, z.center - seg.box.lo])
    res = linprog(np.zeros(m), rows, rhs, -np.ones(m), np.ones(m))
    return res.status != "optimal"


def check_safety(fp: Flowpipe, bad) -> str:
    for s in fp.segments:
        if not segment_misses(s, bad):
            return UNKNOWN
    return SAFE


# ---------------------------------------------------------------- concrete simulation


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray  # (K+1,)
    states: np.ndarray  # (K+1, B, n); NaN after exit
    exit_time: np.ndarray  # (B,), inf if the trajectory stayed inside

    def alive(self, k: int) -> np.ndarray:
        return self.times[k] < self.exit_time


def simulate_concrete(model, x0, T: float, h: float) -> Trajectory:
    """Classical RK4; each trajectory halts when it leaves the domain or ``f`` is undefined."""
    X = np.array(x0, dtype=float, ndmin=2)
    B, n = X.shape
    steps = int(round(T / h))
    times = np.arange(steps + 1) * h
    out = np.full((steps + 1, B, n), np.nan)
    exit_time = np.full(B, np.inf)
    dom = model.domain
    live = dom.contains(X)
    exit_time[~live] = 0.0
    out[0, live] = X[live]

    def f(Y):
        try:
            return model.f(Y)
        except DomainError:
            out = np.full_like(Y, np.nan)
            for r, y in enumerate(Y):
                try:
                    out[r] = model.f(y)
                except DomainError:
                    pass
            return out

    for k in range(steps):
        idx = np.nonzero(live)[0]
        if idx.size == 0:
            break
        Y = X[idx]
        k1 = f(Y)
        k2 = f(Y + 0.5 * h * k1)
        k3 = f(Y + 0.5 * h * k2)
        k4 = f(Y + h * k3)
        Yn = Y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ok = np.all(np.isfinite(Yn), axis=1) & dom.contains(Yn)
        X[idx[ok]] = Yn[ok]
        out[k + 1, idx[ok]] = Yn[ok]
        gone = idx[~ok]
        exit_time[gone] = times[k + 1]
        live[gone] = False
    return Trajectory(times, out, exit_time)
