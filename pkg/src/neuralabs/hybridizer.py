"""Compile a ReLU abstraction into a hybrid automaton with affine modes.

Each feasible activation configuration becomes a mode. Its invariant is the
set of states enabling that configuration, obtained by pulling each neuron's
sign condition back through the affine map the earlier layers reduce to
under the same configuration (one halfspace per hidden neuron).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ModeExplosion, NumericalInstability
from .netlearn import NeuralNet, pre_activations
from .polylib import Box, Polyhedron, bbox, chebyshev, lp_feasible, maximize

DEGENERACY = 1e-7  # relative to the widest domain axis
MODE_CAP = 4096


@dataclass(frozen=True)
class Configuration:
    bits: Tuple[Tuple[int, ...], ...]

    @classmethod
    def from_string(cls, text: str) -> "Configuration":
        if not text:
            return cls(())
        return cls(tuple(tuple(int(ch) for ch in part) for part in text.split("-")))

    def __str__(self):
        return "-".join("".join(str(b) for b in layer) for layer in self.bits)

    @property
    def key(self) -> str:
        return str(self)


def config_at(net: NeuralNet, x) -> Configuration:
    """Activation pattern at ``x``; a pre-activation of exactly 0 counts as active."""
    pre = pre_activations(net, np.asarray(x, dtype=float))
    return Configuration(tuple(tuple(int(v) for v in (p >= 0)) for p in pre))


def _check(net: NeuralNet, C: Configuration):
    if [len(c) for c in C.bits] != net.hidden:
        raise ValueError(f"configuration {C} does not match hidden sizes {net.hidden}")


def affine_restriction(net: NeuralNet, C: Configuration) -> Tuple[np.ndarray, np.ndarray]:
    """``(A, b)`` with ``net(x) = A x + b`` wherever ``C`` is the active pattern."""
    _check(net, C)
    M = np.eye(net.n)
    v = np.zeros(net.n)
    for W, b, c in zip(net.weights[:-1], net.biases[:-1], C.bits):
        d = np.asarray(c, dtype=float)
        M = d[:, None] * (W @ M)
        v = d * (W @ v + b)
    return net.weights[-1] @ M, net.weights[-1] @ v + net.biases[-1]


def invariant_polyhedron(net: NeuralNet, C: Configuration, domain: Box) -> Polyhedron:
    """One halfspace per hidden neuron, intersected with the domain box."""
    _check(net, C)
    rows, rhs = [], []
    M = np.eye(net.n)
    v = np.zeros(net.n)
    for W, b, c in zip(net.weights[:-1], net.biases[:-1], C.bits):
        a = W @ M
        beta = W @ v + b
        s = 2.0 * np.asarray(c, dtype=float) - 1.0
        # s * (a x + beta) >= 0  <=>  -s a x <= s beta
        rows.append(-s[:, None] * a)
        rhs.append(s * beta)
        d = np.asarray(c, dtype=float)
        M = d[:, None] * a
        v = d * beta
    if not rows:
        return domain.as_polyhedron()
    return Polyhedron(np.vstack(rows), np.concatenate(rhs), domain)


def _radius_ok(p: Polyhedron, threshold: float) -> bool:
    try:
        return chebyshev(p).radius >= threshold
    except NumericalInstability:
        return True  # keep the region when the LP cannot decide


def enumerate_modes(net: NeuralNet, domain: Box, cap: int = MODE_CAP, threshold: Optional[float] = None) -> List[Tuple[Configuration, Polyhedron]]:
    """Depth-first search over neurons, branching only where a hyperplane cuts the region."""
    thr = DEGENERACY * float(domain.width.max()) if threshold is None else threshold
    hidden = net.hidden
    if not hidden:
        return [(Configuration(()), domain.as_polyhedron())]
    found = []
    n = net.n
    # stack items: (layer, neuron, bits so far, M, v, rows A, rows c, layer pre-activation map)
    W0, b0 = net.weights[0], net.biases[0]
    stack = [(0, 0, (), (), W0 @ np.eye(n), b0.copy(), np.zeros((0, n)), np.zeros(0))]
    while stack:
        layer, j, done_layers, cur, a_map, beta, A, c = stack.pop()
        if j == hidden[layer]:
            d = np.asarray(cur, dtype=float)
            M = d[:, None] * a_map
            v = d * beta
            done_layers = done_layers + (cur,)
            if layer + 1 == len(hidden):
                C = Configuration(done_layers)
                inv = invariant_polyhedron(net, C, domain)
                if _radius_ok(inv, thr):
                    found.append((C, inv))
                    if len(found) > cap:
                        raise ModeExplosion(f"more than {cap} modes")
                continue
            W, b = net.weights[layer + 1], net.biases[layer + 1]
            stack.append((layer + 1, 0, done_layers, (), W @ M, W @ v + b, A, c))
            continue
        a, bt = a_map[j], beta[j]
        children = []
        for bit in (0, 1):  # pushed so that the inactive branch is explored first
            s = 2.0 * bit - 1.0
            A2 = np.vstack([A, -s * a])
            c2 = np.concatenate([c, [s * bt]])
            if _radius_ok(Polyhedron(A2, c2, domain), thr):
                children.append((layer, j + 1, done_layers, cur + (bit,), a_map, beta, A2, c2))
        stack.extend(reversed(children))
    found.sort(key=lambda item: item[0].key)
    return found


@dataclass(eq=False)
class Mode:
    config: Configuration
    invariant: Polyhedron
    A: np.ndarray
    b: np.ndarray
    disturbance: Box

    def flow(self, x):
        return np.asarray(x) @ self.A.T + self.b


@dataclass(frozen=True, eq=False)
class Transition:
    src: int
    dst: int
    guard: Polyhedron


@dataclass(eq=False)
class HybridAutomaton:
    modes: List[Mode]
    transitions: List[Transition]
    domain: Box
    init: Box
    bad: Box
    horizon: float
    name: str = "automaton"
    variables: Tuple[str, ...] = ()
    _succ: Optional[dict] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.domain.n

    def successors(self, i: int) -> List[int]:
        if self._succ is None:
            succ = {}
            for t in self.transitions:
                succ.setdefault(t.src, []).append(t.dst)
            self._succ = succ
        return self._succ.get(i, [])

    def modes_at(self, x, tol: float = 1e-9) -> List[int]:
        return [i for i, m in enumerate(self.modes) if m.invariant.contains(x, tol)]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "variables": list(self.variables),
            "domain": self.domain.bounds(),
            "modes": [
                {
                    "config": m.config.key,
                    "A": m.A.tolist(),
                    "b": m.b.tolist(),
                    "inv": [{"a": a.tolist(), "c": float(ci)} for a, ci in zip(m.invariant.A, m.invariant.c)],
                    "dist": m.disturbance.hi.tolist(),
                }
                for m in self.modes
            ],
            "transitions": [{"src": t.src, "dst": t.dst} for t in self.transitions],
            "init": self.init.bounds(),
            "bad": self.bad.bounds(),
            "horizon": self.horizon,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    @classmethod
    def from_json(cls, obj: dict) -> "HybridAutomaton":
        domain = Box.from_bounds(obj["domain"])
        n = domain.n
        modes = []
        for m in obj["modes"]:
            A = np.array([r["a"] for r in m["inv"]], dtype=float).reshape(-1, n)
            c = np.array([r["c"] for r in m["inv"]], dtype=float)
            dist = np.asarray(m["dist"], dtype=float)
            modes.append(
                Mode(
                    Configuration.from_string(m["config"]),
                    Polyhedron(A, c, domain),
                    np.asarray(m["A"], dtype=float).reshape(n, n),
                    np.asarray(m["b"], dtype=float),
                    Box(-dist, dist),
                )
            )
        trans = [Transition(t["src"], t["dst"], modes[t["dst"]].invariant) for t in obj["transitions"]]
        return cls(
            modes,
            trans,
            domain,
            Box.from_bounds(obj["init"]),
            Box.from_bounds(obj["bad"]),
            float(obj["horizon"]),
            obj.get("name", "automaton"),
            tuple(obj.get("variables", ())),
        )

    @classmethod
    def loads(cls, text: str) -> "HybridAutomaton":
        return cls.from_json(json.loads(text))


def _intersect_rows(p: Polyhedron, q: Polyhedron) -> Polyhedron:
    return Polyhedron(np.vstack([p.A, q.A]), np.concatenate([p.c, q.c]), p.box)


def _outward_flow_possible(mode: Mode, shared: Polyhedron, tol: float = 1e-9) -> bool:
    """Can the source flow leave through the shared boundary?

    Checks every source facet the shared set lies on; if on all of them the
    disturbance-inflated flow points strictly inward, the crossing is impossible.
    """
    rows, rhs = mode.invariant.all_rows()
    tight = []
    for a, ci in zip(rows, rhs):
        low = maximize(shared, -a)
        if low is not None and -low >= ci - tol * max(1.0, abs(ci)):
            tight.append(a)
    if not tight:
        return True
    e = mode.disturbance.hi
    for a in tight:
        # max over the shared set of a . (A x + b) + |a| . e
        best = maximize(shared, a @ mode.A)
        if best is None:
            return True
        if best + float(a @ mode.b) + float(np.abs(a) @ e) > -tol:
            return True
    return False


def build_transitions(modes: Sequence[Mode], lie_pruning: bool = False) -> List[Transition]:
    """Both directions between every pair whose closed invariants meet."""
    boxes = [bbox(m.invariant) for m in modes]
    out = []
    for i in range(len(modes)):
        for j in range(i + 1, len(modes)):
            bi, bj = boxes[i], boxes[j]
            if bi is None or bj is None or not bi.intersects(bj, tol=1e-9):
                continue
            shared = _intersect_rows(modes[i].invariant, modes[j].invariant)
            if not lp_feasible(shared).feasible:
                continue
            for s, d in ((i, j), (j, i)):
                if lie_pruning and not _outward_flow_possible(modes[s], shared):
                    continue
                out.append(Transition(s, d, modes[d].invariant))
    out.sort(key=lambda t: (t.src, t.dst))
    return out


def build_automaton(abstraction, model, *, lie_pruning: bool = False, cap: int = MODE_CAP) -> HybridAutomaton:
    net = abstraction.net
    e = abstraction.bound.per_component
    dist = Box(-e, e)
    modes = []
    for C, inv in enumerate_modes(net, model.domain, cap=cap):
        A, b = affine_restriction(net, C)
        modes.append(Mode(C, inv, A, b, dist))
    trans = build_transitions(modes, lie_pruning=lie_pruning)
    return HybridAutomaton(modes, trans, model.domain, model.init, model.bad, model.horizon, model.name, tuple(model.variables))
