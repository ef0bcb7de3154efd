"""ReLU networks: evaluation, enclosures, datasets and training."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import interval as iv
from .errors import DimensionMismatch, ModelDomainError, NonFiniteLoss, DomainError


@dataclass(frozen=True, eq=False)
class NeuralNet:
    """Feed-forward ReLU network; the output layer is affine."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=float, ndmin=2) for w in self.weights)
        bs = tuple(np.array(b, dtype=float, ndmin=1) for b in self.biases)
        if len(ws) != len(bs) or not ws:
            raise DimensionMismatch("need one bias per weight matrix")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.shape[0] != b.shape[0]:
                raise DimensionMismatch(f"layer {k}: weight rows {w.shape[0]} != bias size {b.shape[0]}")
            if k and w.shape[1] != ws[k - 1].shape[0]:
                raise DimensionMismatch(f"layer {k}: expects {w.shape[1]} inputs, previous layer has {ws[k - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite network parameter")
            w.setflags(write=False)
            b.setflags(write=False)
        if ws[0].shape[1] != ws[-1].shape[0]:
            raise DimensionMismatch("input and output dimensions differ")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def dims(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n(self) -> int:
        return self.weights[0].shape[1]

    @property
    def hidden(self) -> List[int]:
        return self.dims[1:-1]

    def __call__(self, x):
        return forward(self, x)

    def to_json(self) -> dict:
        return {
            "dims": self.dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NeuralNet":
        net = cls(tuple(np.array(w, dtype=float) for w in obj["weights"]), tuple(np.array(b, dtype=float) for b in obj["biases"]))
        if "dims" in obj and list(obj["dims"]) != net.dims:
            raise DimensionMismatch(f"declared dims {obj['dims']} do not match weights {net.dims}")
        return net

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "NeuralNet":
        return cls.from_json(json.loads(text))


def init_net(dims: Sequence[int], seed: int = 0) -> NeuralNet:
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)), small uniform biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in))
    return NeuralNet(tuple(ws), tuple(bs))


def _check_input(net: NeuralNet, x: np.ndarray):
    if x.shape[-1] != net.n:
        raise DimensionMismatch(f"input has dimension {x.shape[-1]}, network expects {net.n}")


def forward(net: NeuralNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_input(net, x)
    y = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        y = y @ w.T + b
        if k < last:
            y = np.maximum(y, 0.0)
    return y


def pre_activations(net: NeuralNet, x) -> List[np.ndarray]:
    """Hidden-layer pre-activations for a point or batch."""
    x = np.asarray(x, dtype=float)
    _check_input(net, x)
    out = []
    y = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = y @ w.T + b
        out.append(z)
        y = np.maximum(z, 0.0)
    return out


def _affine_interval(w, b, lo, hi):
    c = 0.5 * (lo + hi)
    r = 0.5 * (hi - lo)
    zc = c @ w.T + b
    zr = r @ np.abs(w).T
    return iv.widen(zc - zr, zc + zr)


def interval_forward(net: NeuralNet, lo, hi):
    """Enclosure of the network over a box (or a batch of boxes ``(B, n)``)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    _check_input(net, lo)
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        lo, hi = _affine_interval(w, b, lo, hi)
        if k < last:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return lo, hi


def jacobian_interval(net: NeuralNet, lo, hi):
    """Interval enclosure of the (generalised) Jacobian over boxes ``(B, n)``.

    Neurons whose pre-activation interval straddles 0 contribute a slope in
    ``[0, 1]``; returns ``(B, m, n)`` lower and upper matrices.
    """
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    _check_input(net, lo)
    B = lo.shape[0]
    w0 = net.weights[0]
    jlo = np.broadcast_to(w0, (B,) + w0.shape).copy()
    jhi = jlo.copy()
    zlo, zhi = lo, hi
    for k in range(1, len(net.weights)):
        zlo, zhi = _affine_interval(net.weights[k - 1], net.biases[k - 1], zlo, zhi)
        dlo = (zlo > 0).astype(float)[:, :, None]
        dhi = (zhi >= 0).astype(float)[:, :, None]
        jlo, jhi = np.where(jlo >= 0, dlo * jlo, dhi * jlo), np.where(jhi >= 0, dhi * jhi, dlo * jhi)
        zlo, zhi = np.maximum(zlo, 0.0), np.maximum(zhi, 0.0)
        w = net.weights[k]
        mid = 0.5 * (jlo + jhi)
        rad = 0.5 * (jhi - jlo)
        c = np.einsum("ij,bjn->bin", w, mid)
        r = np.einsum("ij,bjn->bin", np.abs(w), rad)
        jlo, jhi = iv.widen(c - r, c + r)
    return jlo, jhi


def _concretize(A, c, lo, hi):
    """Min and max of ``A @ x + c`` over boxes; A is (B, m, n)."""
    Ap, Am = np.maximum(A, 0.0), np.minimum(A, 0.0)
    low = np.einsum("bmn,bn->bm", Ap, lo) + np.einsum("bmn,bn->bm", Am, hi) + c
    up = np.einsum("bmn,bn->bm", Ap, hi) + np.einsum("bmn,bn->bm", Am, lo) + c
    scale = np.einsum("bmn,bn->bm", np.abs(A), np.maximum(np.abs(lo), np.abs(hi))) + np.abs(c) + 1.0
    return low, up, scale


def linear_bounds(net: NeuralNet, lo, hi):
    """Affine lower/upper bounding functions of the network over each box.

    Returns ``(La, lc, Ua, uc, out_lo, out_hi)``: for every ``x`` in box ``b``,
    ``La[b] @ x + lc[b] <= net(x) <= Ua[b] @ x + uc[b]`` and the concrete
    output enclosure ``[out_lo, out_hi]``. Unstable neurons use the standard
    triangle relaxation.
    """
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    _check_input(net, lo)
    B, n = lo.shape
    w0, b0 = net.weights[0], net.biases[0]
    La = np.broadcast_to(w0, (B,) + w0.shape).copy()
    Ua = La.copy()
    lc = np.broadcast_to(b0, (B, b0.size)).copy()
    uc = lc.copy()
    ilo, ihi = _affine_interval(w0, b0, lo, hi)
    last = len(net.weights) - 1
    for k in range(1, last + 1):
        l, _, s1 = _concretize(La, lc, lo, hi)
        _, u, s2 = _concretize(Ua, uc, lo, hi)
        slack = 1e-13 * np.maximum(s1, s2)
        l = np.maximum(l - slack, ilo)
        u = np.minimum(u + slack, ihi)
        active = l >= 0
        dead = u <= 0
        unstable = ~(active | dead)
        denom = np.where(unstable, u - l, 1.0)
        slope = np.where(unstable, u / denom, np.where(active, 1.0, 0.0))
        alpha = np.where(unstable, (u > -l).astype(float), np.where(active, 1.0, 0.0))
        # y_up = slope * (z_up - l_unstable); y_lo = alpha * z_lo
        shift = np.where(unstable, -slope * l, 0.0)
        YUa = Ua * slope[:, :, None]
        YUc = uc * slope + shift
        YLa = La * alpha[:, :, None]
        YLc = lc * alpha
        ilo, ihi = np.maximum(ilo, 0.0), np.maximum(ihi, 0.0)
        w, b = net.weights[k], net.biases[k]
        Wp, Wm = np.maximum(w, 0.0), np.minimum(w, 0.0)
        La = np.einsum("oh,bhn->bon", Wp, YLa) + np.einsum("oh,bhn->bon", Wm, YUa)
        lc = YLc @ Wp.T + YUc @ Wm.T + b
        Ua = np.einsum("oh,bhn->bon", Wp, YUa) + np.einsum("oh,bhn->bon", Wm, YLa)
        uc = YUc @ Wp.T + YLc @ Wm.T + b
        ilo, ihi = _affine_interval(w, b, ilo, ihi)
    l, _, s1 = _concretize(La, lc, lo, hi)
    _, u, s2 = _concretize(Ua, uc, lo, hi)
    slack = 1e-13 * np.maximum(s1, s2)
    out_lo = np.maximum(l - slack, ilo)
    out_hi = np.minimum(u + slack, ihi)
    return La, lc, Ua, uc, out_lo, out_hi


# ---------------------------------------------------------------- data


@dataclass(frozen=True, eq=False)
class Dataset:
    points: np.ndarray
    values: np.ndarray
    rng_seed: int = 0

    def __post_init__(self):
        p = np.array(self.points, dtype=float, ndmin=2)
        v = np.array(self.values, dtype=float, ndmin=2)
        if p.shape != v.shape:
            raise DimensionMismatch("points and values differ in shape")
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.points.shape[0]

    def extend(self, points, values) -> "Dataset":
        return Dataset(np.vstack([self.points, points]), np.vstack([self.values, values]), self.rng_seed)


def sample_domain(model, count: int, seed: int) -> Dataset:
    """Uniform i.i.d. samples of the model's domain paired with ``f``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    pts = model.domain.sample(rng, count)
    try:
        vals = model.f(pts)
    except DomainError as exc:
        raise ModelDomainError(f"vector field undefined at a sampled domain point: {exc}") from exc
    return Dataset(pts, vals, seed)


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    max_epochs: int = 10_000
    stopping: str = "target-error"  # or "loss-threshold"
    stop_value: Optional[object] = None  # per-component error target, or a loss threshold
    seed: int = 0
    conservative_factor: float = 1.5
    check_every: int = 10
    log_every: int = 100
    lr_decay: float = 1.0  # multiplicative decay applied every ``decay_every`` epochs
    decay_every: int = 1000
    min_learning_rate: float = 1e-4
    deadline: Optional[float] = None  # time.perf_counter() value


@dataclass
class TrainReport:
    epochs: int
    stopped_by: str
    losses: List[float] = field(default_factory=list)
    max_error: Optional[np.ndarray] = None
    estimated_bound: Optional[np.ndarray] = None


def loss_and_grads(net: NeuralNet, X: np.ndarray, F: np.ndarray):
    """Mean squared 2-norm error and its parameter gradients."""
    acts = [X]
    zs = []
    y = X
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = y @ w.T + b
        if k < last:
            zs.append(z)
            y = np.maximum(z, 0.0)
            acts.append(y)
        else:
            y = z
    diff = y - F
    N = X.shape[0]
    loss = float(np.sum(diff * diff) / N)
    g = 2.0 * diff / N
    gw, gb = [None] * len(net.weights), [None] * len(net.weights)
    for k in range(last, -1, -1):
        gw[k] = g.T @ acts[k]
        gb[k] = g.sum(axis=0)
        if k:
            g = (g @ net.weights[k]) * (zs[k - 1] > 0)
    return loss, gw, gb, diff


def train(net: NeuralNet, data: Dataset, config: TrainConfig) -> Tuple[NeuralNet, TrainReport]:
    """Full-batch Adam on the mean squared error.

    Stops at ``max_epochs``, when every sample meets the per-component error
    target (``stopping="target-error"``), or when the loss drops below a
    threshold (``stopping="loss-threshold"``); the latter reports an estimated
    bound ``conservative_factor`` times the max error over the data.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    X, F = data.points, data.values
    ws = [w.copy() for w in net.weights]
    bs = [b.copy() for b in net.biases]
    m = [np.zeros_like(p) for p in ws + bs]
    v = [np.zeros_like(p) for p in ws + bs]
    b1, b2, eps = 0.9, 0.999, 1e-8
    target = None
    if config.stopping == "target-error" and config.stop_value is not None:
        target = np.broadcast_to(np.asarray(config.stop_value, dtype=float), (net.n,))
    elif config.stopping not in ("target-error", "loss-threshold"):
        raise ValueError(f"unknown stopping mode {config.stopping!r}")
    report = TrainReport(epochs=0, stopped_by="epochs")
    lr = config.learning_rate
    current = net
    epoch = 0
    for epoch in range(config.max_epochs + 1):
        current = NeuralNet(tuple(ws), tuple(bs)) if epoch else net
        loss, gw, gb, diff = loss_and_grads(current, X, F)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}")
        if epoch % config.log_every == 0:
            report.losses.append(loss)
        if epoch % config.check_every == 0 or epoch == config.max_epochs:
            err = np.abs(diff).max(axis=0)
            report.max_error = err
            if target is not None and np.all(err <= target):
                report.stopped_by = "target"
                break
            if config.stopping == "loss-threshold" and config.stop_value is not None and loss <= float(config.stop_value):
                report.stopped_by = "loss"
                break
            if config.deadline is not None and time.perf_counter() > config.deadline:
                report.stopped_by = "deadline"
                break
        if epoch == config.max_epochs:
            break
        if config.lr_decay != 1.0 and epoch and epoch % config.decay_every == 0:
            lr = max(lr * config.lr_decay, config.min_learning_rate)
        t = epoch + 1
        for i, (p, g) in enumerate(zip(ws + bs, gw + gb)):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            p -= lr * mh / (np.sqrt(vh) + eps)
    report.epochs = epoch
    report.max_error = np.abs(forward(current, X) - F).max(axis=0)
    report.estimated_bound = config.conservative_factor * report.max_error
    return current, report
