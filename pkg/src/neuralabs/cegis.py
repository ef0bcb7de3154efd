"""Learner/certifier alternation producing certified neural abstractions."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .certifier import CERTIFIED, CertBudget, ErrorBound, certify
from .errors import IterationLimitExceeded, TimeBudgetExceeded
from .netlearn import Dataset, NeuralNet, TrainConfig, init_net, sample_domain, train
from .polylib import Box

log = logging.getLogger(__name__)


@dataclass
class LoopConfig:
    initial_samples: int = 1000
    n_aug: int = 50
    sigma_rel: float = 0.05
    max_iterations: int = 20
    time_budget: float = 300.0
    seed: int = 0
    # the learner aims below the certified bound so the certifier has slack
    margin: float = 0.8
    split: str = "equal"  # or "adaptive"
    split_floor: float = 0.25
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=3e-2, lr_decay=0.5, decay_every=1500))
    retrain_epochs: int = 2000
    retrain_lr: float = 5e-3
    cert: CertBudget = field(default_factory=CertBudget)
    raise_on_failure: bool = False


@dataclass(eq=False)
class NeuralAbstraction:
    net: NeuralNet
    bound: ErrorBound
    domain: Box
    provenance: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return self.bound.reported_eps

    def to_json(self) -> dict:
        return {
            "net": self.net.to_json(),
            "bound": self.bound.to_json(),
            "domain": self.domain.bounds(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NeuralAbstraction":
        b = obj["bound"]
        return cls(
            NeuralNet.from_json(obj["net"]),
            ErrorBound(b["e"], b.get("delta", 0.0)),
            Box.from_bounds(obj["domain"]),
            obj.get("provenance", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "NeuralAbstraction":
        return cls.from_json(json.loads(text))


@dataclass(eq=False)
class Failure:
    reason: str
    iterations: int
    elapsed: float
    best_error: Optional[np.ndarray]
    trace: List[dict] = field(default_factory=list)
    net: Optional[NeuralNet] = None

    def to_json(self) -> dict:
        return {
            "reason": self.reason,
            "iterations": self.iterations,
            "best_error": None if self.best_error is None else self.best_error.tolist(),
            "trace": self.trace,
        }


@dataclass
class Timings:
    learner: float = 0.0
    certifier: float = 0.0


def augment(data: Dataset, cex, model_or_domain, cfg: LoopConfig, rng: np.random.Generator, model=None) -> Dataset:
    """Append ``cex`` and ``cfg.n_aug`` truncated-Gaussian neighbours inside the domain."""
    domain = model_or_domain if isinstance(model_or_domain, Box) else model_or_domain.domain
    f = model.f if model is not None else model_or_domain.f
    cex = np.clip(np.asarray(cex, dtype=float), domain.lo, domain.hi)
    pts = [cex[None]]
    if cfg.n_aug > 0:
        sigma = cfg.sigma_rel * domain.width
        cloud = cex + rng.normal(size=(cfg.n_aug, domain.n)) * sigma
        for _ in range(20):
            bad = ~domain.contains(cloud)
            if not bad.any():
                break
            cloud[bad] = cex + rng.normal(size=(int(bad.sum()), domain.n)) * sigma
        cloud = np.clip(cloud, domain.lo, domain.hi)
        pts.append(cloud)
    pts = np.concatenate(pts)
    return data.extend(pts, f(pts))


def _choose_bound(target: ErrorBound, err: np.ndarray, cfg: LoopConfig) -> ErrorBound:
    if cfg.split != "adaptive":
        return target
    eps = target.reported_eps
    w = np.maximum(err, cfg.split_floor * err.max() + 1e-12)
    e = eps * w / np.linalg.norm(w)
    e = np.maximum(e, target.delta * 1.01 + 1e-12)
    return ErrorBound(e, target.delta)


def _learner_target(target: ErrorBound, cfg: LoopConfig, n: int) -> np.ndarray:
    if cfg.split == "adaptive":
        return np.full(n, cfg.margin * (target.reported_eps - target.delta) / np.sqrt(n))
    return cfg.margin * target.allowance


def synthesize(
    model,
    arch: Sequence[int],
    target: Union[ErrorBound, float],
    cfg: Optional[LoopConfig] = None,
    *,
    net: Optional[NeuralNet] = None,
    data: Optional[Dataset] = None,
    timings: Optional[Timings] = None,
    deadline: Optional[float] = None,
) -> Union[NeuralAbstraction, Failure]:
    """Alternate training and certification until the bound is proved.

    ``net`` and ``data`` warm-start the loop (used when tightening).
    """
    cfg = cfg or LoopConfig()
    n = model.n
    if not isinstance(target, ErrorBound):
        target = ErrorBound.from_eps(float(target), n, model.delta)
    if target.per_component.shape != (n,):
        raise ValueError(f"error bound has {target.per_component.size} components, model has {n}")
    if np.any(target.allowance <= 0):
        raise ValueError("every error component must exceed the disturbance radius")
    t0 = time.perf_counter()
    deadline = deadline if deadline is not None else t0 + cfg.time_budget
    timings = timings if timings is not None else Timings()
    warm = net is not None
    if net is None:
        net = init_net([n, *arch, n], cfg.seed)
    if data is None:
        data = sample_domain(model, cfg.initial_samples, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 7])
    trace: List[dict] = []
    best_err = None
    stop = _learner_target(target, cfg, n)
    for it in range(1, cfg.max_iterations + 1):
        if time.perf_counter() > deadline:
            return _fail(cfg, "time", it - 1, t0, best_err, trace, net)
        t = time.perf_counter()
        tc = replace(cfg.train, stop_value=stop, seed=cfg.seed, deadline=deadline)
        if it > 1 or warm:
            tc = replace(tc, max_epochs=cfg.retrain_epochs, learning_rate=cfg.retrain_lr, lr_decay=1.0)
        net, rep = train(net, data, tc)
        timings.learner += time.perf_counter() - t
        bound = _choose_bound(target, rep.max_error, cfg)
        t = time.perf_counter()
        res = certify(model, net, bound, replace(cfg.cert, deadline=deadline))
        timings.certifier += time.perf_counter() - t
        row = {
            "iteration": it,
            "samples": len(data),
            "epochs": rep.epochs,
            "train_max_error": rep.max_error.tolist(),
            "verdict": res.verdict,
            "boxes": res.boxes_processed,
            "e": bound.per_component.tolist(),
        }
        if res.point is not None:
            row["point"] = res.point.tolist()
        trace.append(row)
        log.info("iteration %d: %s (%d boxes, |S|=%d)", it, res.verdict, res.boxes_processed, len(data))
        if best_err is None or np.linalg.norm(rep.max_error) < np.linalg.norm(best_err):
            best_err = rep.max_error
        if res.verdict == CERTIFIED:
            prov = {"seed": cfg.seed, "arch": list(arch), "iterations": it, "samples": len(data), "trace": trace}
            return NeuralAbstraction(net, bound, model.domain, prov)
        data = augment(data, res.point, model, cfg, rng)
    return _fail(cfg, "iterations", cfg.max_iterations, t0, best_err, trace, net)


def _fail(cfg, reason, iterations, t0, best_err, trace, net):
    failure = Failure(reason, iterations, time.perf_counter() - t0, best_err, trace, net)
    if cfg.raise_on_failure:
        if reason == "time":
            raise TimeBudgetExceeded(failure)
        raise IterationLimitExceeded(failure)
    return failure


@dataclass(eq=False)
class TighteningResult:
    best: Optional[NeuralAbstraction]
    history: List[dict]
    first_success: bool


def tighten(model, arch, eps0: float = 0.5, cfg: Optional[LoopConfig] = None, shrink: float = 0.75, min_eps: float = 0.0) -> TighteningResult:
    """Shrink the target by ``shrink`` after each success until a run fails.

    The whole sequence shares ``cfg.time_budget``; each attempt warm-starts
    from the previous certified network.
    """
    cfg = cfg or LoopConfig()
    deadline = time.perf_counter() + cfg.time_budget
    eps = eps0
    best = None
    history = []
    net = None
    while eps > min_eps:
        out = synthesize(model, arch, eps, cfg, net=net, deadline=deadline)
        ok = isinstance(out, NeuralAbstraction)
        history.append({"eps": eps, "success": ok, "iterations": out.provenance["iterations"] if ok else out.iterations})
        if not ok:
            break
        best = out
        net = out.net
        eps = out.eps * shrink
    return TighteningResult(best, history, bool(history and history[0]["success"]))
