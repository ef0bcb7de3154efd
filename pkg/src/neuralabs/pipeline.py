"""End-to-end runs: abstraction, hybrid automaton, flowpipe, verdict, artifacts."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .cegis import LoopConfig, NeuralAbstraction, Timings, synthesize
from .certifier import CertBudget
from .hybridizer import HybridAutomaton, build_automaton
from .model import BENCHMARKS, DynamicalModel, load_benchmark, load_model
from .reach import SAFE, UNKNOWN, Flowpipe, ReachConfig, reach

log = logging.getLogger(__name__)

EXIT_SAFE, EXIT_UNKNOWN, EXIT_CRASH = 0, 1, 2

# architectures from the experiments table; targets are our own choice
TABLE1: Dict[str, dict] = {
    "jet_engine": {"arch": (10, 16), "eps": 0.2},
    "steam_governor": {"arch": (12,), "eps": 0.2},
    "exponential": {"arch": (14, 14), "eps": 0.2},
    "water_tank": {"arch": (12,), "eps": 0.1},
    "nl1": {"arch": (10,), "eps": 0.2, "split": "adaptive"},
    "nl2": {"arch": (12, 10), "eps": 0.2},
}


@dataclass
class PipelineConfig:
    arch: Tuple[int, ...]
    eps: float = 0.5
    seed: int = 0
    retries: int = 1  # seeds tried: seed, seed + 1, ...
    timeout: float = 600.0  # wall budget for the whole run, all seeds
    threads: int = 1
    # on an Unknown verdict, shrink the target by this factor and continue
    # from the current network; 0 disables refinement
    refine: float = 0.75
    min_eps: float = 1e-3
    lie_pruning: bool = False
    loop: LoopConfig = field(default_factory=LoopConfig)
    reach: ReachConfig = field(default_factory=ReachConfig)


@dataclass(eq=False)
class PipelineResult:
    verdict: str
    report: dict
    timings: dict
    abstraction: Optional[NeuralAbstraction] = None
    automaton: Optional[HybridAutomaton] = None
    flowpipe: Optional[Flowpipe] = None
    # every abstraction certified along the way, including refined ones
    certified: List[NeuralAbstraction] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_SAFE if self.verdict == SAFE else EXIT_UNKNOWN


def resolve_model(name: str) -> DynamicalModel:
    """A ``.model`` path or the name of a bundled benchmark."""
    path = Path(name)
    if path.exists():
        return load_model(path)
    key = name.lower().replace("-", "_")
    if key in BENCHMARKS:
        return load_benchmark(key)
    raise FileNotFoundError(f"no model file or benchmark named {name!r}")


REPORT_KEYS = (
    "model",
    "horizon",
    "arch",
    "seed",
    "seeds_tried",
    "target_eps",
    "eps",
    "e",
    "verdict",
    "modes",
    "transitions",
    "iterations",
    "samples",
    "attempts",
    "flowpipe",
    "failure",
)


def run_pipeline(model: DynamicalModel, cfg: PipelineConfig) -> PipelineResult:
    """Synthesize, translate, reach; refine the target and retry seeds until Safe."""
    t_start = time.perf_counter()
    deadline = t_start + cfg.timeout
    timings = Timings()
    verify_seconds = 0.0
    attempts: List[dict] = []
    best = None
    seeds_tried = []
    certified = []
    cert = replace(cfg.loop.cert, threads=cfg.threads)
    for k in range(max(1, cfg.retries)):
        seed = cfg.seed + k
        seeds_tried.append(seed)
        loop = replace(cfg.loop, seed=seed, cert=cert)
        eps = cfg.eps
        net = None
        while eps >= cfg.min_eps and time.perf_counter() < deadline:
            out = synthesize(model, cfg.arch, eps, loop, net=net, timings=timings, deadline=deadline)
            row = {"seed": seed, "eps": eps}
            if not isinstance(out, NeuralAbstraction):
                row.update(verdict="failure", reason=out.reason)
                attempts.append(row)
                break
            certified.append(out)
            t = time.perf_counter()
            ha = build_automaton(out, model, lie_pruning=cfg.lie_pruning)
            fp = reach(ha, cfg.reach)
            verify_seconds += time.perf_counter() - t
            row.update(verdict=fp.verdict, modes=len(ha.modes), certified_eps=out.eps)
            attempts.append(row)
            best = (seed, out, ha, fp)
            if fp.verdict == SAFE or cfg.refine <= 0:
                break
            net = out.net
            eps = out.eps * cfg.refine
        if best is not None and best[3].verdict == SAFE:
            break
        if time.perf_counter() >= deadline:
            break
    total = time.perf_counter() - t_start
    report = dict.fromkeys(REPORT_KEYS)
    report.update(
        model=model.name,
        horizon=model.horizon,
        arch=list(cfg.arch),
        seed=cfg.seed,
        seeds_tried=seeds_tried,
        target_eps=cfg.eps,
        attempts=attempts,
        verdict=UNKNOWN,
    )
    abstraction = automaton = flowpipe = None
    if best is not None:
        seed, abstraction, automaton, flowpipe = best
        stats = {k: v for k, v in flowpipe.stats.items() if k != "error"}
        report.update(
            seed=seed,
            eps=abstraction.eps,
            e=abstraction.bound.per_component.tolist(),
            verdict=flowpipe.verdict,
            modes=len(automaton.modes),
            transitions=len(automaton.transitions),
            iterations=abstraction.provenance.get("iterations"),
            samples=abstraction.provenance.get("samples"),
            flowpipe=stats,
            failure=flowpipe.stats.get("error"),
        )
    else:
        report["failure"] = attempts[-1].get("reason") if attempts else "time"
    times = {
        "learner": round(timings.learner, 3),
        "certifier": round(timings.certifier, 3),
        "safety_verification": round(verify_seconds, 3),
        "total": round(total, 3),
    }
    return PipelineResult(report["verdict"], report, times, abstraction, automaton, flowpipe, certified)


def write_artifacts(result: PipelineResult, out_dir, *, plot: bool = True) -> List[Path]:
    """report.json (deterministic), timings.json, abstraction, automaton, flowpipe CSV, SVG."""
    from .export import plot_svg

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    put("report.json", json.dumps(result.report, indent=1, sort_keys=True) + "\n")
    put("timings.json", json.dumps(result.timings, indent=1, sort_keys=True) + "\n")
    if result.abstraction is not None:
        put("abstraction.json", result.abstraction.dumps() + "\n")
    if result.automaton is not None:
        put("automaton.json", result.automaton.dumps() + "\n")
    if result.flowpipe is not None:
        put("flowpipe.csv", result.flowpipe.to_csv())
        if plot:
            put("plot.svg", plot_svg(result.automaton, result.flowpipe))
    return written


def table1_config(name: str, *, seed: int = 0, retries: int = 5, timeout: float = 600.0, threads: int = 1) -> PipelineConfig:
    entry = TABLE1[name]
    loop = LoopConfig(split=entry.get("split", "equal"))
    return PipelineConfig(arch=entry["arch"], eps=entry["eps"], seed=seed, retries=retries, timeout=timeout, threads=threads, loop=loop)


def format_table(rows: Sequence[dict]) -> str:
    head = f"{'model':<16} {'T':>4} {'arch':<9} {'modes':>5} {'eps':>7} {'verdict':<8} {'seconds':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        arch = "[" + ",".join(str(a) for a in r["arch"]) + "]"
        eps = f"{r['eps']:.4f}" if r.get("eps") is not None else "-"
        modes = r.get("modes") if r.get("modes") is not None else "-"
        lines.append(f"{r['model']:<16} {r['horizon']:>4g} {arch:<9} {modes:>5} {eps:>7} {r['verdict']:<8} {r['seconds']:>8.1f}")
    return "\n".join(lines)
