"""Command line entry point ``na``.

Exit codes: 0 safe (or success), 1 unknown verdict or synthesis failure, 2 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from . import __version__
from .asm import build_mesh, certify_asm, report_csv
from .cegis import LoopConfig, NeuralAbstraction, synthesize, tighten
from .certifier import CertBudget
from .errors import NeuralAbsError
from .export import plot_svg, write_spaceex
from .hybridizer import HybridAutomaton, build_automaton
from .pipeline import (
    EXIT_CRASH,
    EXIT_SAFE,
    EXIT_UNKNOWN,
    TABLE1,
    PipelineConfig,
    format_table,
    resolve_model,
    run_pipeline,
    table1_config,
    write_artifacts,
)
from .reach import SAFE, ReachConfig, reach

log = logging.getLogger("neuralabs")

DEFAULTS = {"seed": 0, "timeout": 600.0, "threads": 1, "json_out": None, "verbose": False}


def _arch(text: str) -> tuple:
    return tuple(int(t) for t in text.replace("[", "").replace("]", "").split(",") if t.strip())


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    p.add_argument("--timeout", type=float, default=argparse.SUPPRESS, help="wall budget in seconds (default 600)")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="certifier worker threads (default 1)")
    p.add_argument("--json-out", dest="json_out", default=argparse.SUPPRESS, metavar="DIR", help="directory for JSON artifacts")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="na", description="Neural abstractions of nonlinear dynamical models.", parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synthesize", parents=[common], help="learn and certify a neural abstraction")
    p.add_argument("model", help="model file or benchmark name")
    p.add_argument("--arch", type=_arch, required=True, help="hidden widths, e.g. 10,16")
    p.add_argument("--eps", type=float, default=0.5, help="target error (2-norm)")
    p.add_argument("--split", choices=("equal", "adaptive"), default="equal")
    p.add_argument("--tighten", action="store_true", help="shrink the target after each success")
    p.add_argument("-o", "--output", help="abstraction JSON path")

    p = sub.add_parser("translate", parents=[common], help="compile an abstraction into a hybrid automaton")
    p.add_argument("abstraction")
    p.add_argument("--model", required=True)
    p.add_argument("--lie-pruning", action="store_true")
    p.add_argument("-o", "--output", help="automaton JSON path")

    p = sub.add_parser("verify", parents=[common], help="flowpipe and safety verdict for an automaton")
    p.add_argument("automaton")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--switching", choices=("enclosure", "branch"), default="enclosure")
    p.add_argument("--csv", help="write the flowpipe as CSV")

    p = sub.add_parser("run", parents=[common], help="end-to-end pipeline")
    p.add_argument("model", nargs="?")
    p.add_argument("--arch", type=_arch)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--retries", type=int, default=1, help="number of seeds to try")
    p.add_argument("--no-refine", action="store_true", help="do not shrink the target after an unknown verdict")
    p.add_argument("--table1", action="store_true", help="run the six-benchmark suite")
    p.add_argument("--only", help="comma-separated benchmark subset for --table1")

    p = sub.add_parser("asm", parents=[common], help="affine simplicial mesh baseline")
    p.add_argument("model")
    p.add_argument("--grid", type=_arch, default=(2, 4, 8), help="resolutions, e.g. 2,4,8")
    p.add_argument("--csv", help="write the comparison CSV here")

    p = sub.add_parser("export", parents=[common], help="SpaceEx model and configuration")
    p.add_argument("automaton")
    p.add_argument("--xml", required=True)
    p.add_argument("--cfg", required=True)

    p = sub.add_parser("plot", parents=[common], help="SVG of partition and flowpipe")
    p.add_argument("automaton")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-reach", action="store_true", help="draw the partition only")
    return parser


def _opts(args) -> argparse.Namespace:
    for k, v in DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    return args


def _emit_json(args, name: str, obj) -> None:
    if args.json_out:
        out = Path(args.json_out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _loop(args, split="equal") -> LoopConfig:
    return LoopConfig(seed=args.seed, time_budget=args.timeout, split=split, cert=CertBudget(threads=args.threads))


def cmd_synthesize(args) -> int:
    model = resolve_model(args.model)
    cfg = _loop(args, args.split)
    if args.tighten:
        res = tighten(model, args.arch, args.eps, cfg)
        out = res.best
        for h in res.history:
            print(f"eps {h['eps']:.4f}: {'certified' if h['success'] else 'failed'} after {h['iterations']} iterations")
    else:
        out = synthesize(model, args.arch, args.eps, cfg)
    if not isinstance(out, NeuralAbstraction):
        reason = out.reason if out is not None else "no certified abstraction"
        print(f"synthesis failed: {reason}", file=sys.stderr)
        return EXIT_UNKNOWN
    print(f"certified eps = {out.eps:.6g}, e = {out.bound.per_component.tolist()}")
    if args.output:
        Path(args.output).write_text(out.dumps() + "\n")
    _emit_json(args, "abstraction.json", out.to_json())
    return EXIT_SAFE


def cmd_translate(args) -> int:
    model = resolve_model(args.model)
    abs_ = NeuralAbstraction.loads(Path(args.abstraction).read_text())
    ha = build_automaton(abs_, model, lie_pruning=args.lie_pruning)
    print(f"{len(ha.modes)} modes, {len(ha.transitions)} transitions")
    if args.output:
        Path(args.output).write_text(ha.dumps() + "\n")
    _emit_json(args, "automaton.json", ha.to_json())
    return EXIT_SAFE


def cmd_verify(args) -> int:
    ha = HybridAutomaton.loads(Path(args.automaton).read_text())
    t = time.perf_counter()
    fp = reach(ha, ReachConfig(step=args.step, switching=args.switching))
    secs = time.perf_counter() - t
    print(f"{fp.verdict} ({len(fp.segments)} segments, {secs:.2f} s)")
    if args.csv:
        Path(args.csv).write_text(fp.to_csv())
    _emit_json(args, "verify.json", {"verdict": fp.verdict, "stats": fp.stats})
    return EXIT_SAFE if fp.verdict == SAFE else EXIT_UNKNOWN


def cmd_run(args) -> int:
    if args.table1:
        names = args.only.split(",") if args.only else list(TABLE1)
        rows = []
        worst = EXIT_SAFE
        for name in names:
            model = resolve_model(name)
            cfg = table1_config(name, seed=args.seed, retries=5, timeout=args.timeout, threads=args.threads)
            res = run_pipeline(model, cfg)
            rows.append({**res.report, "seconds": res.timings["total"]})
            print(format_table(rows[-1:]).splitlines()[-1], flush=True)
            if args.json_out:
                write_artifacts(res, Path(args.json_out) / name)
            worst = max(worst, res.exit_code)
        print()
        print(format_table(rows))
        return worst
    if args.model is None or args.arch is None:
        print("run needs a model and --arch (or --table1)", file=sys.stderr)
        return EXIT_CRASH
    model = resolve_model(args.model)
    cfg = PipelineConfig(
        arch=args.arch,
        eps=args.eps,
        seed=args.seed,
        retries=args.retries,
        timeout=args.timeout,
        threads=args.threads,
        refine=0.0 if args.no_refine else 0.75,
    )
    res = run_pipeline(model, cfg)
    r = res.report
    print(f"{r['model']}: {r['verdict']} (modes {r['modes']}, eps {r['eps']}, {res.timings['total']:.1f} s)")
    if args.json_out:
        write_artifacts(res, args.json_out)
    return res.exit_code


def cmd_asm(args) -> int:
    model = resolve_model(args.model)
    rows = []
    for g in args.grid:
        mesh = build_mesh(model.domain, g, model.f)
        rep = certify_asm(model, mesh, budget=CertBudget(threads=args.threads))
        rows.append(rep)
        print(f"g={g}: {rep.partitions} simplices, eps {rep.eps:.6g} ({rep.seconds:.1f} s)", flush=True)
    text = report_csv(rows)
    if args.csv:
        Path(args.csv).write_text(text)
    else:
        print(text, end="")
    _emit_json(args, "asm.json", [{"g": r.g, "partitions": r.partitions, "eps": r.eps, "bound": r.global_bound.tolist()} for r in rows])
    return EXIT_SAFE


def cmd_export(args) -> int:
    ha = HybridAutomaton.loads(Path(args.automaton).read_text())
    write_spaceex(ha, args.xml, args.cfg)
    print(f"wrote {args.xml} and {args.cfg}")
    return EXIT_SAFE


def cmd_plot(args) -> int:
    ha = HybridAutomaton.loads(Path(args.automaton).read_text())
    fp = None if args.no_reach else reach(ha)
    Path(args.output).write_text(plot_svg(ha, fp))
    return EXIT_SAFE


COMMANDS = {
    "synthesize": cmd_synthesize,
    "translate": cmd_translate,
    "verify": cmd_verify,
    "run": cmd_run,
    "asm": cmd_asm,
    "export": cmd_export,
    "plot": cmd_plot,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = _opts(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (NeuralAbsError, SyntaxError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CRASH
    except KeyboardInterrupt:
        return EXIT_CRASH


if __name__ == "__main__":
    sys.exit(main())
