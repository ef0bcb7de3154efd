"""Affine simplicial mesh baseline against neural abstractions.

For each benchmark, certifies ASM bounds at several grid resolutions, then
repeats CEGIS (with tightening) over seeds and reports mean/min/max error,
mean mode count and the success ratio at eps = 0.5.

    python scripts/table2.py --seeds 10 --budget 300
"""

import argparse
import csv
import sys

import numpy as np

from neuralabs.asm import build_mesh, certify_asm
from neuralabs.cegis import LoopConfig, tighten
from neuralabs.hybridizer import enumerate_modes
from neuralabs.model import load_benchmark

ROWS = [
    ("jet_engine", (2, 4, 8), [(10,), (10, 10), (15, 15)]),
    ("steam_governor", (1, 2), [(10,), (20,)]),
    ("exponential", (2, 4, 8), [(10,), (20,), (20, 20)]),
]


def neural_stats(model, arch, seeds, budget):
    eps, modes = [], []
    for seed in range(seeds):
        res = tighten(model, list(arch), 0.5, LoopConfig(seed=seed, time_budget=budget))
        if not res.first_success:
            continue
        eps.append(res.best.eps)
        modes.append(len(enumerate_modes(res.best.net, model.domain)))
    return eps, modes


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--budget", type=float, default=300.0, help="seconds per CEGIS run")
    ap.add_argument("--only", help="comma-separated benchmark subset")
    ap.add_argument("--csv", help="also write the table here")
    args = ap.parse_args()

    keep = set(args.only.split(",")) if args.only else None
    header = ["benchmark", "N_p", "asm_eps", "W", "mean_modes", "mean_eps", "max_eps", "min_eps", "success"]
    table = []
    for name, grids, archs in ROWS:
        if keep and name not in keep:
            continue
        model = load_benchmark(name)
        for g, arch in zip(grids, archs):
            rep = certify_asm(model, build_mesh(model.domain, g, model.f))
            eps, modes = neural_stats(model, arch, args.seeds, args.budget)
            stats = [f"{np.mean(modes):.0f}", f"{np.mean(eps):.3f}", f"{max(eps):.3f}", f"{min(eps):.3f}"] if eps else ["-"] * 4
            row = [name, rep.partitions, f"{rep.eps:.3f}", str(list(arch)), *stats, f"{len(eps) / args.seeds:.1f}"]
            table.append(row)
            print("  ".join(str(v) for v in row), flush=True)

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(table)
    else:
        csv.writer(sys.stdout).writerows([header, *table])


if __name__ == "__main__":
    main()
