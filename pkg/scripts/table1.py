"""Safety verification on the six benchmarks.

Writes one directory of artifacts per benchmark and a summary table:

    python scripts/table1.py --out results/table1
    python scripts/table1.py --only nl1,water_tank --seed 2
"""

import argparse
import json
from pathlib import Path

from neuralabs.model import load_benchmark
from neuralabs.pipeline import TABLE1, format_table, run_pipeline, table1_config, write_artifacts

STRETCH = {"steam_governor", "exponential"}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/table1")
    ap.add_argument("--only", help="comma-separated subset")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--retries", type=int, default=5)
    ap.add_argument("--timeout", type=float, default=600.0, help="budget per benchmark (tripled for the stretch ones)")
    args = ap.parse_args()

    names = args.only.split(",") if args.only else list(TABLE1)
    out = Path(args.out)
    rows = []
    for name in names:
        budget = args.timeout * (3 if name in STRETCH else 1)
        cfg = table1_config(name, seed=args.seed, retries=args.retries, timeout=budget)
        res = run_pipeline(load_benchmark(name), cfg)
        write_artifacts(res, out / name)
        rows.append({**res.report, "seconds": res.timings["total"]})
        print(format_table(rows[-1:]).splitlines()[-1], flush=True)

    print()
    print(format_table(rows))
    (out / "summary.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
