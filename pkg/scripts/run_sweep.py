"""Grid search over (m, gamma) and print the best-gamma table.

    python scripts/run_sweep.py configs/sweep.yaml --out out
"""

import argparse

from sdnids import experiment
from sdnids.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default="configs/sweep.yaml")
    ap.add_argument("--out", default="out")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    sc = load_config(args.config)
    result = experiment.sweep(sc, out_dir=args.out, jobs=args.jobs)
    confs = sorted({c.confidence for c in result.cells})
    print("metric         A    B    " + "  ".join(f"gamma@{c:g}" for c in confs))
    for metric in sorted({c.metric for c in result.cells}):
        for a, b in result.weights:
            cells = [result.best.get((metric, (a, b), c)) for c in confs]
            row = "  ".join(f"{'-' if x is None else x.gamma:>10}" for x in cells)
            print(f"{metric:<14} {a:<4} {b:<4} {row}")
    print(f"tables written under {args.out}/{sc.digest()}/sweep")


if __name__ == "__main__":
    main()
