"""Per-node detection heatmaps and identification tables for the fixed-attacker scenarios.

    python scripts/run_heatmaps.py --out out/heatmaps --seeds 20
"""

import argparse
import json
from pathlib import Path

from sdnids import experiment
from sdnids.config import load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/heatmaps")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    for name in ("fdff.yaml", "fni.yaml"):
        sc = load_config(CONFIGS / name)
        experiment.run_experiment(sc, seeds=range(1, args.seeds + 1), out_dir=args.out, jobs=args.jobs)
    summary = experiment.report(args.out, out=Path(args.out) / "report")
    for scen in summary["scenarios"]:
        print(f"{scen['scenario']}: classification_prob={scen['classification_prob']}")
        side = int(len(scen["heatmap"]) ** 0.5)
        dp = [row["detection_probability"] for row in scen["heatmap"]]
        for r in range(side - 1, -1, -1):
            print("  " + " ".join(f"{dp[r * side + c]:.2f}" for c in range(side)))
    print(json.dumps({"report": str(Path(args.out) / "report")}))


if __name__ == "__main__":
    main()
