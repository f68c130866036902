"""Sweep on a training batch, then classify held-out FDFF and FNI runs with the tuned detectors.

    python scripts/run_classification.py --train-runs 12 --runs 40
"""

import argparse
import dataclasses

from sdnids import experiment
from sdnids.config import ScenarioConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-runs", type=int, default=12, help="training runs per attack kind before the split")
    ap.add_argument("--runs", type=int, default=40, help="validation runs per attack kind")
    ap.add_argument("--fraction", type=float, default=0.1)
    ap.add_argument("--weight", type=float, nargs=2, default=(0.5, 0.5), metavar=("A", "B"))
    ap.add_argument("--confidence", type=float, default=0.95)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None, help="write per-run artifacts here")
    args = ap.parse_args()

    base = ScenarioConfig()
    base = base.replace(training=dataclasses.replace(base.training, runs_per_class=args.train_runs))
    result = experiment.sweep(base, out_dir=args.out, jobs=args.jobs)
    tuned = experiment.best_detection_config(result, base, tuple(args.weight), args.confidence)
    print("overhead detector:", tuned.detection.overhead)
    print("delivery detector:", tuned.detection.delivery)
    # validation seeds start past any training seed block
    seeds = range(1001, 1001 + args.runs)
    for kind in ("fdff", "fni"):
        sc = tuned.with_attack(kind=kind, attacker_fraction=args.fraction)
        recs = experiment.run_experiment(sc, seeds=seeds, out_dir=args.out, jobs=args.jobs)
        labels = [r.label for r in recs if r.ok]
        detected = [l for l in labels if l != "none"]
        prob = sum(l == kind for l in detected) / len(detected) if detected else 0.0
        counts = {l: labels.count(l) for l in sorted(set(labels))}
        print(f"{kind}: classification_prob={prob:.3f} labels={counts}")


if __name__ == "__main__":
    main()
