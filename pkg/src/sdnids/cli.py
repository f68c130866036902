"""Command-line entry point: ``sdnids {calibrate,run,sweep,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .cpd import DEFAULT_N_GRID, DEFAULT_N_PATHS, DEFAULT_SEED, CriticalValueCache

log = logging.getLogger("sdnids")


def _seed_list(text: str) -> list[int]:
    """Parse ``1,2,5`` or ``1-10`` (or a mix) into a list of seeds."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_calibrate(args) -> int:
    cache = CriticalValueCache(args.cache)
    for g in args.gammas:
        for c in args.confidences:
            cv = cache.get(g, c, args.paths, args.grid, args.seed)
            print(f"gamma={cv.gamma:g} confidence={cv.confidence:g} critical_value={cv.value:.6f}")
    log.info("%d values computed, %d cached", cache.computed, len(cache))
    return 0


def _cache(args, scenario):
    path = args.cache if args.cache is not None else scenario.critical_values
    return CriticalValueCache(path)


def cmd_run(args) -> int:
    from .experiment import run_experiment

    scenario = load_config(args.config)
    records = run_experiment(
        scenario, seeds=args.seeds, out_dir=args.out, jobs=args.jobs, cache=_cache(args, scenario), trace=args.trace
    )
    failed = [r for r in records if not r.ok]
    for r in records:
        if r.ok:
            print(f"seed={r.seed} label={r.label} trigger={r.trigger_window} declared={list(r.declarations_v2)} -> {r.out_dir}")
        else:
            print(f"seed={r.seed} FAILED: {r.error}", file=sys.stderr)
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    from .experiment import sweep

    scenario = load_config(args.config)
    result = sweep(scenario, out_dir=args.out, jobs=args.jobs, cache=_cache(args, scenario))
    for metric in ("ctrl_overhead", "delivery_rate"):
        table = result.best_gamma_table(metric)
        if not table:
            continue
        print(f"best gamma for {metric}:")
        for weight, row in table.items():
            cells = " ".join(f"{c:g}:{g:g}" for c, g in sorted(row.items()))
            print(f"  A={weight[0]:g} B={weight[1]:g}  {cells}")
    print(f"sweep written under {Path(args.out) / scenario.digest() / 'sweep'}")
    return 0


def cmd_report(args) -> int:
    from .experiment import report

    batch = Path(args.batch)
    if not batch.is_dir():
        print(f"report: {batch} is not a directory", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else batch / "report"
    summary = report(batch, out=out)
    for sc in summary["scenarios"]:
        cp = sc["classification_prob"]
        print(f"{sc['digest']} {sc['attack']}: runs={sc['runs']} classification_prob={'n/a' if cp is None else f'{cp:.3f}'}")
    print(json.dumps({"scenarios": len(summary["scenarios"]), "out": str(out)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdnids", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    c = sub.add_parser("calibrate", help="compute and cache critical values")
    c.add_argument("--gammas", type=_floats, default=[0.0, 0.15, 0.25, 0.35, 0.45, 0.49])
    c.add_argument("--confidences", type=_floats, default=[0.90, 0.95, 0.99])
    c.add_argument("--paths", type=int, default=DEFAULT_N_PATHS)
    c.add_argument("--grid", type=int, default=DEFAULT_N_GRID)
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    c.add_argument("--cache", type=Path, default=Path("critical_values.txt"))
    c.set_defaults(func=cmd_calibrate)

    for verb, func, hlp in (("run", cmd_run, "simulate, detect and identify per seed"), ("sweep", cmd_sweep, "grid-search detector parameters")):
        s = sub.add_parser(verb, help=hlp)
        s.add_argument("config", type=Path)
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("--cache", type=Path, default=None, help="critical-value cache file")
        if verb == "run":
            s.add_argument("--seeds", type=_seed_list, default=None, help="e.g. 1-10 or 1,4,7")
            s.add_argument("--trace", action="store_true", help="also write the NDJSON event trace")
        s.set_defaults(func=func)

    r = sub.add_parser("report", help="summarize a batch directory")
    r.add_argument("batch", type=Path)
    r.add_argument("--out", type=Path, default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
