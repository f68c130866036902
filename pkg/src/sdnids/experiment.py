"""Seeded batch execution, parameter sweeps and report aggregation.

Run artifacts live under ``<out>/<digest>/<seed>/`` where the digest hashes
every scenario field except the seed list, so editing any setting starts a
fresh directory and identical inputs always land in the same place.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import ScenarioConfig, load_config
from .cpd import CriticalValueCache, DegenerateVarianceError, first_detection
from .identify import (
    AlarmSet,
    exchange_view,
    identification_graph,
    identify_v1,
    identify_v2,
    region_localize,
    write_declarations,
)
from .pipeline import (
    Label,
    aggregate_groups,
    central_series,
    first_trigger,
    node_alarms,
    run_outcome,
    score,
    stop_window,
    sweep_parameters,
    write_alarms,
)
from .sim import build_grid, exchange_counts, grid_groups, run, window_metrics
from .sim.metrics import MetricSeries

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    digest: str
    seed: int
    out_dir: Optional[str]
    attack: str
    attackers: tuple = ()
    label: Optional[str] = None
    trigger_window: Optional[int] = None
    declarations_v1: tuple = ()
    declarations_v2: tuple = ()
    summary: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SimulatedRun:
    """Condensed outputs of one simulation: metrics plus pairwise exchanges."""

    seed: int
    attackers: tuple
    metrics: MetricSeries
    exchanges: np.ndarray


def simulate(scenario: ScenarioConfig, seed: int, kinds: Optional[str] = None, scope: Optional[str] = None) -> SimulatedRun:
    det = scenario.detection
    trace = run(scenario, seed)
    ms = window_metrics(trace)
    ex = exchange_counts(trace, kinds or det.exchange_kinds, scope or det.exchange_scope)
    return SimulatedRun(seed, tuple(trace.attackers), ms, ex)


def _simulate_job(args) -> SimulatedRun:
    scenario, seed = args
    return simulate(scenario, seed)


def simulate_batch(scenario: ScenarioConfig, seeds: Iterable[int], jobs: int = 1) -> list[SimulatedRun]:
    seeds = list(seeds)
    if jobs <= 1:
        return [simulate(scenario, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_simulate_job, [(scenario, s) for s in seeds]))


def _fmt(x):
    if isinstance(x, float):
        return round(x, 6)
    return x


def analyze(scenario: ScenarioConfig, sim: SimulatedRun, cache: CriticalValueCache) -> dict:
    """Centralized labelling, distributed alarms, group alarms and identification for one run."""
    det = scenario.detection
    ms = sim.metrics
    n_windows = ms.n_windows
    change = scenario.attack_start_sample
    post = max(n_windows - change, 1)
    topo = build_grid(scenario.topology.side, scenario.topology.spacing, scenario.topology.radio_radius)

    over_p = det.overhead.params(n_windows - det.overhead.m)
    deliv_p = det.delivery.params(n_windows - det.delivery.m)
    over_cv = cache.get(over_p.gamma, over_p.confidence)
    deliv_cv = cache.get(deliv_p.gamma, deliv_p.confidence)
    central = {}
    for metric, p, cv in (("ctrl_overhead", over_p, over_cv), ("delivery_rate", deliv_p, deliv_cv)):
        # a constant learning window carries no calibration, so that detector never fires
        try:
            d, degenerate = first_detection(central_series(ms, metric), p, cv), False
        except DegenerateVarianceError:
            d, degenerate = None, True
        ok, delay = run_outcome(d, change)
        central[metric] = {
            "stop_window": stop_window(d),
            "detected": ok,
            "delay": delay,
            "degenerate": degenerate,
        }
    label = first_trigger(central["ctrl_overhead"]["stop_window"], central["delivery_rate"]["stop_window"])

    dist_p = det.distributed.params(n_windows - det.distributed.m)
    dist_cv = cache.get(dist_p.gamma, dist_p.confidence)
    alarms, excluded = node_alarms(ms.node_metric(det.distributed_metric).astype(float), dist_p, dist_cv, det.distributed_metric)

    groups = grid_groups(topo, det.groups_per_side)
    _, group_alarms = aggregate_groups(ms, groups, det.group_metric, dist_p, dist_cv)
    ranking = region_localize([(a.node, a.window) for a in group_alarms], groups, change, post)

    graph = identification_graph(topo)
    alarm_set = AlarmSet.from_events(alarms)
    v1 = identify_v1(alarm_set, graph)
    v2 = identify_v2(alarm_set, exchange_view(sim.exchanges, alarm_set, graph, det.exchange_depth), graph)

    return {
        "label": label,
        "central": central,
        "alarms": alarms,
        "excluded_nodes": sorted(excluded),
        "group_alarms": group_alarms,
        "groups": [sorted(g) for g in groups],
        "ranking": ranking,
        "v1": v1,
        "v2": v2,
        "n_nodes": topo.n,
        "change_window": change,
        "post_windows": post,
    }


def _run_report(scenario: ScenarioConfig, sim: SimulatedRun, result: dict) -> dict:
    label = result["label"]
    return {
        "scenario": scenario.name,
        "digest": scenario.digest(),
        "seed": sim.seed,
        "attack": scenario.attack.kind,
        "attackers": list(sim.attackers),
        "change_window": result["change_window"],
        "post_windows": result["post_windows"],
        "label": label.label.value,
        "trigger_window": label.trigger_window,
        "triggered_metric": label.triggered_metric,
        "central": result["central"],
        "node_alarms": {str(a.node): a.window for a in result["alarms"]},
        "excluded_nodes": result["excluded_nodes"],
        "groups": result["groups"],
        "group_alarms": {str(a.node): a.window for a in result["group_alarms"]},
        "region_ranking": {
            "order": result["ranking"].order(),
            "evidence": [_fmt(r.evidence) for r in result["ranking"].ranks],
            "reliable": result["ranking"].reliable,
            "note": result["ranking"].note,
        },
        "declared_v1": sorted(result["v1"].declared),
        "declared_v2": sorted(result["v2"].declared),
        "v2_abstained": result["v2"].abstained,
        "n_nodes": result["n_nodes"],
    }


def write_run(out: Path, scenario: ScenarioConfig, sim: SimulatedRun, result: dict) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "metrics.csv").open("w", newline="") as fh:
        sim.metrics.write_csv(fh)
    with (out / "alarms.csv").open("w", newline="") as fh:
        write_alarms(result["alarms"], fh)
    with (out / "declarations.csv").open("w", newline="") as fh:
        write_declarations(result["v2"], sim.attackers, range(result["n_nodes"]), fh)
    with (out / "declarations_v1.csv").open("w", newline="") as fh:
        write_declarations(result["v1"], sim.attackers, range(result["n_nodes"]), fh)
    rep = _run_report(scenario, sim, result)
    (out / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return rep


def _coerce_config(config) -> ScenarioConfig:
    if isinstance(config, ScenarioConfig):
        return config.validate()
    return load_config(config)


def _cache_for(scenario: ScenarioConfig, cache: Optional[CriticalValueCache]) -> CriticalValueCache:
    if cache is not None:
        return cache
    return CriticalValueCache(scenario.critical_values)


def _one_seed(scenario: ScenarioConfig, seed: int, out_root: Optional[Path], cache, trace_dir: bool) -> RunRecord:
    digest = scenario.digest()
    out = out_root / digest / str(seed) if out_root is not None else None
    try:
        if trace_dir and out is not None:
            trace = run(scenario, seed)
            out.mkdir(parents=True, exist_ok=True)
            with (out / "trace.ndjson").open("w") as fh:
                trace.write_ndjson(fh)
            det = scenario.detection
            sim = SimulatedRun(
                seed,
                tuple(trace.attackers),
                window_metrics(trace),
                exchange_counts(trace, det.exchange_kinds, det.exchange_scope),
            )
        else:
            sim = simulate(scenario, seed)
        result = analyze(scenario, sim, cache)
        summary = write_run(out, scenario, sim, result) if out is not None else _run_report(scenario, sim, result)
        return RunRecord(
            digest,
            seed,
            str(out) if out is not None else None,
            scenario.attack.kind,
            sim.attackers,
            summary["label"],
            summary["trigger_window"],
            tuple(summary["declared_v1"]),
            tuple(summary["declared_v2"]),
            summary,
        )
    except Exception as exc:  # isolate per-seed failures
        log.error("seed %s failed: %s", seed, exc)
        return RunRecord(digest, seed, str(out) if out else None, scenario.attack.kind, error="".join(
            traceback.format_exception_only(type(exc), exc)).strip())


def _seed_job(args) -> RunRecord:
    scenario, seed, out_root, cache_path, trace = args
    return _one_seed(scenario, seed, out_root, CriticalValueCache(cache_path), trace)


def run_experiment(
    config,
    seeds: Optional[Sequence[int]] = None,
    out_dir: Optional[Path | str] = "out",
    jobs: int = 1,
    cache: Optional[CriticalValueCache] = None,
    trace: bool = False,
) -> list[RunRecord]:
    """Simulate, detect and identify for every seed; writes artifacts when ``out_dir`` is set."""
    scenario = _coerce_config(config)
    seeds = list(scenario.seeds if seeds is None else seeds)
    out_root = Path(out_dir) if out_dir is not None else None
    cache = _cache_for(scenario, cache)
    # fill the cache up front so workers only read it
    det = scenario.detection
    for d in (det.overhead, det.delivery, det.distributed):
        cache.get(d.gamma, d.confidence)
    if jobs <= 1:
        records = [_one_seed(scenario, s, out_root, cache, trace) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(
                pool.map(_seed_job, [(scenario, s, out_root, scenario.critical_values, trace) for s in seeds])
            )
    if out_root is not None:
        root = out_root / scenario.digest()
        root.mkdir(parents=True, exist_ok=True)
        from .config import dump_config

        dump_config(scenario, root / "config.yaml")
    return records


# -- sweep ---------------------------------------------------------------------


def _spread(total: int, parts: int) -> list[int]:
    return [total // parts + (i < total % parts) for i in range(parts)]


def training_scenarios(scenario: ScenarioConfig) -> list[tuple[ScenarioConfig, str, list[int]]]:
    """One scenario per (attack kind, attacker fraction) with its seed block.

    ``runs_per_class`` runs per attack kind are spread evenly over the
    fractions; the first ``train_fraction`` of them form the training set.
    """
    tr = scenario.training
    out = []
    n_frac = len(tr.attacker_fractions)
    for kind in tr.attack_kinds:
        per = _spread(tr.runs_per_class, n_frac)
        n_train = max(1, int(math.floor(tr.runs_per_class * tr.train_fraction + 0.5)))
        train = _spread(n_train, n_frac)
        base = 1
        for frac, count, k in zip(tr.attacker_fractions, per, train):
            sc = scenario.with_attack(kind=kind, attacker_fraction=frac, attackers=())
            out.append((sc, kind, list(range(base, base + min(k, count)))))
            base += count
    return out


def sweep(
    config,
    out_dir: Optional[Path | str] = "out",
    jobs: int = 1,
    cache: Optional[CriticalValueCache] = None,
    dataset: Optional[Sequence[tuple[MetricSeries, str]]] = None,
):
    """Grid-search ``(m, gamma)`` per metric, weight pair and confidence on the training runs."""
    scenario = _coerce_config(config)
    cache = _cache_for(scenario, cache)
    tr = scenario.training
    if dataset is None:
        dataset = []
        for sc, kind, seeds in training_scenarios(scenario):
            for sim in simulate_batch(sc, seeds, jobs):
                dataset.append((sim.metrics, kind))
    change = scenario.attack_start_sample
    horizon = max(scenario.n_windows - change, 1)
    result = sweep_parameters(
        dataset, tr.m_set, tr.gamma_set, tr.confidence_set, scenario.detection.weights, change, horizon, cache
    )
    if out_dir is not None:
        root = Path(out_dir) / scenario.digest() / "sweep"
        root.mkdir(parents=True, exist_ok=True)
        write_sweep(result, root)
    return result


def write_sweep(result, root: Path) -> None:
    with (root / "cells.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "m", "gamma", "confidence", "dr", "dtm", "s", "runs"] + [f"p_ds_{a:g}_{b:g}" for a, b in result.weights])
        for c in result.cells:
            w.writerow(
                [c.metric, c.m, c.gamma, c.confidence, f"{c.dr:.6f}", "" if c.dtm is None else c.dtm, f"{c.s:.6f}", c.n_runs]
                + [f"{p:.6f}" for p in c.p_ds]
            )
    confs = sorted({c.confidence for c in result.cells})
    metrics = sorted({c.metric for c in result.cells})
    with (root / "best_gamma.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "A", "B"] + [f"gamma@{c:g}" for c in confs] + [f"m@{c:g}" for c in confs])
        for metric in metrics:
            for a, b in result.weights:
                cells = [result.best.get((metric, (a, b), c)) for c in confs]
                w.writerow(
                    [metric, a, b]
                    + ["" if x is None else x.gamma for x in cells]
                    + ["" if x is None else x.m for x in cells]
                )
    body = {
        "best": [
            {
                "metric": metric,
                "weight": list(wt),
                "confidence": conf,
                "m": cell.m,
                "gamma": cell.gamma,
                "dr": cell.dr,
                "s": cell.s,
                "p_ds": cell.p_ds[result.weights.index(wt)],
            }
            for (metric, wt, conf), cell in sorted(result.best.items())
        ],
        "skipped": [list(s) for s in result.skipped],
    }
    (root / "sweep.json").write_text(json.dumps(body, indent=2) + "\n")


def best_detection_config(result, scenario: ScenarioConfig, weight: tuple, confidence: float) -> ScenarioConfig:
    """Scenario whose centralized detectors use the sweep's best cells for ``weight`` and ``confidence``."""
    det = scenario.detection
    changes = {}
    for metric, name in (("ctrl_overhead", "overhead"), ("delivery_rate", "delivery")):
        cell = result.best.get((metric, tuple(float(x) for x in weight), confidence))
        if cell is not None:
            changes[name] = dataclasses.replace(getattr(det, name), m=cell.m, gamma=cell.gamma, confidence=confidence)
    return scenario.replace(detection=dataclasses.replace(det, **changes))


# -- report ----------------------------------------------------------------------


def load_reports(batch_dir: Path | str) -> list[dict]:
    root = Path(batch_dir)
    reports = []
    for path in sorted(root.rglob("report.json"), key=lambda p: (str(p.parent.parent), _seed_key(p.parent.name))):
        reports.append(json.loads(path.read_text()))
    return reports


def _seed_key(name: str):
    return (0, int(name)) if name.isdigit() else (1, name)


def report(batch, weights: Sequence[tuple[float, float]] = ((1, 0), (0.8, 0.2), (0.5, 0.5), (0.2, 0.8), (0, 1)), out: Optional[Path | str] = None) -> dict:
    """Summarize a batch (directory of runs or list of per-run reports).

    Produces, per scenario: classification probability and confusion counts,
    DR and 1-S per weight pair for each centralized metric, a per-node
    detection-probability table, per-node identification probabilities and
    per-group detection probabilities.
    """
    reports = load_reports(batch) if isinstance(batch, (str, Path)) else [
        r.summary if isinstance(r, RunRecord) else r for r in batch
    ]
    reports = [r for r in reports if r]
    by_scenario: dict = {}
    for r in reports:
        by_scenario.setdefault(r["digest"], []).append(r)
    summary = {"scenarios": []}
    for digest, runs in sorted(by_scenario.items()):
        summary["scenarios"].append(_summarize_scenario(digest, runs, weights))
    if out is not None:
        _write_report(summary, Path(out))
    return summary


def _summarize_scenario(digest: str, runs: list[dict], weights) -> dict:
    first = runs[0]
    n_nodes = first["n_nodes"]
    change = first["change_window"]
    post = first["post_windows"]
    truth = first["attack"]
    counts = {"fdff": 0, "fni": 0, "none": 0, "false_alarm": 0}
    for r in runs:
        if r["label"] == Label.NO_ATTACK.value:
            counts["none"] += 1
        elif r["trigger_window"] < change:
            counts["false_alarm"] += 1
        else:
            counts[r["label"]] += 1
    detected = counts["fdff"] + counts["fni"]
    cls_prob = counts[truth] / detected if detected and truth in counts else None
    central = {}
    for metric in ("ctrl_overhead", "delivery_rate"):
        outcomes = [(r["central"][metric]["detected"], r["central"][metric]["delay"]) for r in runs]
        rep = score(outcomes, post, weights)
        central[metric] = {
            "dr": rep.dr,
            "dtm": rep.dtm,
            "one_minus_s": rep.one_minus_s,
            "dtm_undefined": rep.dtm_undefined,
            "p_ds": {f"{a:g},{b:g}": v for (a, b), v in rep.p_ds.items()},
        }
    node_hits = np.zeros(n_nodes)
    for r in runs:
        for node, w in r["node_alarms"].items():
            if w >= change:
                node_hits[int(node)] += 1
    heat = [{"node": v, "detection_probability": node_hits[v] / len(runs)} for v in range(n_nodes)]
    ident = []
    for key in ("declared_v1", "declared_v2"):
        declared = np.zeros(n_nodes)
        for r in runs:
            for v in r[key]:
                declared[v] += 1
        attackers = {a for r in runs for a in r["attackers"]}
        ident.append(
            [
                {
                    "node": v,
                    "identification_probability": declared[v] / len(runs),
                    "attacker": v in attackers,
                    "misidentified": bool(declared[v] > 0 and v not in attackers),
                }
                for v in range(n_nodes)
            ]
        )
    n_groups = len(first["groups"])
    group_hits = np.zeros(n_groups)
    for r in runs:
        for g, w in r["group_alarms"].items():
            if w >= change:
                group_hits[int(g)] += 1
    groups = [
        {"group": g, "members": first["groups"][g], "detection_probability": group_hits[g] / len(runs)}
        for g in range(n_groups)
    ]
    return {
        "digest": digest,
        "scenario": first["scenario"],
        "attack": truth,
        "runs": len(runs),
        "classification_prob": cls_prob,
        "confusion": counts,
        "central": central,
        "heatmap": heat,
        "identification_v1": ident[0],
        "identification_v2": ident[1],
        "groups": groups,
    }


def _write_report(summary: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    with (out / "heatmap.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["digest", "node", "detection_probability"])
        for sc in summary["scenarios"]:
            for row in sc["heatmap"]:
                w.writerow([sc["digest"], row["node"], f"{row['detection_probability']:.6f}"])
    with (out / "identification.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["digest", "algorithm", "node", "identification_probability", "attacker", "misidentified"])
        for sc in summary["scenarios"]:
            for alg in ("v1", "v2"):
                for row in sc[f"identification_{alg}"]:
                    w.writerow(
                        [sc["digest"], alg, row["node"], f"{row['identification_probability']:.6f}", int(row["attacker"]), int(row["misidentified"])]
                    )
    with (out / "groups.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["digest", "group", "members", "detection_probability"])
        for sc in summary["scenarios"]:
            for row in sc["groups"]:
                w.writerow([sc["digest"], row["group"], " ".join(map(str, row["members"])), f"{row['detection_probability']:.6f}"])
    with (out / "central.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["digest", "attack", "metric", "dr", "one_minus_s", "classification_prob"])
        for sc in summary["scenarios"]:
            for metric, row in sc["central"].items():
                cp = sc["classification_prob"]
                w.writerow([sc["digest"], sc["attack"], metric, f"{row['dr']:.6f}", f"{row['one_minus_s']:.6f}", "" if cp is None else f"{cp:.6f}"])
