"""Centralized and distributed detection over windowed metric series.

The centralized layer runs one detector on network control overhead and one
on delivery rate; whichever fires first names the attack.  The distributed
layer runs one detector per node (or per group of nodes) on a single local
metric.  Batch helpers evaluate whole series at once and agree exactly with
feeding the same samples window by window.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .cpd import (
    CriticalValue,
    CriticalValueCache,
    CusumDetector,
    DegenerateVarianceError,
    Detection,
    DetectorParams,
    OutcomeKind,
    first_detection,
)
from .sim.metrics import NODE_METRICS, MetricSeries, MetricWindow

CENTRAL_METRICS = ("ctrl_overhead", "delivery_rate")
# which attack each centralized metric is tuned against
METRIC_TARGET = {"ctrl_overhead": "fdff", "delivery_rate": "fni"}


class Label(enum.Enum):
    FDFF = "fdff"
    FNI = "fni"
    NO_ATTACK = "none"


@dataclass(frozen=True)
class AttackLabel:
    label: Label
    trigger_window: Optional[int] = None
    triggered_metric: Optional[str] = None


@dataclass(frozen=True)
class AlarmEvent:
    node: int
    window: int
    metric: str
    stat: float
    threshold: float


# -- centralized ------------------------------------------------------------


@dataclass
class CentralizedDetector:
    overhead_detector: CusumDetector
    delivery_detector: CusumDetector
    label: Optional[AttackLabel] = None
    windows_seen: int = 0

    @classmethod
    def build(
        cls,
        overhead: DetectorParams,
        delivery: DetectorParams,
        cache: Optional[CriticalValueCache] = None,
    ) -> "CentralizedDetector":
        return cls(CusumDetector.from_cache(overhead, cache), CusumDetector.from_cache(delivery, cache))

    @property
    def stopped(self) -> bool:
        return self.label is not None


def centralized_step(det: CentralizedDetector, window: MetricWindow) -> Optional[AttackLabel]:
    """Feed one window to both detectors; returns a label on the first trigger.

    A same-window trigger on both metrics is labelled FDFF.  Once a label is
    emitted both detectors are considered stopped and later windows are ignored.
    """
    if det.stopped:
        return None
    det.windows_seen += 1
    over = det.overhead_detector.ingest(float(window.network_ctrl_overhead))
    deliv = det.delivery_detector.ingest(float(window.network_delivery_rate))
    if over.kind is OutcomeKind.CHANGE:
        det.label = AttackLabel(Label.FDFF, window.index, "ctrl_overhead")
    elif deliv.kind is OutcomeKind.CHANGE:
        det.label = AttackLabel(Label.FNI, window.index, "delivery_rate")
    return det.label


def central_series(series: MetricSeries, metric: str) -> np.ndarray:
    if metric == "ctrl_overhead":
        return series.ctrl_overhead.astype(float)
    if metric == "delivery_rate":
        return series.delivery_rate.astype(float)
    raise KeyError(f"unknown network metric {metric!r}")


def stop_window(det: Optional[Detection]) -> Optional[int]:
    """0-based window index at which ``det`` fired."""
    return None if det is None else det.sample_index - 1


def classify(
    series: MetricSeries,
    overhead: DetectorParams,
    delivery: DetectorParams,
    overhead_cv: CriticalValue,
    delivery_cv: CriticalValue,
) -> AttackLabel:
    """Batch form of :func:`centralized_step` over a whole series."""
    d_over = first_detection(central_series(series, "ctrl_overhead"), overhead, overhead_cv)
    d_deliv = first_detection(central_series(series, "delivery_rate"), delivery, delivery_cv)
    return first_trigger(stop_window(d_over), stop_window(d_deliv))


def first_trigger(w_over: Optional[int], w_deliv: Optional[int]) -> AttackLabel:
    """Label from the two stop windows; a same-window trigger counts as FDFF."""
    if w_over is None and w_deliv is None:
        return AttackLabel(Label.NO_ATTACK)
    if w_deliv is None or (w_over is not None and w_over <= w_deliv):
        return AttackLabel(Label.FDFF, w_over, "ctrl_overhead")
    return AttackLabel(Label.FNI, w_deliv, "delivery_rate")


# -- scoring ------------------------------------------------------------------


@dataclass
class PerformanceReport:
    n_runs: int
    dr: float
    dtm: Optional[float]
    s: float
    one_minus_s: float
    p_ds: dict
    dtm_undefined: bool = False
    per_node_dp: dict = field(default_factory=dict)
    classification_prob: Optional[float] = None
    confusion: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "dr": self.dr,
            "dtm": self.dtm,
            "s": self.s,
            "one_minus_s": self.one_minus_s,
            "dtm_undefined": self.dtm_undefined,
            "p_ds": {f"{a:g},{b:g}": v for (a, b), v in self.p_ds.items()},
            "per_node_dp": {str(k): v for k, v in self.per_node_dp.items()},
            "classification_prob": self.classification_prob,
            "confusion": self.confusion,
        }


def p_ds(a: float, b: float, s: float, dr: float) -> float:
    return a * (1.0 - s) + b * dr


def score(
    runs: Sequence[tuple[bool, Optional[int]]],
    horizon: int,
    weights: Iterable[tuple[float, float]],
) -> PerformanceReport:
    """Detection rate, median delay and the weighted score for a batch of runs.

    ``runs`` holds ``(detected, delay)`` pairs with delay in samples after the
    change.  With no detections the delay is undefined and ``s`` is taken as 1.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    weights = [(float(a), float(b)) for a, b in weights]
    for a, b in weights:
        if a < 0 or b < 0 or abs(a + b - 1.0) > 1e-9:
            raise ValueError(f"weights ({a}, {b}) must be non-negative and sum to 1")
    n = len(runs)
    delays = [d for ok, d in runs if ok]
    dr = len(delays) / n if n else 0.0
    if delays:
        dtm = float(np.median(delays))
        s = min(max(dtm / horizon, 0.0), 1.0)
        undefined = False
    else:
        dtm, s, undefined = None, 1.0, True
    return PerformanceReport(
        n_runs=n,
        dr=dr,
        dtm=dtm,
        s=s,
        one_minus_s=1.0 - s,
        p_ds={(a, b): p_ds(a, b, s, dr) for a, b in weights},
        dtm_undefined=undefined,
    )


def run_outcome(det: Optional[Detection], change_window: int) -> tuple[bool, Optional[int]]:
    """A detection counts only at or after ``change_window``; delay is 1 on the first attacked window."""
    w = stop_window(det)
    if w is None or w < change_window:
        return False, None
    return True, w - change_window + 1


def classification_summary(labels: Sequence[AttackLabel], truth: str, change_window: int) -> dict:
    """Share of detected runs given the right label, plus raw confusion counts."""
    counts = {"fdff": 0, "fni": 0, "none": 0, "false_alarm": 0}
    for lab in labels:
        if lab.label is Label.NO_ATTACK:
            counts["none"] += 1
        elif lab.trigger_window < change_window:
            counts["false_alarm"] += 1
        else:
            counts[lab.label.value] += 1
    detected = counts["fdff"] + counts["fni"]
    prob = counts[truth] / detected if detected else None
    return {"classification_prob": prob, "confusion": counts, "detected": detected, "runs": len(labels)}


# -- parameter sweep ------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    metric: str
    m: int
    gamma: float
    confidence: float
    dr: float
    dtm: Optional[float]
    s: float
    p_ds: tuple  # aligned with the sweep's weights
    n_runs: int


@dataclass
class SweepResult:
    weights: tuple
    cells: list
    best: dict  # (metric, weight, confidence) -> SweepCell
    skipped: list

    def best_gamma_table(self, metric: str) -> dict:
        """Rows keyed by weight pair, columns by confidence."""
        table: dict = {}
        for (met, w, c), cell in self.best.items():
            if met == metric:
                table.setdefault(w, {})[c] = cell.gamma
        return table


def sweep_parameters(
    dataset: Sequence[tuple[MetricSeries, str]],
    m_set: Sequence[int],
    gamma_set: Sequence[float],
    confidence_set: Sequence[float],
    weights: Sequence[tuple[float, float]],
    change_window: int,
    horizon: int,
    cache: Optional[CriticalValueCache] = None,
    metrics: Sequence[str] = CENTRAL_METRICS,
) -> SweepResult:
    """Grid-evaluate the weighted score and pick the best ``(m, gamma)``.

    Each metric is scored on the runs of the attack it is meant to catch.
    Ties go to the smaller gamma, then the smaller m.  Cells whose ``m`` leaves
    no room before the change or whose learning window is constant are
    skipped and listed in ``skipped``.
    """
    cache = cache if cache is not None else CriticalValueCache()
    weights = tuple((float(a), float(b)) for a, b in weights)
    cells: list[SweepCell] = []
    skipped: list = []
    for metric in metrics:
        runs = [central_series(s, metric) for s, label in dataset if label == METRIC_TARGET[metric]]
        if not runs:
            skipped.append((metric, None, None, None, "no runs for this metric's attack"))
            continue
        for m, gamma, conf in itertools.product(m_set, gamma_set, confidence_set):
            length = min(len(r) for r in runs)
            if m >= change_window or m >= length:
                skipped.append((metric, m, gamma, conf, "series too short for m"))
                continue
            params = DetectorParams(m, gamma, conf, horizon=length - m)
            cv = cache.get(gamma, conf)
            outcomes = []
            try:
                for x in runs:
                    outcomes.append(run_outcome(first_detection(x, params, cv), change_window))
            except DegenerateVarianceError:
                skipped.append((metric, m, gamma, conf, "constant learning window"))
                continue
            rep = score(outcomes, horizon, weights)
            cells.append(
                SweepCell(metric, m, gamma, conf, rep.dr, rep.dtm, rep.s, tuple(rep.p_ds[w] for w in weights), len(runs))
            )
    best: dict = {}
    for cell in cells:
        for wi, w in enumerate(weights):
            key = (cell.metric, w, cell.confidence)
            cur = best.get(key)
            if cur is None:
                best[key] = cell
                continue
            a, b = cell.p_ds[wi], cur.p_ds[wi]
            if a > b + 1e-12 or (abs(a - b) <= 1e-12 and (cell.gamma, cell.m) < (cur.gamma, cur.m)):
                best[key] = cell
    return SweepResult(weights, cells, best, skipped)


# -- distributed ------------------------------------------------------------------


@dataclass
class DistributedDeployment:
    """One detector per node (or per group) on a single local metric."""

    metric: str
    detectors: dict
    groups: Optional[list] = None
    alarmed: set = field(default_factory=set)
    excluded: set = field(default_factory=set)

    @classmethod
    def build(
        cls,
        metric: str,
        nodes: Iterable[int],
        params: DetectorParams,
        cache: Optional[CriticalValueCache] = None,
        groups: Optional[Sequence[Iterable[int]]] = None,
    ) -> "DistributedDeployment":
        if metric not in NODE_METRICS:
            raise KeyError(f"unknown node metric {metric!r}")
        nodes = sorted(nodes)
        if groups is not None:
            groups = [frozenset(g) for g in groups]
            check_partition(groups, nodes)
            keys = range(len(groups))
        else:
            keys = nodes
        return cls(metric, {k: CusumDetector.from_cache(params, cache) for k in keys}, groups)


def check_partition(groups: Sequence[frozenset], nodes: Iterable[int]) -> None:
    if any(len(g) == 0 for g in groups):
        raise ValueError("groups must be non-empty")
    union: set = set()
    for g in groups:
        if union & g:
            raise ValueError("groups overlap")
        union |= g
    if union != set(nodes):
        raise ValueError("groups must cover the node set exactly")


def _sample(dep: DistributedDeployment, window: MetricWindow, key: int) -> float:
    col = NODE_METRICS.index(dep.metric)
    if dep.groups is None:
        return float(window.per_node[key][col])
    return float(sum(window.per_node[v][col] for v in dep.groups[key]))


def distributed_step(dep: DistributedDeployment, window: MetricWindow) -> list[AlarmEvent]:
    """Feed one window to every live detector; returns alarms raised in this window.

    Alarmed detectors stop individually.  A detector whose learning window is
    constant is excluded without affecting the others.
    """
    alarms = []
    for key in sorted(dep.detectors):
        if key in dep.alarmed or key in dep.excluded:
            continue
        det = dep.detectors[key]
        try:
            out = det.ingest(_sample(dep, window, key))
        except DegenerateVarianceError:
            dep.excluded.add(key)
            continue
        if out.kind is OutcomeKind.CHANGE:
            dep.alarmed.add(key)
            d = out.detection
            alarms.append(AlarmEvent(key, window.index, dep.metric, abs(d.statistic), d.threshold))
    return alarms


def node_alarms(
    samples: np.ndarray,
    params: DetectorParams,
    critical: CriticalValue,
    metric: str,
) -> tuple[list[AlarmEvent], set]:
    """Batch per-column detection over ``samples`` of shape ``(windows, units)``.

    Returns the alarms ordered by (window, unit) and the set of units excluded
    for a constant learning window.
    """
    alarms, excluded = [], set()
    for k in range(samples.shape[1]):
        try:
            det = first_detection(samples[:, k], params, critical)
        except DegenerateVarianceError:
            excluded.add(k)
            continue
        if det is not None:
            alarms.append(AlarmEvent(k, stop_window(det), metric, abs(det.statistic), det.threshold))
    alarms.sort(key=lambda a: (a.window, a.node))
    return alarms, excluded


def group_series(samples: np.ndarray, groups: Sequence[Iterable[int]]) -> np.ndarray:
    """Per-window sums of member columns, shape ``(windows, groups)``."""
    cols = []
    for g in groups:
        members = sorted(g)
        if not members:
            raise ValueError("groups must be non-empty")
        cols.append(samples[:, members].sum(axis=1))
    return np.stack(cols, axis=1)


def aggregate_groups(
    series: MetricSeries,
    groups: Sequence[Iterable[int]],
    metric: str,
    params: DetectorParams,
    critical: CriticalValue,
) -> tuple[np.ndarray, list[AlarmEvent]]:
    """Group-summed series and one alarm per group that fires (node field = group index)."""
    agg = group_series(series.node_metric(metric), groups)
    alarms, _ = node_alarms(agg, params, critical, metric)
    return agg, alarms


def detection_probability(
    alarm_sets: Sequence[Sequence[AlarmEvent]],
    units: Iterable[int],
    change_window: int,
) -> dict:
    """Per-unit share of runs with an alarm at or after the change window."""
    units = list(units)
    hits = dict.fromkeys(units, 0)
    for alarms in alarm_sets:
        for a in alarms:
            if a.node in hits and a.window >= change_window:
                hits[a.node] += 1
    n = len(alarm_sets)
    return {u: (hits[u] / n if n else 0.0) for u in units}


# -- alarm log ----------------------------------------------------------------------


ALARM_HEADER = ("window", "node", "metric", "stat", "threshold")


def write_alarms(alarms: Iterable[AlarmEvent], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(ALARM_HEADER)
    for a in alarms:
        writer.writerow([a.window, a.node, a.metric, f"{a.stat:.6f}", f"{a.threshold:.6f}"])


def read_alarms(fh: IO[str]) -> list[AlarmEvent]:
    reader = csv.DictReader(fh)
    return [
        AlarmEvent(int(r["node"]), int(r["window"]), r["metric"], float(r["stat"]), float(r["threshold"]))
        for r in reader
    ]


def alarms_csv(alarms: Iterable[AlarmEvent]) -> str:
    buf = io.StringIO()
    write_alarms(alarms, buf)
    return buf.getvalue()
