"""Attacker identification from distributed alarms.

Two neighbourhood-voting rules for flooding attackers and a speed ranking of
group alarms for report tampering.  Infrastructure nodes (controller and
sinks) run no detector here and are never suspected, so they are left out of
the identification graph entirely.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Optional, Sequence

import numpy as np

from .sim.topology import Topology

log = logging.getLogger(__name__)

Graph = Mapping[int, Iterable[int]]


@dataclass(frozen=True)
class AlarmSet:
    """First alarm per node, optionally restricted to a window range."""

    alarms: tuple  # of (node, window, metric)
    window_span: Optional[range] = None

    @classmethod
    def from_events(cls, events: Iterable, window_span: Optional[range] = None) -> "AlarmSet":
        first: dict = {}
        for ev in sorted(events, key=lambda e: (e.window, e.node)):
            if window_span is not None and ev.window not in window_span:
                continue
            key = (ev.node, ev.metric)
            if key not in first:
                first[key] = (ev.node, ev.window, ev.metric)
        return cls(tuple(sorted(first.values(), key=lambda a: (a[1], a[0]))), window_span)

    @property
    def nodes(self) -> list[int]:
        return sorted({a[0] for a in self.alarms})

    def window_of(self, node: int) -> int:
        return min(w for v, w, _ in self.alarms if v == node)


@dataclass
class IdentificationResult:
    declared: frozenset
    tally: dict  # suspect -> count
    degree: dict  # node -> degree in the identification graph
    nominations: dict = field(default_factory=dict)  # reporter -> nominated suspect
    abstained: list = field(default_factory=list)


def identification_graph(topology: Topology) -> dict[int, frozenset]:
    infra = topology.infrastructure
    return {
        v: frozenset(u for u in topology.neighbors[v] if u not in infra) for v in topology.nodes if v not in infra
    }


def _alarm_nodes(alarms, graph: Graph) -> list[int]:
    nodes = alarms.nodes if isinstance(alarms, AlarmSet) else sorted(set(alarms))
    return [v for v in nodes if v in graph]


def identify_v1(alarms, graph: Graph) -> IdentificationResult:
    """Every neighbour of an alarming node is a suspect once per alarming node;
    a suspect tallied by as many alarming nodes as it has neighbours is declared."""
    tally: Counter = Counter()
    for v in _alarm_nodes(alarms, graph):
        for s in set(graph[v]):
            tally[s] += 1
    degree = {v: len(set(graph[v])) for v in graph}
    declared = frozenset(s for s, c in tally.items() if degree.get(s, 0) > 0 and c == degree[s])
    return IdentificationResult(declared, dict(sorted(tally.items())), degree)


def exchange_view(
    exchanges: np.ndarray,
    alarms: AlarmSet,
    graph: Graph,
    depth: int = 10,
) -> dict[int, dict[int, int]]:
    """Per alarming node, its exchange count with each neighbour over the
    ``depth`` windows ending at (and including) its alarm window."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    view = {}
    for v in _alarm_nodes(alarms, graph):
        w = alarms.window_of(v)
        lo = max(0, w - depth + 1)
        block = exchanges[lo : w + 1, v, :].sum(axis=0)
        view[v] = {u: int(block[u]) for u in sorted(graph[v])}
    return view


def identify_v2(alarms, exchanges: Mapping[int, Mapping[int, int]], graph: Graph) -> IdentificationResult:
    """Each alarming node nominates its busiest neighbour (smaller id on ties);
    a suspect nominated by all of its neighbours is declared.

    Alarming nodes with no exchange history, or none with any neighbour, abstain.
    """
    tally: Counter = Counter()
    nominations = {}
    abstained = []
    for v in _alarm_nodes(alarms, graph):
        counts = exchanges.get(v)
        if not counts or max(counts.values()) <= 0:
            log.info("node %s has no exchange history and abstains", v)
            abstained.append(v)
            continue
        best = max(counts.values())
        suspect = min(u for u, c in counts.items() if c == best)
        nominations[v] = suspect
        tally[suspect] += 1
    degree = {v: len(set(graph[v])) for v in graph}
    declared = frozenset(s for s, c in tally.items() if degree.get(s, 0) > 0 and c == degree[s])
    return IdentificationResult(declared, dict(sorted(tally.items())), degree, nominations, abstained)


@dataclass(frozen=True)
class RegionRank:
    group: int
    stop_window: int
    evidence: float  # 1 - S of the group detector


@dataclass(frozen=True)
class RegionRanking:
    ranks: tuple
    reliable: bool
    note: str = "heuristic: earlier group alarms suggest attackers nearby"

    def order(self) -> list[int]:
        return [r.group for r in self.ranks]


def region_localize(
    group_alarms: Sequence[tuple[int, int]],
    groups: Sequence[Iterable[int]],
    change_window: int,
    horizon: int,
    reliable_max_groups: int = 4,
) -> RegionRanking:
    """Rank groups by how early they alarmed after the change.

    Evidence is ``1 - S`` with ``S`` the delay over ``horizon``.  The ranking
    held up on small grids only, so it is flagged unreliable when there are
    more than ``reliable_max_groups`` groups.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n = len(groups)
    ranks = []
    for g, w in group_alarms:
        if not 0 <= g < n:
            raise ValueError(f"group index {g} out of range")
        if w < change_window:
            continue
        delay = w - change_window + 1
        ranks.append(RegionRank(g, w, 1.0 - min(delay / horizon, 1.0)))
    ranks.sort(key=lambda r: (r.stop_window, r.group))
    return RegionRanking(tuple(ranks), n <= reliable_max_groups)


DECLARATION_HEADER = ("node", "declared", "true_attacker", "tally", "degree")


def write_declarations(
    result: IdentificationResult,
    attackers: Iterable[int],
    nodes: Iterable[int],
    fh: IO[str],
) -> None:
    attackers = set(attackers)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(DECLARATION_HEADER)
    for v in sorted(nodes):
        writer.writerow(
            [v, int(v in result.declared), int(v in attackers), result.tally.get(v, 0), result.degree.get(v, 0)]
        )


def declarations_csv(result: IdentificationResult, attackers: Iterable[int], nodes: Iterable[int]) -> str:
    buf = io.StringIO()
    write_declarations(result, attackers, nodes, buf)
    return buf.getvalue()


@dataclass
class IdentificationSummary:
    runs: int
    per_attacker: dict  # node -> share of runs in which it was declared
    misidentifications: int  # declared non-attackers, summed over runs
    misidentified_nodes: dict  # node -> count

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "per_attacker": {str(k): v for k, v in sorted(self.per_attacker.items())},
            "misidentifications": self.misidentifications,
            "misidentified_nodes": {str(k): v for k, v in sorted(self.misidentified_nodes.items())},
        }


def summarize_identification(
    results: Sequence[IdentificationResult],
    attacker_sets: Sequence[Iterable[int]],
) -> IdentificationSummary:
    hits: Counter = Counter()
    present: Counter = Counter()
    wrong: Counter = Counter()
    for res, attackers in zip(results, attacker_sets):
        attackers = set(attackers)
        for a in attackers:
            present[a] += 1
            hits[a] += a in res.declared
        for d in res.declared - attackers:
            wrong[d] += 1
    per = {a: hits[a] / present[a] for a in sorted(present)}
    return IdentificationSummary(len(results), per, sum(wrong.values()), dict(sorted(wrong.items())))
