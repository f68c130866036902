"""Discrete-event model of an SDN-managed sensor grid under flooding and report-tampering attacks."""

from .engine import Simulator, run
from .flowtable import Action, FlowTable, FlowTableEntry
from .metrics import MetricSeries, MetricWindow, exchange_counts, window_metrics
from .packets import CONTROL_KINDS, Event, Kind, Packet
from .topology import (
    PlacementError,
    Topology,
    UnreachableError,
    attacker_count,
    build_grid,
    compute_routes,
    grid_groups,
    next_hops,
    place_attackers,
)
from .trace import ConservationError, EventTrace

__all__ = [
    "Action",
    "CONTROL_KINDS",
    "ConservationError",
    "Event",
    "EventTrace",
    "FlowTable",
    "FlowTableEntry",
    "Kind",
    "MetricSeries",
    "MetricWindow",
    "Packet",
    "PlacementError",
    "Simulator",
    "Topology",
    "UnreachableError",
    "attacker_count",
    "build_grid",
    "compute_routes",
    "exchange_counts",
    "grid_groups",
    "next_hops",
    "place_attackers",
    "run",
    "window_metrics",
]
