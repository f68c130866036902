"""Grid topology, attacker placement and hop-count routing."""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .flowtable import Action, FlowTable, FlowTableEntry

NodeId = int
Graph = Mapping[NodeId, Iterable[NodeId]]


class UnreachableError(ValueError):
    def __init__(self, node: NodeId, destination: NodeId):
        super().__init__(f"node {node} cannot reach {destination}")
        self.node = node
        self.destination = destination


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Square grid of ``side * side`` nodes, ids row-major from the top-left."""

    side: int
    spacing: float
    radio_radius: float
    positions: tuple[tuple[float, float], ...]
    neighbors: tuple[frozenset, ...]
    controller: NodeId
    data_sink: NodeId
    mgmt_sink: NodeId

    @property
    def n(self) -> int:
        return self.side * self.side

    @property
    def nodes(self) -> range:
        return range(self.n)

    @property
    def infrastructure(self) -> frozenset:
        return frozenset((self.controller, self.data_sink, self.mgmt_sink))

    def node_id(self, row: int, col: int) -> NodeId:
        return row * self.side + col

    def cell(self, node: NodeId) -> tuple[int, int]:
        return divmod(node, self.side)

    def graph(self) -> dict[NodeId, frozenset]:
        return {v: self.neighbors[v] for v in self.nodes}

    def is_corner(self, node: NodeId) -> bool:
        r, c = self.cell(node)
        return r in (0, self.side - 1) and c in (0, self.side - 1)


def build_grid(side: int, spacing: float = 10.0, radio_radius: float = 1.5) -> Topology:
    """Regular grid with unit-disk neighbourhoods of radius ``radio_radius * spacing``.

    The controller sits in the centre cell (lower index on ties) and the data and
    management sinks on adjacent cells in the middle of the bottom edge.
    """
    if side < 3:
        raise ValueError(f"side must be >= 3 to have an interior centre, got {side}")
    if spacing <= 0 or radio_radius <= 0:
        raise ValueError("spacing and radio_radius must be positive")
    n = side * side
    positions = tuple((c * spacing, r * spacing) for r in range(side) for c in range(side))
    reach = radio_radius * spacing * (1 + 1e-9)
    neighbors = []
    for a in range(n):
        ax, ay = positions[a]
        neighbors.append(
            frozenset(b for b in range(n) if b != a and math.hypot(positions[b][0] - ax, positions[b][1] - ay) <= reach)
        )
    mid = (side - 1) // 2
    return Topology(
        side=side,
        spacing=float(spacing),
        radio_radius=float(radio_radius),
        positions=positions,
        neighbors=tuple(neighbors),
        controller=mid * side + mid,
        data_sink=(side - 1) * side + mid,
        mgmt_sink=(side - 1) * side + mid + 1,
    )


def attacker_count(n: int, fraction: float) -> int:
    if fraction <= 0:
        return 0
    return max(1, int(math.floor(fraction * n + 1e-9)))


def place_attackers(topology: Topology, fraction: float, seed: int, max_tries: int = 200) -> frozenset:
    """Pick ``floor(fraction * n)`` (at least one) pairwise non-adjacent attackers."""
    count = attacker_count(topology.n, fraction)
    if count == 0:
        return frozenset()
    rng = random.Random(seed)
    candidates = [v for v in topology.nodes if v not in topology.infrastructure]
    for _ in range(max_tries):
        rng.shuffle(candidates)
        chosen: list[int] = []
        for v in candidates:
            if all(v not in topology.neighbors[a] for a in chosen):
                chosen.append(v)
                if len(chosen) == count:
                    return frozenset(chosen)
    raise PlacementError(f"could not place {count} non-adjacent attackers on {topology.n} nodes")


def validate_attackers(topology: Topology, attackers: Iterable[NodeId]) -> frozenset:
    attackers = frozenset(attackers)
    bad = [a for a in attackers if a not in topology.nodes]
    if bad:
        raise PlacementError(f"attacker ids out of range: {sorted(bad)}")
    if attackers & topology.infrastructure:
        raise PlacementError("attackers cannot be the controller or a sink")
    for a in attackers:
        if topology.neighbors[a] & attackers:
            raise PlacementError(f"attacker {a} is adjacent to another attacker")
    return attackers


def bfs_distances(graph: Graph, source: NodeId) -> dict[NodeId, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in graph.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def next_hops(graph: Graph, destination: NodeId) -> dict[NodeId, NodeId]:
    """Next hop toward ``destination`` for every node that can reach it.

    Among neighbours one hop closer the smallest id wins.  ``graph`` must be
    symmetric; unreachable nodes are simply absent from the result.
    """
    dist = bfs_distances(graph, destination)
    hops = {}
    for v, d in dist.items():
        if d == 0:
            continue
        hops[v] = min(u for u in graph[v] if dist.get(u, -1) == d - 1)
    return hops


def compute_routes(
    topology: Topology,
    graph: Optional[Graph] = None,
    capacity: int = 32,
) -> dict[NodeId, FlowTable]:
    """Hop-count flow tables toward the controller and both sinks.

    Raises :class:`UnreachableError` naming the first node (lowest id) that
    cannot reach one of the destinations.
    """
    graph = topology.graph() if graph is None else graph
    tables = {v: FlowTable(capacity) for v in topology.nodes}
    for dest in (topology.controller, topology.data_sink, topology.mgmt_sink):
        hops = next_hops(graph, dest)
        for v in topology.nodes:
            if v == dest:
                tables[v].install(FlowTableEntry(dest, Action.RECEIVE, None))
            elif v in hops:
                tables[v].install(FlowTableEntry(dest, Action.FORWARD, hops[v]))
            else:
                raise UnreachableError(v, dest)
    return tables


def grid_groups(topology: Topology, per_side: Optional[int] = None) -> list[frozenset]:
    """Partition the grid into ``per_side**2`` rectangular blocks.

    Defaults to quadrants for grids up to 7x7 and a 3x3 arrangement above.
    Groups are ordered row-major by block.
    """
    k = per_side if per_side is not None else (2 if topology.side < 8 else 3)
    if not 1 <= k <= topology.side:
        raise ValueError("per_side must be between 1 and the grid side")
    bounds = [round(i * topology.side / k) for i in range(k + 1)]
    groups = []
    for bi in range(k):
        for bj in range(k):
            members = frozenset(
                topology.node_id(r, c)
                for r in range(bounds[bi], bounds[bi + 1])
                for c in range(bounds[bj], bounds[bj + 1])
            )
            groups.append(members)
    return groups
