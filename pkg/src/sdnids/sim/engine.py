"""Event-driven simulation of an SDN-managed sensor grid.

Timed events (periodic emissions, probes, route refreshes, attack injections,
controller replies) come off a heap.  Links carry no latency: once emitted, a
packet is walked hop by hop through the flow tables at the emission instant,
with an independent loss draw per transmission.  Every packet-level action is
appended to an :class:`EventTrace`; metrics are derived from the trace alone.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..config import ScenarioConfig
from .flowtable import Action, FlowTable, FlowTableEntry
from .packets import Event, Kind, Packet
from .topology import Topology, build_grid, compute_routes, next_hops, place_attackers, validate_attackers
from .trace import EventTrace

# timed event codes
_EMIT_DATA, _EMIT_MGMT, _PROBE, _REFRESH, _FDFF, _CTRL_SEND, _FLOW_ID, _RETRY = range(8)

_SIZES = {
    Kind.FLOW_REQUEST: 8,
    Kind.FLOW_SETUP: 12,
    Kind.FLOW_ID_REGISTER: 6,
    Kind.ACK: 2,
}


class Role:
    PLAIN = "plain"
    ATTACKER = "attacker"
    CONTROLLER = "controller"
    DATA_SINK = "data_sink"
    MGMT_SINK = "mgmt_sink"


@dataclass
class NodeState:
    id: int
    role: str
    flow_table: FlowTable
    # outstanding flow requests: match -> time sent
    pending: dict
    # last link metric reported per neighbour
    reported: dict


def seed_streams(seed: int, n: int) -> list[random.Random]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [random.Random(int(c.generate_state(1, dtype=np.uint64)[0])) for c in children]


def resolve_attackers(scenario: ScenarioConfig, topology: Topology, seed: int) -> frozenset:
    attack = scenario.attack
    if attack.kind == "none":
        return frozenset()
    if attack.attackers:
        return validate_attackers(topology, attack.attackers)
    placement = seed if attack.placement_seed is None else attack.placement_seed
    return place_attackers(topology, attack.attacker_fraction, placement)


class Simulator:
    def __init__(self, scenario: ScenarioConfig, seed: int):
        self.scenario = scenario
        self.seed = int(seed)
        topo_cfg = scenario.topology
        self.topology = topo = build_grid(topo_cfg.side, topo_cfg.spacing, topo_cfg.radio_radius)
        self.attackers = resolve_attackers(scenario, topo, self.seed)
        net = scenario.network
        self.net = net
        (self._rng_loss, self._rng_metric, self._rng_timer, self._rng_attack) = seed_streams(self.seed, 4)

        tables = compute_routes(topo, capacity=net.table_capacity)
        self.nodes: list[NodeState] = []
        for v in topo.nodes:
            if v == topo.controller:
                role = Role.CONTROLLER
            elif v == topo.data_sink:
                role = Role.DATA_SINK
            elif v == topo.mgmt_sink:
                role = Role.MGMT_SINK
            elif v in self.attackers:
                role = Role.ATTACKER
            else:
                role = Role.PLAIN
            self.nodes.append(NodeState(v, role, tables[v], {}, {u: 1.0 for u in topo.neighbors[v]}))
        self._true_nbrs = topo.neighbors
        self._destinations = (topo.controller, topo.data_sink, topo.mgmt_sink)

        # controller view: last reported neighbour metrics per node
        self._view: dict[int, dict[int, float]] = {v: {u: 1.0 for u in topo.neighbors[v]} for v in topo.nodes}
        self._view_graph = self._graph_from_view()
        self._ctrl_hops = {d: next_hops(self._view_graph, d) for d in self._destinations}
        self._down_parent = next_hops(self._view_graph, topo.controller)

        self.trace = EventTrace(
            n_nodes=topo.n,
            duration=scenario.duration,
            window=scenario.window,
            data_sink=topo.data_sink,
            proc_ms=net.proc_ms_per_packet,
            tx_ms_per_16=net.tx_ms_per_16_bytes,
            attackers=tuple(sorted(self.attackers)),
        )
        self._rows = self.trace.rows
        self._heap: list = []
        self._seq = 0
        self._pid = 0
        self._flow_seq = 0
        self._forgeries: dict = {}
        self._fdff = scenario.attack.kind == "fdff"
        self._fni = scenario.attack.kind == "fni"
        self._attack_start = scenario.attack.start_time
        self._loss = net.loss_probability
        self._ttl = net.ttl
        self._hdr = net.header_bytes

    # -- bookkeeping -------------------------------------------------------

    def _graph_from_view(self) -> dict[int, set]:
        floor = self.net.metric_floor
        graph: dict[int, set] = {v: set() for v in self.topology.nodes}
        vetoed = set()
        for v, nbrs in self._view.items():
            for u, metric in nbrs.items():
                if u == v or u not in graph:
                    continue
                edge = (v, u) if v < u else (u, v)
                if metric < floor:
                    vetoed.add(edge)
                else:
                    graph[v].add(u)
                    graph[u].add(v)
        for a, b in vetoed:
            graph[a].discard(b)
            graph[b].discard(a)
        return graph

    def _schedule(self, t: float, code: int, a=None, b=None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, code, a, b))

    def _new_packet(self, kind: int, src: int, dst, now: float, size: int, flags: int = 0) -> Packet:
        self._pid += 1
        pkt = Packet(self._pid, kind, src, dst, self._ttl, self._hdr + size, now, flags)
        self._rows.append((now, src, Event.ORIGIN, kind, -1, src, pkt.size, pkt.pid, flags))
        return pkt

    # -- link layer --------------------------------------------------------

    def _transmit(self, pkt: Packet, u: int, v: int, now: float) -> bool:
        rows = self._rows
        rows.append((now, u, Event.TX, pkt.kind, v, pkt.src, pkt.size, pkt.pid, pkt.flags))
        if v not in self._true_nbrs[u] or (self._loss > 0.0 and self._rng_loss.random() < self._loss):
            rows.append((now, u, Event.DROP_LOSS, pkt.kind, v, pkt.src, pkt.size, pkt.pid, pkt.flags))
            return False
        rows.append((now, v, Event.RX, pkt.kind, u, pkt.src, pkt.size, pkt.pid, pkt.flags))
        return True

    def _terminal(self, node: int, ev: int, pkt: Packet, now: float) -> None:
        self._rows.append((now, node, ev, pkt.kind, -1, pkt.src, pkt.size, pkt.pid, pkt.flags))

    # -- forwarding --------------------------------------------------------

    def _route(self, pkt: Packet, node: int, now: float) -> None:
        """Carry ``pkt`` from ``node`` hop by hop using the flow tables."""
        nodes = self.nodes
        while True:
            if pkt.dst == node:
                self._terminal(node, Event.CONSUME, pkt, now)
                self._on_consume(pkt, node, now)
                return
            if self._fni and pkt.kind == Kind.NEIGHBOR_REPORT and node != pkt.src and node in self.attackers:
                if now >= self._attack_start:
                    self.fni_tamper(pkt, node, now)
            state = nodes[node]
            entry = state.flow_table.lookup(pkt.dst)
            if entry is None or entry.action is not Action.FORWARD:
                self._terminal(node, Event.DROP_NORULE, pkt, now)
                if entry is None:
                    self._request(node, pkt.dst, now)
                return
            nh = entry.action_param
            if not self._transmit(pkt, node, nh, now):
                return
            if pkt.dst == nh:
                node = nh
                continue
            pkt.ttl -= 1
            if pkt.ttl <= 0:
                self._terminal(nh, Event.DROP_TTL, pkt, now)
                return
            node = nh

    def _source_route(self, pkt: Packet, path: list[int], now: float) -> None:
        for u, v in zip(path, path[1:]):
            if not self._transmit(pkt, u, v, now):
                return
        self._terminal(path[-1], Event.CONSUME, pkt, now)
        self._on_consume(pkt, path[-1], now)

    def _down_path(self, node: int) -> Optional[list[int]]:
        parent = self._down_parent
        controller = self.topology.controller
        path = [node]
        while path[-1] != controller:
            nxt = parent.get(path[-1])
            if nxt is None or len(path) > self.topology.n:
                return None
            path.append(nxt)
        path.reverse()
        return path

    # -- node behaviour ----------------------------------------------------

    def _request(self, node: int, match, now: float, attempt: int = 0) -> None:
        if node == self.topology.controller:
            return
        pending = self.nodes[node].pending
        if attempt == 0:
            sent = pending.get(match)
            if sent is not None and now - sent < self.net.request_holdoff:
                return
            pending[match] = now
        elif match not in pending:
            return
        pkt = self._new_packet(Kind.FLOW_REQUEST, node, self.topology.controller, now, _SIZES[Kind.FLOW_REQUEST])
        pkt.meta = match
        if attempt < self.net.request_retries:
            self._schedule(now + self.net.request_holdoff, _RETRY, node, (match, attempt + 1))
        self._route(pkt, node, now)

    def _on_consume(self, pkt: Packet, node: int, now: float) -> None:
        kind = pkt.kind
        if node == self.topology.controller:
            if kind == Kind.FLOW_REQUEST:
                self._schedule(now + self.net.controller_delay, _CTRL_SEND, pkt.src, pkt.meta)
            elif kind == Kind.NEIGHBOR_REPORT:
                self._controller_report(pkt.src, pkt.meta, now)
            return
        if kind == Kind.FLOW_SETUP:
            match, action, param = pkt.meta
            state = self.nodes[node]
            state.flow_table.install(FlowTableEntry(match, action, param))
            state.pending.pop(match, None)
            ack = self._new_packet(Kind.ACK, node, self.topology.controller, now, _SIZES[Kind.ACK])
            self._route(ack, node, now)

    def _emit_setup(self, node: int, match, now: float) -> None:
        """Controller sends the rule for ``match`` to ``node`` along its own view."""
        if isinstance(match, str):
            rule = (match, Action.DROP, None)
        else:
            nh = self._ctrl_hops.get(match, {}).get(node)
            if nh is None:
                return
            rule = (match, Action.FORWARD, nh)
        path = self._down_path(node)
        if path is None:
            return
        pkt = self._new_packet(Kind.FLOW_SETUP, self.topology.controller, node, now, _SIZES[Kind.FLOW_SETUP])
        pkt.meta = rule
        self._source_route(pkt, path, now)

    def _controller_report(self, reporter: int, report: dict, now: float) -> None:
        old_view = self._view.get(reporter)
        self._view[reporter] = dict(report)
        if old_view is not None and old_view.keys() == report.keys():
            floor = self.net.metric_floor
            if all((old_view[u] < floor) == (report[u] < floor) for u in report):
                return
        graph = self._graph_from_view()
        if graph == self._view_graph:
            return
        self._view_graph = graph
        old_hops = self._ctrl_hops
        self._ctrl_hops = {d: next_hops(graph, d) for d in self._destinations}
        self._down_parent = self._ctrl_hops[self.topology.controller]
        if not self.net.route_push:
            return
        for dest in self._destinations:
            before, after = old_hops[dest], self._ctrl_hops[dest]
            for v in sorted(after):
                if before.get(v) != after[v]:
                    self._schedule(now + self.net.controller_delay, _CTRL_SEND, v, dest)

    def _probe(self, node: int, now: float) -> None:
        state = self.nodes[node]
        noise = self.net.metric_noise
        thr = self.net.report_threshold
        rng = self._rng_metric
        current = {u: math.exp(noise * rng.gauss(0.0, 1.0)) for u in sorted(self._true_nbrs[node])}
        changed = any(abs(current[u] / state.reported[u] - 1.0) >= thr for u in current)
        if not changed:
            return
        state.reported = current
        pkt = self._new_packet(
            Kind.NEIGHBOR_REPORT, node, self.topology.controller, now, 2 + 3 * len(current)
        )
        pkt.meta = dict(current)
        self._route(pkt, node, now)

    # -- attacks -----------------------------------------------------------

    def fdff_attacker_step(self, attacker: int, now: float) -> list[Packet]:
        """Send one data packet with a fresh unknown flow id to every neighbour."""
        sent = []
        if not self._fdff or attacker not in self.attackers or now < self._attack_start:
            return sent
        payload = self.scenario.traffic.payload
        for v in sorted(self._true_nbrs[attacker]):
            self._flow_seq += 1
            flow = f"f{self._flow_seq}"
            pkt = self._new_packet(Kind.DATA, attacker, flow, now, payload, flags=Packet.BOGUS)
            sent.append(pkt)
            if not self._transmit(pkt, attacker, v, now):
                continue
            if v == self.topology.controller:
                self._terminal(v, Event.DROP_NORULE, pkt, now)
                continue
            self._route(pkt, v, now)
        return sent

    def fni_tamper(self, pkt: Packet, attacker: int, now: float) -> Packet:
        """Corrupt a neighbour report in transit; other packets pass untouched.

        With ``tamper_persistent`` the attacker tells the same lie about a
        given reporter every time, so the controller's view settles on one
        false topology instead of changing with every report.
        """
        if pkt.kind != Kind.NEIGHBOR_REPORT or not pkt.meta:
            return pkt
        attack = self.scenario.attack
        key = (attacker, pkt.src)
        forgery = self._forgeries.get(key) if attack.tamper_persistent else None
        report = dict(pkt.meta)
        if forgery is None:
            rng = self._rng_attack
            victim = rng.choice(sorted(report))
            if attack.tamper_mode == "metric":
                forgery = (victim, rng.uniform(0.05, 2.0))
            else:
                true = self._true_nbrs[pkt.src]
                choices = [v for v in self.topology.nodes if v != pkt.src and v not in true]
                if not choices:
                    return pkt
                forgery = (victim, rng.choice(choices))
            self._forgeries[key] = forgery
        victim, forged = forgery
        if victim not in report:
            return pkt
        if attack.tamper_mode == "metric":
            report[victim] = forged
        else:
            value = report.pop(victim)
            report[forged] = value
        pkt.meta = report
        pkt.flags |= Packet.TAMPERED
        self._rows.append((now, attacker, Event.TAMPER, pkt.kind, pkt.src, pkt.src, pkt.size, pkt.pid, pkt.flags))
        return pkt

    # -- main loop -----------------------------------------------------------

    def _bootstrap(self) -> None:
        topo = self.topology
        traffic = self.scenario.traffic
        net = self.net
        rng = self._rng_timer
        sensors = [v for v in topo.nodes if v not in topo.infrastructure]
        for v in sensors:
            self._schedule(rng.uniform(0, traffic.data_period), _EMIT_DATA, v)
            self._schedule(rng.uniform(0, traffic.mgmt_period), _EMIT_MGMT, v)
        lo, hi = net.route_lifetime
        for v in topo.nodes:
            if v == topo.controller:
                continue
            self._schedule(rng.uniform(0, net.probe_period), _PROBE, v)
            for d in self._destinations:
                if d != v:
                    self._schedule(rng.uniform(0, hi), _REFRESH, v, d)
        self._schedule(1.0, _FLOW_ID, topo.data_sink)
        self._schedule(1.0, _FLOW_ID, topo.mgmt_sink)
        if self._fdff:
            period = self.scenario.attack.bogus_flow_period
            for a in sorted(self.attackers):
                self._schedule(self._attack_start + self._rng_attack.uniform(0, period), _FDFF, a)

    def run(self) -> EventTrace:
        self._bootstrap()
        topo = self.topology
        traffic = self.scenario.traffic
        net = self.net
        end = self.scenario.duration
        heap = self._heap
        rng = self._rng_timer
        lo, hi = net.route_lifetime
        while heap and heap[0][0] < end:
            now, _, code, a, b = heapq.heappop(heap)
            if code == _EMIT_DATA:
                pkt = self._new_packet(Kind.DATA, a, topo.data_sink, now, traffic.payload)
                self._route(pkt, a, now)
                self._schedule(now + traffic.data_period, _EMIT_DATA, a)
            elif code == _EMIT_MGMT:
                pkt = self._new_packet(Kind.MANAGEMENT, a, topo.mgmt_sink, now, traffic.payload)
                self._route(pkt, a, now)
                self._schedule(now + traffic.mgmt_period, _EMIT_MGMT, a)
            elif code == _PROBE:
                self._probe(a, now)
                self._schedule(now + net.probe_period, _PROBE, a)
            elif code == _REFRESH:
                self._request(a, b, now)
                self._schedule(now + rng.uniform(lo, hi), _REFRESH, a, b)
            elif code == _CTRL_SEND:
                self._emit_setup(a, b, now)
            elif code == _FDFF:
                self.fdff_attacker_step(a, now)
                self._schedule(now + self.scenario.attack.bogus_flow_period, _FDFF, a)
            elif code == _RETRY:
                self._request(a, b[0], now, b[1])
            elif code == _FLOW_ID:
                pkt = self._new_packet(
                    Kind.FLOW_ID_REGISTER, a, topo.controller, now, _SIZES[Kind.FLOW_ID_REGISTER]
                )
                self._route(pkt, a, now)
        self.trace.finalize()
        return self.trace


def run(scenario: ScenarioConfig, seed: int) -> EventTrace:
    """Simulate ``scenario`` with ``seed`` and return the event trace."""
    return Simulator(scenario, seed).run()
