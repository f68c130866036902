"""Packet record and the integer codes used in event traces."""

from __future__ import annotations


class Kind:
    DATA = 0
    FLOW_REQUEST = 1
    FLOW_SETUP = 2
    FLOW_ID_REGISTER = 3
    ACK = 4
    NEIGHBOR_REPORT = 5
    MANAGEMENT = 6

    NAMES = ("data", "flow_request", "flow_setup", "flow_id_register", "ack", "neighbor_report", "management")


# southbound control messages; data and management ride the data plane
CONTROL_KINDS = frozenset(
    (Kind.FLOW_REQUEST, Kind.FLOW_SETUP, Kind.FLOW_ID_REGISTER, Kind.ACK, Kind.NEIGHBOR_REPORT)
)


class Event:
    ORIGIN = 0
    TX = 1
    RX = 2
    CONSUME = 3
    DROP_LOSS = 4
    DROP_TTL = 5
    DROP_NORULE = 6
    TAMPER = 7

    NAMES = ("origin", "tx", "rx", "consume", "drop_loss", "drop_ttl", "drop_norule", "tamper")
    TERMINAL = frozenset((CONSUME, DROP_LOSS, DROP_TTL, DROP_NORULE))


class Packet:
    """A packet in flight.  ``dst`` is a node id or, for unknown flows, a flow id string."""

    __slots__ = ("pid", "kind", "src", "dst", "ttl", "size", "created_at", "flags", "meta")

    BOGUS = 1
    TAMPERED = 2

    def __init__(self, pid, kind, src, dst, ttl, size, created_at, flags=0, meta=None):
        self.pid = pid
        self.kind = kind
        self.src = src
        self.dst = dst
        self.ttl = ttl
        self.size = size
        self.created_at = created_at
        self.flags = flags
        self.meta = meta

    @property
    def tampered(self) -> bool:
        return bool(self.flags & Packet.TAMPERED)

    @property
    def flow_id(self):
        return self.dst if isinstance(self.dst, str) else None

    def __repr__(self) -> str:
        return f"Packet(pid={self.pid}, kind={Kind.NAMES[self.kind]}, src={self.src}, dst={self.dst!r}, ttl={self.ttl})"
