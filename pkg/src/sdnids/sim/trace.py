"""Append-only record of packet-level events produced by one simulation run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from .packets import Event, Kind

TRACE_DTYPE = np.dtype(
    [
        ("t", "f8"),
        ("node", "i4"),
        ("ev", "i1"),
        ("kind", "i1"),
        ("peer", "i4"),
        ("origin", "i4"),
        ("size", "i4"),
        ("pid", "i8"),
        ("flags", "i1"),
    ]
)


class ConservationError(AssertionError):
    pass


@dataclass
class EventTrace:
    """Rows are ``(t, node, ev, kind, peer, origin, size, pid, flags)``.

    ``peer`` is the other end of a TX/RX (or the reporter for a TAMPER row) and
    -1 otherwise.  ``origin`` is the node that created the packet.
    """

    n_nodes: int
    duration: float
    window: float
    data_sink: int
    proc_ms: float = 1.0
    tx_ms_per_16: float = 0.5
    attackers: tuple = ()
    rows: list = field(default_factory=list)
    records: Optional[np.ndarray] = None

    def finalize(self) -> np.ndarray:
        if self.records is None:
            self.records = np.array(self.rows, dtype=TRACE_DTYPE)
            self.rows = []
        return self.records

    def __len__(self) -> int:
        return len(self.records) if self.records is not None else len(self.rows)

    @property
    def n_windows(self) -> int:
        return int(self.duration // self.window)

    def accounting(self) -> dict:
        """Per-outcome packet counts; ``in_flight`` is origins with no terminal row."""
        rec = self.finalize()
        origins = rec["pid"][rec["ev"] == Event.ORIGIN]
        term_mask = np.isin(rec["ev"], list(Event.TERMINAL))
        terminals = rec[term_mask]
        counts = {
            "originated": int(origins.size),
            "delivered": int(np.sum(terminals["ev"] == Event.CONSUME)),
            "dropped_loss": int(np.sum(terminals["ev"] == Event.DROP_LOSS)),
            "dropped_ttl": int(np.sum(terminals["ev"] == Event.DROP_TTL)),
            "dropped_norule": int(np.sum(terminals["ev"] == Event.DROP_NORULE)),
        }
        counts["in_flight"] = int(np.setdiff1d(origins, terminals["pid"]).size)
        return counts

    def check_conservation(self) -> dict:
        """Every originated packet ends exactly once; raises otherwise."""
        rec = self.finalize()
        origins = rec["pid"][rec["ev"] == Event.ORIGIN]
        if np.unique(origins).size != origins.size:
            raise ConservationError("packet ids originated twice")
        term_pids = rec["pid"][np.isin(rec["ev"], list(Event.TERMINAL))]
        uniq, mult = np.unique(term_pids, return_counts=True)
        if np.any(mult > 1):
            raise ConservationError(f"{int(np.sum(mult > 1))} packets terminated more than once")
        if not np.all(np.isin(uniq, origins)):
            raise ConservationError("terminal rows for packets never originated")
        counts = self.accounting()
        ended = sum(counts[k] for k in ("delivered", "dropped_loss", "dropped_ttl", "dropped_norule"))
        if ended + counts["in_flight"] != counts["originated"]:
            raise ConservationError(f"accounting does not reconcile: {counts}")
        tx = np.sum(rec["ev"] == Event.TX)
        rx = np.sum(rec["ev"] == Event.RX)
        if tx != rx + counts["dropped_loss"]:
            raise ConservationError("every transmission must be received or lost")
        return counts

    def write_ndjson(self, fh: IO[str]) -> None:
        for row in self.finalize().tolist():
            t, node, ev, kind, peer, origin, size, pid, flags = row
            fh.write(
                json.dumps(
                    {
                        "t": round(t, 6),
                        "node": node,
                        "event": Event.NAMES[ev],
                        "kind": Kind.NAMES[kind],
                        "peer": peer,
                        "origin": origin,
                        "size": size,
                        "pid": pid,
                        "bogus": bool(flags & 1),
                        "tampered": bool(flags & 2),
                    },
                    separators=(",", ":"),
                )
            )
            fh.write("\n")


def read_ndjson(fh: IO[str]) -> list[dict]:
    return [json.loads(line) for line in fh if line.strip()]
