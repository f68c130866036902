"""Windowed network and per-node metrics derived from an event trace."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import IO, Iterator

import numpy as np

from .packets import CONTROL_KINDS, Event, Kind
from .trace import EventTrace

NODE_METRICS = ("proc_time", "tx_time", "ctrl_rx", "ctrl_tx")
_CSV_SUFFIX = {"proc_time": "proc", "tx_time": "tx", "ctrl_rx": "crx", "ctrl_tx": "ctx"}
_CONTROL = np.array(sorted(CONTROL_KINDS))
_DATA_PLANE = np.array([Kind.DATA, Kind.MANAGEMENT])


@dataclass
class MetricWindow:
    index: int
    network_delivery_rate: float
    network_ctrl_overhead: int
    per_node: dict  # node -> (proc_time, tx_time, ctrl_rx, ctrl_tx)


@dataclass
class MetricSeries:
    """Column-oriented metric table: one row per window, node arrays are ``(windows, nodes)``."""

    window: float
    delivery_rate: np.ndarray
    ctrl_overhead: np.ndarray
    proc_time: np.ndarray
    tx_time: np.ndarray
    ctrl_rx: np.ndarray
    ctrl_tx: np.ndarray
    attackers: tuple = ()
    data_sent: np.ndarray = field(default=None, repr=False)
    data_received: np.ndarray = field(default=None, repr=False)

    @property
    def n_windows(self) -> int:
        return int(self.delivery_rate.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.proc_time.shape[1])

    def node_metric(self, name: str) -> np.ndarray:
        if name not in NODE_METRICS:
            raise KeyError(f"unknown node metric {name!r}; expected one of {NODE_METRICS}")
        return getattr(self, name)

    def __getitem__(self, index: int) -> MetricWindow:
        per_node = {
            v: (
                float(self.proc_time[index, v]),
                float(self.tx_time[index, v]),
                int(self.ctrl_rx[index, v]),
                int(self.ctrl_tx[index, v]),
            )
            for v in range(self.n_nodes)
        }
        return MetricWindow(index, float(self.delivery_rate[index]), int(self.ctrl_overhead[index]), per_node)

    def __iter__(self) -> Iterator[MetricWindow]:
        return (self[i] for i in range(self.n_windows))

    def __len__(self) -> int:
        return self.n_windows

    def write_csv(self, fh: IO[str]) -> None:
        header = ["window", "delivery_rate", "ctrl_overhead"]
        for v in range(self.n_nodes):
            header += [f"n{v}_{_CSV_SUFFIX[m]}" for m in NODE_METRICS]
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for w in range(self.n_windows):
            row = [w, f"{self.delivery_rate[w]:.6f}", int(self.ctrl_overhead[w])]
            for v in range(self.n_nodes):
                row += [
                    f"{self.proc_time[w, v]:.3f}",
                    f"{self.tx_time[w, v]:.3f}",
                    int(self.ctrl_rx[w, v]),
                    int(self.ctrl_tx[w, v]),
                ]
            writer.writerow(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, fh: IO[str], window: float = 120.0) -> "MetricSeries":
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(x) for x in r] for r in reader if r], dtype=float).reshape(-1, len(header))
        n = (len(header) - 3) // 4
        node = rows[:, 3:].reshape(len(rows), n, 4)
        return cls(
            window=window,
            delivery_rate=rows[:, 1],
            ctrl_overhead=rows[:, 2].astype(np.int64),
            proc_time=node[:, :, 0],
            tx_time=node[:, :, 1],
            ctrl_rx=node[:, :, 2].astype(np.int64),
            ctrl_tx=node[:, :, 3].astype(np.int64),
        )


def _window_index(rec: np.ndarray, window: float, n_windows: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.floor(rec["t"] / window).astype(np.int64)
    keep = idx < n_windows
    return idx, keep


def _bincount2(w: np.ndarray, node: np.ndarray, n_windows: int, n: int, weights=None) -> np.ndarray:
    flat = np.bincount(w * n + node, weights=weights, minlength=n_windows * n)
    return flat.reshape(n_windows, n)


def window_metrics(trace: EventTrace, window: float | None = None) -> MetricSeries:
    """Aggregate ``trace`` into fixed windows; a trailing partial window is dropped.

    Processing time charges each packet handled (received or created) at a
    fixed cost; transmitting time charges each transmission by its size.
    Control overhead counts control-plane transmissions network-wide, so it
    equals the sum of per-node ``ctrl_tx``.
    """
    rec = trace.finalize()
    window = float(trace.window if window is None else window)
    n_windows = int(trace.duration // window)
    n = trace.n_nodes
    idx, keep = _window_index(rec, window, n_windows)
    rec, idx = rec[keep], idx[keep]
    ev, kind, node = rec["ev"], rec["kind"], rec["node"].astype(np.int64)

    handled = (ev == Event.RX) | (ev == Event.ORIGIN)
    proc = _bincount2(idx[handled], node[handled], n_windows, n) * trace.proc_ms
    tx_mask = ev == Event.TX
    tx_cost = rec["size"][tx_mask] / 16.0 * trace.tx_ms_per_16
    tx = _bincount2(idx[tx_mask], node[tx_mask], n_windows, n, weights=tx_cost)
    is_ctrl = np.isin(kind, _CONTROL)
    crx_mask = (ev == Event.RX) & is_ctrl
    ctx_mask = tx_mask & is_ctrl
    crx = _bincount2(idx[crx_mask], node[crx_mask], n_windows, n).astype(np.int64)
    ctx = _bincount2(idx[ctx_mask], node[ctx_mask], n_windows, n).astype(np.int64)

    genuine_data = (kind == Kind.DATA) & ((rec["flags"] & 1) == 0)
    sent = np.bincount(idx[genuine_data & (ev == Event.ORIGIN)], minlength=n_windows)
    got_mask = genuine_data & (ev == Event.CONSUME) & (node == trace.data_sink)
    received = np.bincount(idx[got_mask], minlength=n_windows)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(sent > 0, received / np.maximum(sent, 1), 1.0)
    return MetricSeries(
        window=window,
        delivery_rate=rate.astype(float),
        ctrl_overhead=ctx.sum(axis=1),
        proc_time=proc,
        tx_time=tx,
        ctrl_rx=crx,
        ctrl_tx=ctx,
        attackers=tuple(trace.attackers),
        data_sent=sent,
        data_received=received,
    )


def exchange_counts(
    trace: EventTrace,
    kinds: str = "all",
    scope: str = "end_to_end",
    window: float | None = None,
) -> np.ndarray:
    """Per-window packet exchanges between node pairs, shape ``(windows, n, n)``, symmetric.

    ``end_to_end`` counts packets created by one node that end (consumed or
    refused for lack of a rule) at the other, so relayed traffic is ignored.
    ``link`` counts every transmission between the two nodes.  ``kinds``
    restricts to ``control`` or ``data`` packets.
    """
    if kinds not in ("all", "control", "data"):
        raise ValueError(f"kinds must be all, control or data, got {kinds!r}")
    if scope not in ("end_to_end", "link"):
        raise ValueError(f"scope must be end_to_end or link, got {scope!r}")
    rec = trace.finalize()
    window = float(trace.window if window is None else window)
    n_windows = int(trace.duration // window)
    n = trace.n_nodes
    idx, keep = _window_index(rec, window, n_windows)
    rec, idx = rec[keep], idx[keep]
    ev = rec["ev"]
    if scope == "end_to_end":
        mask = ((ev == Event.CONSUME) | (ev == Event.DROP_NORULE)) & (rec["node"] != rec["origin"])
        a, b = rec["node"], rec["origin"]
    else:
        mask = ev == Event.TX
        a, b = rec["node"], rec["peer"]
    if kinds == "control":
        mask &= np.isin(rec["kind"], _CONTROL)
    elif kinds == "data":
        mask &= np.isin(rec["kind"], _DATA_PLANE)
    a = a[mask].astype(np.int64)
    b = b[mask].astype(np.int64)
    w = idx[mask]
    flat = np.bincount((w * n + a) * n + b, minlength=n_windows * n * n).reshape(n_windows, n, n)
    return flat + flat.transpose(0, 2, 1)
