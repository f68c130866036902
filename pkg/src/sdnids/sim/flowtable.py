from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional, Union

Match = Union[int, str]  # node address or flow identifier


class Action(enum.Enum):
    FORWARD = "forward"
    DROP = "drop"
    RECEIVE = "receive"


@dataclass
class FlowTableEntry:
    match: Match
    action: Action
    action_param: Optional[int] = None
    usage: int = 0

    def __post_init__(self) -> None:
        if self.action is Action.FORWARD and self.action_param is None:
            raise ValueError("forward entries need a next hop")


class FlowTable:
    """Bounded rule store.

    When full, installing a new match evicts the entry with the lowest usage,
    oldest first among ties.  Re-installing an existing match updates it in
    place and counts as one more use.
    """

    def __init__(self, capacity: int = 32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries: dict[Match, FlowTableEntry] = {}
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[FlowTableEntry]:
        return iter(self._entries.values())

    def __contains__(self, match: Match) -> bool:
        return match in self._entries

    def get(self, match: Match) -> Optional[FlowTableEntry]:
        return self._entries.get(match)

    def lookup(self, match: Match) -> Optional[FlowTableEntry]:
        entry = self._entries.get(match)
        if entry is not None:
            entry.usage += 1
        return entry

    def install(self, entry: FlowTableEntry) -> Optional[FlowTableEntry]:
        """Install ``entry``; returns the evicted entry, if any."""
        current = self._entries.get(entry.match)
        if current is not None:
            current.action = entry.action
            current.action_param = entry.action_param
            current.usage += 1
            return None
        evicted = None
        if len(self._entries) >= self.capacity:
            evicted = min(self._entries.values(), key=lambda e: e.usage)
            del self._entries[evicted.match]
            self.evictions += 1
        self._entries[entry.match] = entry
        return evicted

    def next_hop(self, match: Match) -> Optional[int]:
        entry = self._entries.get(match)
        if entry is None or entry.action is not Action.FORWARD:
            return None
        return entry.action_param
