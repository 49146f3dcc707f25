from __future__ import annotations

import re
import threading
from dataclasses import dataclass, replace
from typing import Callable

Clock = Callable[[], int]

_ADDRESS = re.compile(r"^(?P<host>\[[0-9A-Fa-f:.]+\]|[^\s:\[\]]+|[0-9A-Fa-f:.]+):(?P<port>\d{1,5})$")


class BrokerError(Exception):
    """Broker-side failure that is reported to the peer as an ``Error`` message."""

    code = "broker-error"


class NotFound(BrokerError):
    code = "not-found"


class InvalidAddress(BrokerError):
    code = "invalid-address"


def check_address(address: str) -> str:
    m = _ADDRESS.match(address)
    if not m or not 0 < int(m["port"]) < 65536:
        raise InvalidAddress(f"not a host:port address: {address!r}")
    return address


@dataclass
class NodeRecord:
    node: str
    address: str
    registered_at: int
    last_seen: int
    online: bool


class Registry:
    """id -> address table with heartbeat liveness."""

    def __init__(self, clock: Clock, liveness_timeout_ms: int = 15000) -> None:
        self.clock = clock
        self.liveness_timeout_ms = liveness_timeout_ms
        self._records: dict[str, NodeRecord] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, node: str) -> bool:
        return node in self._records

    def upsert(self, node: str, address: str) -> NodeRecord:
        check_address(address)
        now = self.clock()
        with self._lock:
            rec = self._records.get(node)
            if rec is None:
                rec = self._records[node] = NodeRecord(node, address, now, now, True)
            else:
                rec.address = address
                rec.last_seen = max(rec.last_seen, now)
                rec.online = True
            return replace(rec)

    def touch(self, node: str) -> NodeRecord:
        now = self.clock()
        with self._lock:
            rec = self._records.get(node)
            if rec is None:
                raise NotFound(f"node {node} is not registered")
            rec.last_seen = max(rec.last_seen, now)
            rec.online = True
            return replace(rec)

    def get(self, node: str) -> NodeRecord:
        now = self.clock()
        with self._lock:
            rec = self._records.get(node)
            if rec is None:
                raise NotFound(f"node {node} is not registered")
            self._refresh(rec, now)
            return replace(rec)

    def is_online(self, node: str) -> bool:
        try:
            return self.get(node).online
        except NotFound:
            return False

    def expire(self, now: int | None = None) -> int:
        """Mark stale records offline; return how many went offline in this call."""
        now = self.clock() if now is None else now
        flipped = 0
        with self._lock:
            for rec in self._records.values():
                was = rec.online
                self._refresh(rec, now)
                flipped += was and not rec.online
        return flipped

    def records(self) -> list[NodeRecord]:
        now = self.clock()
        with self._lock:
            for rec in self._records.values():
                self._refresh(rec, now)
            return [replace(r) for r in self._records.values()]

    def _refresh(self, rec: NodeRecord, now: int) -> None:
        if now - rec.last_seen > self.liveness_timeout_ms:
            rec.online = False
