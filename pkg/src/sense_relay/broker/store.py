"""Append-only JSON-lines response store.

Each line is the wire ``Response`` document plus a ``stored_at`` field.
Appends are flushed and fsynced before ``append`` returns. On open the
file is replayed. A final line without its newline (a crash mid-append)
is kept if it parses and cut off otherwise; any other unreadable line is
an error.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..protocol import Response, SensorKind, SensorReading
from .registry import BrokerError

log = logging.getLogger(__name__)


class PersistFailure(BrokerError):
    code = "persist-failure"


class StoreCorrupt(Exception):
    pass


@dataclass(frozen=True)
class StoredResponse:
    request_id: int
    requester: str
    target: str
    reading: SensorReading
    stored_at: int

    def to_json(self) -> str:
        doc = json.loads(
            Response(
                request_id=self.request_id,
                requester=self.requester,
                target=self.target,
                reading=self.reading,
            ).model_dump_json()
        )
        doc["stored_at"] = self.stored_at
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "StoredResponse":
        doc = json.loads(line)
        stored_at = doc.pop("stored_at")
        if not isinstance(stored_at, int) or isinstance(stored_at, bool):
            raise ValueError("stored_at must be an integer")
        r = Response.model_validate_json(json.dumps(doc))
        return cls(r.request_id, r.requester, r.target, r.reading, stored_at)


class ResponseStore:
    def __init__(self, path: str | os.PathLike, fsync: bool = True, read_only: bool = False) -> None:
        self.path = Path(path)
        self.fsync = fsync
        self.read_only = read_only
        self._rows: list[StoredResponse] = []
        self._lock = threading.Lock()
        self._fh = None
        if read_only:
            if not self.path.exists():
                raise FileNotFoundError(f"no store at {self.path}")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
        self._replay()
        if not read_only:
            self._fh = open(self.path, "ab")

    def _replay(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        complete_len = data.rfind(b"\n") + 1
        for i, raw in enumerate(data[:complete_len].split(b"\n")[:-1]):
            if not raw.strip():
                continue
            try:
                self._rows.append(StoredResponse.from_json(raw.decode("utf-8")))
            except (ValueError, KeyError, UnicodeDecodeError) as exc:
                raise StoreCorrupt(f"{self.path}:{i + 1}: {exc}") from None
        tail = data[complete_len:]
        if not tail.strip():
            return
        try:
            self._rows.append(StoredResponse.from_json(tail.decode("utf-8")))
            repair = data + b"\n"
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            log.warning("ignoring torn final record in %s: %s", self.path, exc)
            repair = data[:complete_len]
        if self.read_only:
            return
        with open(self.path, "r+b") as fh:
            fh.truncate(complete_len)
            fh.seek(complete_len)
            fh.write(repair[complete_len:])

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def last_stored_at(self) -> int:
        return self._rows[-1].stored_at if self._rows else 0

    def append(self, response: Response, stored_at: int) -> tuple[int, StoredResponse]:
        """Durably append; returns the row's log position and the stored row."""
        if self._fh is None:
            raise PersistFailure(f"store {self.path} is open read-only")
        with self._lock:
            stored_at = max(stored_at, self.last_stored_at)
            row = StoredResponse(
                response.request_id, response.requester, response.target, response.reading, stored_at
            )
            line = (row.to_json() + "\n").encode("utf-8")
            try:
                self._fh.write(line)
                self._fh.flush()
                if self.fsync:
                    os.fsync(self._fh.fileno())
            except (OSError, ValueError) as exc:
                raise PersistFailure(f"could not persist response {response.request_id}: {exc}") from exc
            self._rows.append(row)
            return len(self._rows) - 1, row

    def query(
        self,
        target: Optional[str] = None,
        kind: Optional[SensorKind] = None,
        since: Optional[int] = None,
    ) -> list[StoredResponse]:
        kind = SensorKind(kind) if kind is not None else None
        with self._lock:
            rows = list(self._rows)
        return [
            r
            for r in rows
            if (target is None or r.target == target)
            and (kind is None or r.reading.kind is kind)
            and (since is None or r.stored_at >= since)
        ]

    def close(self) -> None:
        with self._lock:
            if self._fh is not None and not self._fh.closed:
                self._fh.flush()
                if self.fsync:
                    os.fsync(self._fh.fileno())
                self._fh.close()
