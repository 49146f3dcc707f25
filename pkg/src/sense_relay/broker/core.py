"""Relay logic of the central broker, independent of any transport.

Peers are represented by *links*: objects with a ``send(msg) -> bool``
method and a mutable ``node`` attribute naming the node that registered
over them. The TCP server wraps each connection in one; tests can pass
plain recorders.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Union

from ..protocol import (
    Error,
    Heartbeat,
    Message,
    Query,
    QueryForward,
    Register,
    RegisterAck,
    Response,
    SensorKind,
    Unavailable,
    derive_node_id,
)
from .registry import BrokerError, Clock, NodeRecord, NotFound, Registry
from .store import ResponseStore, StoredResponse

log = logging.getLogger(__name__)

DEFAULT_LIVENESS_TIMEOUT_MS = 15000
DEFAULT_HEARTBEAT_INTERVAL_MS = 5000
DEFAULT_QUERY_TIMEOUT_MS = 10000


class IdMismatch(BrokerError):
    code = "id-mismatch"


class RequesterUnknown(BrokerError):
    code = "requester-unknown"


class RequesterMismatch(BrokerError):
    code = "requester-mismatch"


class DuplicateRequest(BrokerError):
    code = "duplicate-request"


class UnexpectedMessage(BrokerError):
    code = "unexpected-message"


class Link(Protocol):
    node: Optional[str]

    def send(self, msg: Message) -> bool: ...


def wall_clock_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass
class _Pending:
    target: str
    deadline: int


class Broker:
    def __init__(
        self,
        store: ResponseStore,
        *,
        clock: Clock = wall_clock_ms,
        liveness_timeout_ms: int = DEFAULT_LIVENESS_TIMEOUT_MS,
        query_timeout_ms: int = DEFAULT_QUERY_TIMEOUT_MS,
        trace: Optional[list] = None,
    ) -> None:
        self.store = store
        self.clock = clock
        self.registry = Registry(clock, liveness_timeout_ms)
        self.query_timeout_ms = query_timeout_ms
        # instrumented ordering log: ("persist", requester, request_id, position) / ("forward", ...)
        self.trace = trace
        self.delivery_failures = 0
        self.late_responses = 0
        self._links: dict[str, Link] = {}
        self._outstanding: dict[tuple[str, int], _Pending] = {}
        self._lock = threading.RLock()

    # registration and liveness

    def register(self, node: str, phone: str, address: str, link: Optional[Link] = None) -> RegisterAck:
        try:
            expected = derive_node_id(phone)
        except ValueError as exc:
            raise IdMismatch(str(exc)) from None
        if expected != node:
            raise IdMismatch(f"node id {node} does not match phone (expected {expected})")
        with self._lock:
            self.registry.upsert(node, address)
            if link is not None:
                old = self._links.get(node)
                if old is not None and old is not link:
                    old.node = None
                link.node = node
                self._links[node] = link
        return RegisterAck(node=node)

    def heartbeat(self, node: str) -> NodeRecord:
        with self._lock:
            return self.registry.touch(node)

    def lookup(self, node: str) -> NodeRecord:
        with self._lock:
            return self.registry.get(node)

    def disconnect(self, link: Link) -> None:
        with self._lock:
            node = link.node
            if node is not None and self._links.get(node) is link:
                del self._links[node]
            link.node = None

    def expire_stale(self, now: Optional[int] = None) -> int:
        with self._lock:
            return self.registry.expire(now)

    def expire_queries(self, now: Optional[int] = None) -> int:
        """Answer every forward older than the query timeout with Unavailable("timeout")."""
        now = self.clock() if now is None else now
        with self._lock:
            due = [k for k, p in self._outstanding.items() if p.deadline <= now]
            for requester, rid in due:
                pending = self._outstanding.pop((requester, rid))
                self._send(requester, Unavailable(request_id=rid, target=pending.target, reason="timeout"))
        return len(due)

    def tick(self, now: Optional[int] = None) -> None:
        now = self.clock() if now is None else now
        self.expire_stale(now)
        self.expire_queries(now)

    @property
    def outstanding(self) -> int:
        return len(self._outstanding)

    # relaying

    def route_query(self, q: Query) -> Union[QueryForward, Unavailable]:
        """Forward ``q`` to its target, or tell the requester the target is unavailable."""
        with self._lock:
            if q.requester not in self.registry:
                raise RequesterUnknown(f"requester {q.requester} is not registered")
            key = (q.requester, q.request_id)
            if key in self._outstanding:
                raise DuplicateRequest(f"request {q.request_id} from {q.requester} is still outstanding")
            reason = self._unavailable_reason(q.target)
            if reason is None:
                fwd = QueryForward(
                    request_id=q.request_id, requester=q.requester, target=q.target, kind=q.kind
                )
                if self._links[q.target].send(fwd):
                    self._outstanding[key] = _Pending(q.target, self.clock() + self.query_timeout_ms)
                    return fwd
                reason = "unreachable"
            reply = Unavailable(request_id=q.request_id, target=q.target, reason=reason)
            self._send(q.requester, reply)
            return reply

    def route_response(self, r: Response) -> bool:
        """Persist ``r``, then forward it to the requester. Returns whether it was forwarded."""
        with self._lock:
            key = (r.requester, r.request_id)
            pending = self._outstanding.get(key)
            if pending is not None and pending.target != r.target:
                raise UnexpectedMessage(f"request {r.request_id} was addressed to {pending.target}, not {r.target}")
            position, _ = self.store.append(r, self.clock())
            self._record("persist", key, position)
            if pending is None:
                # already timed out or never asked: keep the data, do not deliver
                self.late_responses += 1
                return False
            del self._outstanding[key]
            if self.registry.is_online(r.requester) and self._send(r.requester, r):
                self._record("forward", key, position)
                return True
            self.delivery_failures += 1
            return False

    def route_error(self, err: Error, responder: str) -> bool:
        """Relay an agent's error about a forwarded query back to its requester."""
        if err.request_id is None:
            return False
        with self._lock:
            for (requester, rid), pending in list(self._outstanding.items()):
                if rid == err.request_id and pending.target == responder:
                    del self._outstanding[(requester, rid)]
                    return self._send(requester, err)
        return False

    def query_store(
        self,
        target: Optional[str] = None,
        kind: Optional[SensorKind] = None,
        since: Optional[int] = None,
    ) -> list[StoredResponse]:
        return self.store.query(target=target, kind=kind, since=since)

    # transport entry point

    def handle(self, msg: Message, link: Link, address: str) -> None:
        """Dispatch one inbound message; failures go back over ``link`` as Error."""
        request_id = getattr(msg, "request_id", None)
        try:
            if isinstance(msg, Register):
                link.send(self.register(msg.node, msg.phone, address, link))
            elif isinstance(msg, Heartbeat):
                self.heartbeat(msg.node)
            elif isinstance(msg, Query):
                if link.node is None:
                    raise RequesterUnknown("register before sending queries")
                if link.node != msg.requester:
                    raise RequesterMismatch(f"connection belongs to {link.node}, not {msg.requester}")
                self.route_query(msg)
            elif isinstance(msg, Response):
                if link.node != msg.target:
                    raise UnexpectedMessage(f"response for {msg.target} sent from {link.node}")
                self.route_response(msg)
            elif isinstance(msg, Error):
                # never answer an error with an error
                if link.node is not None:
                    self.route_error(msg, link.node)
            else:
                raise UnexpectedMessage(f"brokers do not accept {msg.type!r} messages")
        except BrokerError as exc:
            log.info("rejecting %s: %s", msg.type, exc)
            link.send(Error(code=exc.code, detail=str(exc), request_id=request_id))

    def _unavailable_reason(self, target: str) -> Optional[str]:
        try:
            rec = self.registry.get(target)
        except NotFound:
            return "not-registered"
        if not rec.online:
            return "offline"
        if target not in self._links:
            return "unreachable"
        return None

    def _send(self, node: str, msg: Message) -> bool:
        link = self._links.get(node)
        return link is not None and link.send(msg)

    def _record(self, event: str, key: tuple[str, int], position: int) -> None:
        if self.trace is not None:
            self.trace.append((event, key[0], key[1], position))
