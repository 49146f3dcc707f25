from __future__ import annotations

import asyncio
import logging
import secrets
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Union

from ..broker.core import DEFAULT_HEARTBEAT_INTERVAL_MS, wall_clock_ms
from ..broker.server import split_address
from ..protocol import (
    U64_MAX,
    Error,
    Heartbeat,
    Message,
    Query,
    QueryForward,
    Register,
    RegisterAck,
    Response,
    SensorKind,
    SensorReading,
    Unavailable,
    derive_node_id,
    encode_message,
    read_message,
)
from .providers import SensorProvider, UnsupportedKind

log = logging.getLogger(__name__)


class BrokerUnreachable(ConnectionError):
    pass


class RegistrationRejected(Exception):
    def __init__(self, error: Error) -> None:
        super().__init__(f"{error.code}: {error.detail}")
        self.error = error


@dataclass
class AgentConfig:
    phone: str
    broker: str
    provider: SensorProvider
    heartbeat_interval_ms: int = DEFAULT_HEARTBEAT_INTERVAL_MS
    connect_timeout: float = 5.0

    def __post_init__(self) -> None:
        if self.heartbeat_interval_ms <= 0:
            raise ValueError("heartbeat_interval_ms must be positive")
        split_address(self.broker)


@dataclass
class QueryOutcome:
    outcome: Literal["reading", "unavailable", "timeout", "error"]
    request_id: int
    target: str
    reading: Optional[SensorReading] = None
    reason: Optional[str] = None

    def to_dict(self) -> dict:
        doc: dict = {"outcome": self.outcome, "request_id": self.request_id, "target": self.target}
        if self.reading is not None:
            doc["reading"] = self.reading.model_dump(mode="json")
        if self.reason is not None:
            doc["reason"] = self.reason
        return doc


class Agent:
    """A simulated phone: registers, heartbeats, answers forwarded queries and asks its own.

    The only address an agent knows is the broker's.
    """

    def __init__(self, config: AgentConfig, clock: Callable[[], int] = wall_clock_ms) -> None:
        self.config = config
        self.clock = clock
        self.node_id = derive_node_id(config.phone)
        self.paused = False
        self.served = 0
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None
        self._tasks: list[asyncio.Task] = []
        self._pending: dict[int, asyncio.Future] = {}
        self._ack: Optional[asyncio.Future] = None
        self._next_id = secrets.randbits(62)

    @property
    def running(self) -> bool:
        return self._writer is not None and not self._writer.is_closing()

    async def start(self) -> "Agent":
        host, port = split_address(self.config.broker)
        try:
            self._reader, self._writer = await asyncio.wait_for(
                asyncio.open_connection(host, port), self.config.connect_timeout
            )
        except (OSError, asyncio.TimeoutError) as exc:
            raise BrokerUnreachable(f"cannot reach broker at {self.config.broker}: {exc}") from exc
        loop = asyncio.get_running_loop()
        self._ack = loop.create_future()
        self._tasks.append(asyncio.create_task(self._read_loop()))
        self._send(Register(node=self.node_id, phone=self.config.phone))
        try:
            reply = await asyncio.wait_for(asyncio.shield(self._ack), self.config.connect_timeout)
        except asyncio.TimeoutError:
            await self.stop()
            raise BrokerUnreachable("broker did not acknowledge registration") from None
        if isinstance(reply, Error):
            await self.stop()
            raise RegistrationRejected(reply)
        self._tasks.append(asyncio.create_task(self._heartbeat_loop()))
        return self

    async def stop(self) -> None:
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        self._tasks.clear()
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (ConnectionError, OSError):
                pass
        for fut in self._pending.values():
            if not fut.done():
                fut.cancel()

    async def __aenter__(self) -> "Agent":
        return await self.start()

    async def __aexit__(self, *exc) -> None:
        await self.stop()

    def pause(self) -> None:
        """Keep heartbeating but stop answering forwarded queries."""
        self.paused = True

    def resume(self) -> None:
        self.paused = False

    def serve_query(self, q: QueryForward) -> Union[Response, Error]:
        try:
            reading = self.config.provider.read(q.kind, self.clock(), self.node_id)
        except UnsupportedKind as exc:
            reply: Union[Response, Error] = Error(
                code="unsupported-sensor", detail=f"{q.kind.value}: {exc}", request_id=q.request_id
            )
        else:
            reply = Response(request_id=q.request_id, requester=q.requester, target=self.node_id, reading=reading)
        self.served += 1
        self._send(reply)
        return reply

    async def issue_query(self, target: str, kind: SensorKind, timeout_ms: int = 15000) -> QueryOutcome:
        rid = self._next_id
        self._next_id = (self._next_id + 1) & U64_MAX
        fut = asyncio.get_running_loop().create_future()
        self._pending[rid] = fut
        self._send(Query(request_id=rid, requester=self.node_id, target=target, kind=kind))
        try:
            reply = await asyncio.wait_for(fut, timeout_ms / 1000)
        except asyncio.TimeoutError:
            return QueryOutcome("timeout", rid, target)
        finally:
            self._pending.pop(rid, None)
        if isinstance(reply, Response):
            return QueryOutcome("reading", rid, target, reading=reply.reading)
        if isinstance(reply, Unavailable):
            return QueryOutcome("unavailable", rid, target, reason=reply.reason)
        return QueryOutcome("error", rid, target, reason=reply.code)

    def _send(self, msg: Message) -> None:
        if self.running:
            self._writer.write(encode_message(msg))

    async def _heartbeat_loop(self) -> None:
        interval = self.config.heartbeat_interval_ms / 1000
        while True:
            await asyncio.sleep(interval)
            self._send(Heartbeat(node=self.node_id))

    async def _read_loop(self) -> None:
        try:
            while True:
                self._dispatch(await read_message(self._reader))
                await self._writer.drain()
        except (asyncio.IncompleteReadError, ConnectionError):
            log.info("agent %s lost its broker connection", self.node_id)
        finally:
            if self._ack is not None and not self._ack.done():
                self._ack.set_exception(BrokerUnreachable("broker closed the connection"))

    def _dispatch(self, msg: Message) -> None:
        if isinstance(msg, RegisterAck) or (isinstance(msg, Error) and not self._ack.done()):
            if not self._ack.done():
                self._ack.set_result(msg)
        elif isinstance(msg, QueryForward):
            if not self.paused:
                self.serve_query(msg)
        elif isinstance(msg, (Response, Unavailable, Error)):
            rid = msg.request_id
            fut = self._pending.get(rid) if rid is not None else None
            if fut is not None and not fut.done():
                fut.set_result(msg)
            elif isinstance(msg, Error):
                log.warning("broker error: %s %s", msg.code, msg.detail)
