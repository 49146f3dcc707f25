"""asyncio TCP front end for :class:`Broker`."""

from __future__ import annotations

import asyncio
import logging
from typing import Optional

from ..protocol import Error, MalformedPayload, Message, OversizeMessage, encode_message, read_message
from .core import Broker

log = logging.getLogger(__name__)


def split_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {address!r}")
    return host.strip("[]"), int(port)


def format_address(host: str, port: int) -> str:
    return f"[{host}]:{port}" if ":" in host else f"{host}:{port}"


class _Connection:
    def __init__(self, writer: asyncio.StreamWriter) -> None:
        self.writer = writer
        self.node: Optional[str] = None
        self.closed = False

    def send(self, msg: Message) -> bool:
        if self.closed or self.writer.is_closing():
            return False
        self.writer.write(encode_message(msg))
        return True


class BrokerServer:
    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0, tick_interval: float = 0.05) -> None:
        self.broker = broker
        self.host = host
        self.port = port
        self.tick_interval = tick_interval
        self._server: Optional[asyncio.base_events.Server] = None
        self._ticker: Optional[asyncio.Task] = None
        self._handlers: set[asyncio.Task] = set()

    @property
    def address(self) -> str:
        return format_address(self.host, self.port)

    async def start(self) -> "BrokerServer":
        self._server = await asyncio.start_server(self._serve, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._ticker = asyncio.create_task(self._tick_loop())
        log.info("broker listening on %s", self.address)
        return self

    async def serve_forever(self) -> None:
        assert self._server is not None
        await self._server.serve_forever()

    async def close(self) -> None:
        if self._ticker is not None:
            self._ticker.cancel()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for task in list(self._handlers):
            task.cancel()
        await asyncio.gather(*self._handlers, return_exceptions=True)

    async def __aenter__(self) -> "BrokerServer":
        return await self.start()

    async def __aexit__(self, *exc) -> None:
        await self.close()

    async def _tick_loop(self) -> None:
        while True:
            await asyncio.sleep(self.tick_interval)
            self.broker.tick()

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        task = asyncio.current_task()
        self._handlers.add(task)
        conn = _Connection(writer)
        peer = writer.get_extra_info("peername")
        address = format_address(peer[0], peer[1]) if peer else "unknown:0"
        try:
            while True:
                try:
                    msg = await read_message(reader)
                except MalformedPayload as exc:
                    conn.send(Error(code="malformed", detail=str(exc)))
                    continue
                except OversizeMessage as exc:
                    conn.send(Error(code="oversize", detail=str(exc)))
                    break
                self.broker.handle(msg, conn, address)
                await writer.drain()
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            conn.closed = True
            self.broker.disconnect(conn)
            writer.close()
            self._handlers.discard(task)
