"""Broker and agents talking over real loopback TCP."""

import asyncio
import struct

import pytest

from helpers import FakeClock
from sense_relay.agent import Agent, AgentConfig, BrokerUnreachable, ConstantProvider, SyntheticProvider
from sense_relay.broker import Broker, BrokerServer, ResponseStore
from sense_relay.protocol import (
    Error,
    Query,
    Register,
    RegisterAck,
    SensorKind,
    Unavailable,
    derive_node_id,
    encode_message,
    read_message,
)

TEMP = ConstantProvider({SensorKind.TEMPERATURE: (21.5, "celsius")})


def make_broker(store_path, **kw):
    kw.setdefault("query_timeout_ms", 300)
    return Broker(ResponseStore(store_path), **kw)


def agent(server, phone, provider=TEMP, **kw):
    return Agent(AgentConfig(phone, server.address, provider, **kw))


async def test_two_agents_exchange_reading(store_path):
    broker = make_broker(store_path)
    async with BrokerServer(broker) as server:
        async with agent(server, "+15550100") as a, agent(server, "+15550101") as b:
            out = await a.issue_query(b.node_id, SensorKind.TEMPERATURE, timeout_ms=2000)
            assert out.outcome == "reading"
            assert out.reading.value == 21.5 and out.reading.origin == b.node_id
            (row,) = broker.query_store()
            assert row.request_id == out.request_id and row.requester == a.node_id


async def test_unregistered_target_is_unavailable(store_path):
    async with BrokerServer(make_broker(store_path)) as server:
        async with agent(server, "+15550100") as a:
            out = await a.issue_query(derive_node_id("+19999999999"), SensorKind.TEMPERATURE, 2000)
            assert (out.outcome, out.reason) == ("unavailable", "not-registered")


async def test_paused_target_times_out_at_broker(store_path):
    async with BrokerServer(make_broker(store_path, query_timeout_ms=200)) as server:
        async with agent(server, "+15550100") as a, agent(server, "+15550101") as b:
            b.pause()
            out = await a.issue_query(b.node_id, SensorKind.TEMPERATURE, 5000)
            assert (out.outcome, out.reason) == ("unavailable", "timeout")
            b.resume()
            assert (await a.issue_query(b.node_id, SensorKind.TEMPERATURE, 2000)).outcome == "reading"


async def test_unsupported_sensor_error_reaches_requester(store_path):
    async with BrokerServer(make_broker(store_path)) as server:
        async with agent(server, "+15550100") as a, agent(server, "+15550101") as b:
            out = await a.issue_query(b.node_id, SensorKind.LIGHT, 2000)
            assert (out.outcome, out.reason) == ("error", "unsupported-sensor")


async def test_local_timeout_when_broker_is_slow(store_path):
    async with BrokerServer(make_broker(store_path, query_timeout_ms=5000)) as server:
        async with agent(server, "+15550100") as a, agent(server, "+15550101") as b:
            b.pause()
            out = await a.issue_query(b.node_id, SensorKind.TEMPERATURE, 100)
            assert out.outcome == "timeout"


async def test_synthetic_agents_with_equal_seeds_agree(store_path):
    async with BrokerServer(make_broker(store_path)) as server:
        async with agent(server, "+15550100") as a, \
                agent(server, "+15550101", SyntheticProvider(42)) as b, \
                agent(server, "+15550102", SyntheticProvider(42)) as c:
            seq_b = [(await a.issue_query(b.node_id, SensorKind.TEMPERATURE, 2000)).reading.value for _ in range(5)]
            seq_c = [(await a.issue_query(c.node_id, SensorKind.TEMPERATURE, 2000)).reading.value for _ in range(5)]
            assert seq_b == seq_c
            assert len(set(seq_b)) > 1


async def test_agent_online_right_after_start(store_path):
    broker = make_broker(store_path)
    async with BrokerServer(broker) as server:
        async with agent(server, "+15550100", heartbeat_interval_ms=50) as a:
            assert broker.lookup(a.node_id).online
            first = broker.lookup(a.node_id).last_seen
            await asyncio.sleep(0.2)
            assert broker.lookup(a.node_id).last_seen > first


async def test_stopped_agent_goes_offline_after_liveness_timeout(store_path):
    clock = FakeClock()
    broker = make_broker(store_path, clock=clock, liveness_timeout_ms=15000)
    async with BrokerServer(broker) as server:
        a = await agent(server, "+15550100").start()
        assert broker.lookup(a.node_id).online
        await a.stop()
        clock.advance(15001)
        assert broker.expire_stale() == 1
        assert not broker.lookup(a.node_id).online


async def test_unreachable_broker():
    cfg = AgentConfig("+15550100", "127.0.0.1:1", TEMP, connect_timeout=1.0)
    with pytest.raises(BrokerUnreachable):
        await Agent(cfg).start()


async def test_registration_rejected(store_path):
    async with BrokerServer(make_broker(store_path)) as server:
        reader, writer = await asyncio.open_connection(server.host, server.port)
        writer.write(encode_message(Register(node="0" * 16, phone="+15550100")))
        reply = await read_message(reader)
        assert isinstance(reply, Error) and reply.code == "id-mismatch"
        writer.close()


async def test_raw_client_protocol_errors(store_path):
    async with BrokerServer(make_broker(store_path)) as server:
        reader, writer = await asyncio.open_connection(server.host, server.port)
        body = b'{"type":"nonsense"}'
        writer.write(struct.pack("!I", len(body)) + body)
        reply = await read_message(reader)
        assert isinstance(reply, Error) and reply.code == "malformed"
        # connection survives a malformed payload
        node = derive_node_id("+15550100")
        writer.write(encode_message(Register(node=node, phone="+15550100")))
        assert await read_message(reader) == RegisterAck(node=node)
        writer.write(encode_message(Query(request_id=1, requester=node, target="0" * 16, kind="light")))
        assert await read_message(reader) == Unavailable(request_id=1, target="0" * 16, reason="not-registered")
        # an oversize header closes the connection
        writer.write(struct.pack("!I", 70000))
        reply = await read_message(reader)
        assert reply.code == "oversize"
        assert await reader.read() == b""
        writer.close()


async def test_registration_moves_to_newest_connection(store_path):
    broker = make_broker(store_path)
    async with BrokerServer(broker) as server:
        async with agent(server, "+15550100") as a, agent(server, "+15550101") as b1:
            async with agent(server, "+15550101") as b2:
                out = await a.issue_query(b2.node_id, SensorKind.TEMPERATURE, 2000)
                assert out.outcome == "reading"
                assert b2.served == 1 and b1.served == 0
