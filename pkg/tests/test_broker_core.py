import random

import pytest

from helpers import IDS, PHONES, RecordingLink
from sense_relay.broker import Broker, DuplicateRequest, IdMismatch, NotFound, PersistFailure, RequesterUnknown, ResponseStore
from sense_relay.broker.registry import InvalidAddress
from sense_relay.protocol import (
    Error,
    Heartbeat,
    Query,
    QueryForward,
    Register,
    RegisterAck,
    Response,
    SensorReading,
    Unavailable,
)

A, B = IDS["A"], IDS["B"]


@pytest.fixture
def broker(store_path, clock):
    b = Broker(ResponseStore(store_path), clock=clock, liveness_timeout_ms=15000, query_timeout_ms=10000, trace=[])
    yield b
    b.store.close()


def join(broker, name, link=None, address="10.0.0.1:4000"):
    link = link or RecordingLink()
    broker.register(IDS[name], PHONES[name], address, link)
    return link


def query(rid=1, requester=A, target=B, kind="temperature"):
    return Query(request_id=rid, requester=requester, target=target, kind=kind)


def response_for(q, value=21.5):
    reading = SensorReading(kind=q.kind, value=value, unit="celsius", timestamp=1, origin=q.target)
    return Response(request_id=q.request_id, requester=q.requester, target=q.target, reading=reading)


def test_register_then_lookup(broker):
    ack = broker.register(A, PHONES["A"], "10.0.0.1:4000")
    assert ack == RegisterAck(node=A)
    rec = broker.lookup(A)
    assert rec.online and rec.address == "10.0.0.1:4000"
    assert rec.last_seen >= rec.registered_at


def test_reregistration_last_write_wins(broker, clock):
    broker.register(A, PHONES["A"], "10.0.0.1:4000")
    first = broker.lookup(A)
    clock.advance(50)
    broker.register(A, PHONES["A"], "10.0.0.2:5000")
    rec = broker.lookup(A)
    assert rec.address == "10.0.0.2:5000"
    assert rec.registered_at == first.registered_at and rec.last_seen == first.last_seen + 50
    assert len(broker.registry) == 1


def test_register_id_mismatch(broker):
    with pytest.raises(IdMismatch):
        broker.register(A, PHONES["B"], "10.0.0.1:4000")


@pytest.mark.parametrize("address", ["nohost", "host:", "host:99999", ":80"])
def test_register_bad_address(broker, address):
    with pytest.raises(InvalidAddress):
        broker.register(A, PHONES["A"], address)


def test_lookup_unknown(broker):
    with pytest.raises(NotFound):
        broker.lookup(B)


def test_liveness_expires_and_heartbeat_restores(broker, clock):
    join(broker, "B")
    clock.advance(15000)
    assert broker.lookup(B).online
    clock.advance(1)
    assert not broker.lookup(B).online
    broker.heartbeat(B)
    assert broker.lookup(B).online


def test_expire_stale_counts(broker, clock):
    assert broker.expire_stale() == 0
    join(broker, "A")
    clock.advance(1)
    assert broker.expire_stale() == 0
    for name in "CDEFGHIJ":
        join(broker, name)
    join(broker, "B")
    clock.advance(2 * 15000)
    for name in "ABCDEFG":
        broker.heartbeat(IDS[name])
    assert broker.expire_stale() == 3
    assert broker.expire_stale() == 0
    assert sorted(r.node for r in broker.registry.records() if not r.online) == sorted(IDS[n] for n in "HIJ")


def test_query_forwarded_with_identical_fields(broker):
    a, b = join(broker, "A"), join(broker, "B")
    q = query(rid=42, kind="light")
    out = broker.route_query(q)
    assert out == QueryForward(request_id=42, requester=A, target=B, kind="light")
    assert b.sent == [out] and a.sent == []


def test_query_to_unregistered_target(broker):
    a = join(broker, "A")
    out = broker.route_query(query(rid=9))
    assert out == Unavailable(request_id=9, target=B, reason="not-registered")
    assert a.sent == [out]


def test_query_to_stale_target(broker, clock):
    a, b = join(broker, "A"), join(broker, "B")
    clock.advance(15001)
    broker.heartbeat(A)
    out = broker.route_query(query())
    assert isinstance(out, Unavailable) and out.reason == "offline"
    assert b.sent == [] and a.sent == [out]


def test_query_to_disconnected_target(broker):
    join(broker, "A")
    b = join(broker, "B")
    broker.disconnect(b)
    assert broker.route_query(query()).reason == "unreachable"


def test_query_from_unknown_requester(broker):
    join(broker, "B")
    with pytest.raises(RequesterUnknown):
        broker.route_query(query())


def test_duplicate_outstanding_request(broker):
    join(broker, "A"), join(broker, "B")
    broker.route_query(query(rid=5))
    with pytest.raises(DuplicateRequest):
        broker.route_query(query(rid=5))


def test_response_persisted_then_forwarded(broker):
    a, _ = join(broker, "A"), join(broker, "B")
    q = query()
    broker.route_query(q)
    r = response_for(q)
    assert broker.route_response(r) is True
    assert a.sent == [r]
    (row,) = broker.query_store()
    assert row.request_id == q.request_id and row.reading == r.reading
    assert [e[0] for e in broker.trace] == ["persist", "forward"]


def test_response_to_offline_requester_is_stored_not_forwarded(broker, clock):
    a, _ = join(broker, "A"), join(broker, "B")
    q = query()
    broker.route_query(q)
    clock.advance(9000)
    broker.heartbeat(B)
    clock.advance(7000)  # A silent for 16 s, query not yet timed out
    broker.expire_stale()
    assert broker.route_response(response_for(q)) is False
    assert len(broker.query_store()) == 1
    assert broker.delivery_failures == 1
    assert a.sent == []


def test_two_responses_stored_in_arrival_order(broker):
    join(broker, "A"), join(broker, "B")
    q1, q2 = query(rid=1), query(rid=2)
    broker.route_query(q1), broker.route_query(q2)
    broker.route_response(response_for(q2))
    broker.route_response(response_for(q1))
    assert [r.request_id for r in broker.query_store()] == [2, 1]


def test_persist_failure_aborts_forward(broker):
    a, _ = join(broker, "A"), join(broker, "B")
    q = query()
    broker.route_query(q)
    broker.store.close()
    with pytest.raises(PersistFailure):
        broker.route_response(response_for(q))
    assert a.sent == []
    assert broker.outstanding == 1


def test_query_timeout(broker, clock):
    a, _ = join(broker, "A"), join(broker, "B")
    broker.route_query(query(rid=3))
    clock.advance(9999)
    assert broker.expire_queries() == 0
    clock.advance(1)
    assert broker.expire_queries() == 1
    assert a.sent == [Unavailable(request_id=3, target=B, reason="timeout")]
    # a late answer is kept but not delivered a second time
    assert broker.route_response(response_for(query(rid=3))) is False
    assert broker.late_responses == 1 and len(a.sent) == 1


def test_error_relayed_to_requester(broker):
    a, _ = join(broker, "A"), join(broker, "B")
    broker.route_query(query(rid=8))
    err = Error(code="unsupported-sensor", detail="light", request_id=8)
    assert broker.route_error(err, B)
    assert a.sent == [err]
    assert broker.outstanding == 0


def test_handle_rejects_with_error_messages(broker):
    link = RecordingLink()
    broker.handle(query(rid=4), link, "10.0.0.9:1")
    assert link.sent[-1].code == "requester-unknown" and link.sent[-1].request_id == 4
    broker.handle(Register(node=A, phone=PHONES["B"]), link, "10.0.0.9:1")
    assert link.sent[-1].code == "id-mismatch"
    broker.handle(Register(node=A, phone=PHONES["A"]), link, "10.0.0.9:1")
    assert link.sent[-1] == RegisterAck(node=A)
    broker.handle(query(requester=B, target=A), link, "10.0.0.9:1")
    assert link.sent[-1].code == "requester-mismatch"
    broker.handle(Heartbeat(node=B), link, "10.0.0.9:1")
    assert link.sent[-1].code == "not-found"
    broker.handle(RegisterAck(node=A), link, "10.0.0.9:1")
    assert link.sent[-1].code == "unexpected-message"
    n = len(link.sent)
    broker.handle(Error(code="x"), link, "10.0.0.9:1")
    assert len(link.sent) == n


def test_relay_totality_over_random_liveness(store_path, clock):
    rng = random.Random(17)
    names = list("ABCDEFGHIJ")
    broker = Broker(ResponseStore(store_path), clock=clock, liveness_timeout_ms=1000)
    links = {n: RecordingLink() for n in names}
    registered = set()
    for step in range(500):
        name = rng.choice(names)
        action = rng.random()
        if action < 0.3:
            broker.register(IDS[name], PHONES[name], "10.0.0.1:1", links[name])
            registered.add(name)
        elif action < 0.4 and name in registered:
            broker.heartbeat(IDS[name])
        elif action < 0.5:
            clock.advance(rng.randrange(0, 700))
        else:
            requester = rng.choice(sorted(registered)) if registered else name
            target = rng.choice(names)
            before = {n: len(l.sent) for n, l in links.items()}
            q = query(rid=step, requester=IDS[requester], target=IDS[target])
            try:
                out = broker.route_query(q)
            except RequesterUnknown:
                assert requester not in registered
                continue
            forwards = [m for n, l in links.items() for m in l.sent[before[n]:] if isinstance(m, QueryForward)]
            unavail = [m for m in links[requester].sent[before[requester]:] if isinstance(m, Unavailable)]
            assert len(forwards) + len(unavail) == 1
            assert (forwards or unavail)[0] == out
            assert out.request_id == step
    broker.store.close()
