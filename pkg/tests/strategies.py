"""Hypothesis strategies for wire messages."""

from hypothesis import strategies as st

from sense_relay.protocol import (
    Error,
    Heartbeat,
    Query,
    QueryForward,
    Register,
    RegisterAck,
    Response,
    SensorKind,
    SensorReading,
    Unavailable,
)

node_ids = st.text(alphabet="0123456789abcdef", min_size=16, max_size=16)
request_ids = st.integers(min_value=0, max_value=2**64 - 1)
finite = st.floats(allow_nan=False, allow_infinity=False)
short_text = st.text(max_size=40)


@st.composite
def readings(draw):
    kind = draw(st.sampled_from(list(SensorKind)))
    value = (draw(finite), draw(finite)) if kind is SensorKind.LOCATION else draw(finite)
    return SensorReading(
        kind=kind,
        value=value,
        unit=draw(st.text(min_size=1, max_size=10)),
        timestamp=draw(st.integers(min_value=0, max_value=2**53)),
        origin=draw(node_ids),
    )


messages = st.one_of(
    st.builds(Register, node=node_ids, phone=short_text),
    st.builds(RegisterAck, node=node_ids),
    st.builds(Heartbeat, node=node_ids),
    st.builds(Query, request_id=request_ids, requester=node_ids, target=node_ids, kind=st.sampled_from(list(SensorKind))),
    st.builds(QueryForward, request_id=request_ids, requester=node_ids, target=node_ids, kind=st.sampled_from(list(SensorKind))),
    st.builds(Response, request_id=request_ids, requester=node_ids, target=node_ids, reading=readings()),
    st.builds(Unavailable, request_id=request_ids, target=node_ids, reason=short_text),
    st.builds(Error, code=short_text, detail=short_text, request_id=st.none() | request_ids),
)
