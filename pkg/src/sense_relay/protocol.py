"""Wire messages, framing and node identity shared by broker and agents.

Frame layout: 4-byte big-endian unsigned length N, then N bytes of UTF-8
JSON whose top-level ``type`` field names the message. N is capped at
64 KiB.
"""

from __future__ import annotations

import asyncio
import hashlib
import re
import struct
from enum import Enum
from typing import Annotated, Iterator, Literal, Optional, Union

from pydantic import (
    AllowInfNan,
    BaseModel,
    ConfigDict,
    Field,
    Strict,
    StringConstraints,
    TypeAdapter,
    ValidationError,
    model_validator,
)

MAX_PAYLOAD = 65536
HEADER = struct.Struct("!I")
U64_MAX = 2**64 - 1


class ProtocolError(Exception):
    """Base class for framing and decoding failures."""


class Truncated(ProtocolError):
    pass


class MalformedPayload(ProtocolError):
    pass


class OversizeMessage(ProtocolError):
    pass


class EmptyIdentifier(ValueError):
    pass


class InvalidIdentifier(ValueError):
    pass


NodeId = Annotated[str, Strict(), StringConstraints(pattern=r"^[0-9a-f]{16}$")]
RequestId = Annotated[int, Strict(), Field(ge=0, le=U64_MAX)]
Finite = Annotated[float, Strict(), AllowInfNan(False)]
NonEmpty = Annotated[str, Strict(), StringConstraints(min_length=1)]


class SensorKind(str, Enum):
    TEMPERATURE = "temperature"
    LOCATION = "location"
    ACCELEROMETER = "accelerometer"
    LIGHT = "light"
    PROXIMITY = "proximity"
    MICROPHONE_LEVEL = "microphone-level"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SensorReading(_Frozen):
    kind: SensorKind
    value: Union[Finite, tuple[Finite, Finite]]
    unit: NonEmpty
    timestamp: Annotated[int, Strict(), Field(ge=0)]
    origin: NodeId

    @model_validator(mode="after")
    def _value_shape(self) -> "SensorReading":
        is_pair = isinstance(self.value, tuple)
        if (self.kind is SensorKind.LOCATION) != is_pair:
            raise ValueError("location readings carry a (lat, lon) pair; other kinds a scalar")
        return self


class Register(_Frozen):
    type: Literal["register"] = "register"
    node: NodeId
    phone: Annotated[str, Strict()]


class RegisterAck(_Frozen):
    type: Literal["register_ack"] = "register_ack"
    node: NodeId


class Heartbeat(_Frozen):
    type: Literal["heartbeat"] = "heartbeat"
    node: NodeId


class Query(_Frozen):
    type: Literal["query"] = "query"
    request_id: RequestId
    requester: NodeId
    target: NodeId
    kind: SensorKind


class QueryForward(_Frozen):
    type: Literal["query_forward"] = "query_forward"
    request_id: RequestId
    requester: NodeId
    target: NodeId
    kind: SensorKind


class Response(_Frozen):
    type: Literal["response"] = "response"
    request_id: RequestId
    requester: NodeId
    target: NodeId
    reading: SensorReading


class Unavailable(_Frozen):
    type: Literal["unavailable"] = "unavailable"
    request_id: RequestId
    target: NodeId
    reason: Annotated[str, Strict()]


class Error(_Frozen):
    """Error reply. ``request_id`` is set when the error answers a specific query."""

    type: Literal["error"] = "error"
    code: Annotated[str, Strict()]
    detail: Annotated[str, Strict()] = ""
    request_id: Optional[RequestId] = None


Message = Annotated[
    Union[Register, RegisterAck, Heartbeat, Query, QueryForward, Response, Unavailable, Error],
    Field(discriminator="type"),
]

_message_adapter: TypeAdapter[Message] = TypeAdapter(Message)


def encode_message(msg: Message) -> bytes:
    body = msg.model_dump_json().encode("utf-8")
    if len(body) > MAX_PAYLOAD:
        raise OversizeMessage(f"payload is {len(body)} bytes, limit {MAX_PAYLOAD}")
    return HEADER.pack(len(body)) + body


def parse_payload(body: bytes) -> Message:
    try:
        return _message_adapter.validate_json(body)
    except ValidationError as exc:
        raise MalformedPayload(_summarize(exc)) from None


def decode_frame(data: bytes) -> tuple[Message, int]:
    """Decode the first frame in ``data``; return the message and bytes consumed."""
    if len(data) < HEADER.size:
        raise Truncated(f"need {HEADER.size} header bytes, have {len(data)}")
    (n,) = HEADER.unpack_from(data)
    if n > MAX_PAYLOAD:
        raise OversizeMessage(f"declared length {n} exceeds {MAX_PAYLOAD}")
    end = HEADER.size + n
    if len(data) < end:
        raise Truncated(f"frame declares {n} bytes, only {len(data) - HEADER.size} present")
    return parse_payload(bytes(data[HEADER.size:end])), end


def decode_message(data: bytes) -> Message:
    return decode_frame(data)[0]


def iter_messages(data: bytes) -> Iterator[Message]:
    """Decode concatenated frames in order. Trailing partial frames raise Truncated."""
    view = memoryview(data)
    pos = 0
    while pos < len(view):
        msg, used = decode_frame(view[pos:])
        pos += used
        yield msg


async def read_message(reader: asyncio.StreamReader) -> Message:
    """Read one frame from a stream. Raises ``asyncio.IncompleteReadError`` on EOF."""
    header = await reader.readexactly(HEADER.size)
    (n,) = HEADER.unpack(header)
    if n > MAX_PAYLOAD:
        raise OversizeMessage(f"declared length {n} exceeds {MAX_PAYLOAD}")
    return parse_payload(await reader.readexactly(n))


_STRIP = re.compile(r"[\s\-()]")
_PHONE = re.compile(r"\+?[0-9]+")


def normalize_phone(phone: str) -> str:
    norm = _STRIP.sub("", phone)
    if norm in ("", "+"):
        raise EmptyIdentifier(f"phone {phone!r} is empty after normalization")
    if not _PHONE.fullmatch(norm):
        raise InvalidIdentifier(f"phone {phone!r} may only contain a leading '+' and digits")
    return norm


def derive_node_id(phone: str) -> str:
    return hashlib.sha256(normalize_phone(phone).encode("ascii")).hexdigest()[:16]


def _summarize(exc: ValidationError) -> str:
    first = exc.errors()[0]
    loc = ".".join(str(p) for p in first["loc"])
    return f"{loc}: {first['msg']}" if loc else first["msg"]
