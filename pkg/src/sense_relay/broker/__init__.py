from .core import (
    DEFAULT_HEARTBEAT_INTERVAL_MS,
    DEFAULT_LIVENESS_TIMEOUT_MS,
    DEFAULT_QUERY_TIMEOUT_MS,
    Broker,
    DuplicateRequest,
    IdMismatch,
    RequesterUnknown,
    wall_clock_ms,
)
from .registry import BrokerError, NodeRecord, NotFound, Registry
from .server import BrokerServer
from .store import PersistFailure, ResponseStore, StoredResponse

__all__ = [
    "Broker",
    "BrokerError",
    "BrokerServer",
    "DEFAULT_HEARTBEAT_INTERVAL_MS",
    "DEFAULT_LIVENESS_TIMEOUT_MS",
    "DEFAULT_QUERY_TIMEOUT_MS",
    "DuplicateRequest",
    "IdMismatch",
    "NodeRecord",
    "NotFound",
    "PersistFailure",
    "Registry",
    "RequesterUnknown",
    "ResponseStore",
    "StoredResponse",
    "wall_clock_ms",
]
