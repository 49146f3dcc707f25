from .agent import Agent, AgentConfig, BrokerUnreachable, QueryOutcome, RegistrationRejected
from .providers import (
    ConstantProvider,
    ProviderSpecError,
    SensorProvider,
    SyntheticProvider,
    TraceReplayProvider,
    UnsupportedKind,
    parse_provider_spec,
)

__all__ = [
    "Agent",
    "AgentConfig",
    "BrokerUnreachable",
    "ConstantProvider",
    "ProviderSpecError",
    "QueryOutcome",
    "RegistrationRejected",
    "SensorProvider",
    "SyntheticProvider",
    "TraceReplayProvider",
    "UnsupportedKind",
    "parse_provider_spec",
]
