"""Broker-relayed sensor queries between phone nodes, with analytical
execution-time/energy models and a loss-aware transfer simulator."""

__version__ = "0.1.0"
