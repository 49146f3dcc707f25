"""Test doubles shared across modules."""

from sense_relay.protocol import derive_node_id


class FakeClock:
    def __init__(self, start: int = 1_000_000) -> None:
        self.now = start

    def __call__(self) -> int:
        return self.now

    def advance(self, ms: int) -> None:
        self.now += ms


class RecordingLink:
    """Stands in for a connection; keeps every message the broker sends."""

    def __init__(self, log=None, alive=True):
        self.node = None
        self.sent = []
        self.alive = alive
        self.log = log

    def send(self, msg) -> bool:
        if not self.alive:
            return False
        self.sent.append(msg)
        if self.log is not None:
            self.log.append(("send", msg))
        return True

    def of_type(self, cls):
        return [m for m in self.sent if isinstance(m, cls)]


PHONES = {name: f"+1555010{i}" for i, name in enumerate("ABCDEFGHIJ")}
IDS = {name: derive_node_id(phone) for name, phone in PHONES.items()}
