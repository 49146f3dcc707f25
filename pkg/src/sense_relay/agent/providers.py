"""Simulated sensor providers standing in for phone hardware.

Provider specs (``--provider`` on the command line):

    constant:temperature=21.5:celsius[,light=300:lux,location=33.64/-117.84:deg]
    synthetic:seed=42
    trace=path/to/samples.csv      (also ``trace:path/to/samples.csv``)

Trace files have the header ``timestamp_ms,kind,value,unit`` and rows
sorted by timestamp. Location values are written ``lat/lon``.
"""

from __future__ import annotations

import bisect
import csv
import math
import random
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Union

from ..protocol import SensorKind, SensorReading

Value = Union[float, tuple[float, float]]


class UnsupportedKind(Exception):
    pass


class ProviderSpecError(ValueError):
    pass


def parse_value(kind: SensorKind, text: str) -> Value:
    try:
        if kind is SensorKind.LOCATION:
            lat, lon = text.split("/")
            value: Value = (float(lat), float(lon))
            parts = value
        else:
            value = float(text)
            parts = (value,)
    except ValueError:
        raise ProviderSpecError(f"bad {kind.value} value {text!r}") from None
    if not all(math.isfinite(v) for v in parts):
        raise ProviderSpecError(f"{kind.value} value must be finite, got {text!r}")
    return value


def parse_kind(text: str) -> SensorKind:
    try:
        return SensorKind(text)
    except ValueError:
        known = ", ".join(k.value for k in SensorKind)
        raise ProviderSpecError(f"unknown sensor kind {text!r} (known: {known})") from None


class SensorProvider(ABC):
    """Reads are deterministic given provider state, kind and ``now``."""

    def __init__(self) -> None:
        self._lock = threading.Lock()

    def read(self, kind: SensorKind, now: int, origin: str) -> SensorReading:
        with self._lock:
            value, unit, timestamp = self._sample(SensorKind(kind), now)
        return SensorReading(kind=kind, value=value, unit=unit, timestamp=timestamp, origin=origin)

    @abstractmethod
    def _sample(self, kind: SensorKind, now: int) -> tuple[Value, str, int]: ...


class ConstantProvider(SensorProvider):
    def __init__(self, values: dict[SensorKind, tuple[Value, str]]) -> None:
        super().__init__()
        self.values = {SensorKind(k): v for k, v in values.items()}

    def _sample(self, kind, now):
        if kind not in self.values:
            raise UnsupportedKind(kind.value)
        value, unit = self.values[kind]
        return value, unit, now


# start, max step, lower clamp, upper clamp, unit
WALKS: dict[SensorKind, tuple[float, float, float, float, str]] = {
    SensorKind.TEMPERATURE: (20.0, 0.1, -40.0, 60.0, "celsius"),
    SensorKind.ACCELEROMETER: (9.81, 0.05, 0.0, 40.0, "m/s^2"),
    SensorKind.LIGHT: (300.0, 5.0, 0.0, 100000.0, "lux"),
    SensorKind.PROXIMITY: (5.0, 0.5, 0.0, 10.0, "cm"),
    SensorKind.MICROPHONE_LEVEL: (40.0, 1.0, 0.0, 130.0, "db"),
}
LOCATION_START = (33.6405, -117.8443)
LOCATION_STEP = 1e-4


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, x))


class SyntheticProvider(SensorProvider):
    """Bounded uniform random walk per kind; equal seeds give equal sequences."""

    def __init__(self, seed: int) -> None:
        super().__init__()
        self.seed = seed
        self._rngs: dict[SensorKind, random.Random] = {}
        self._state: dict[SensorKind, Value] = {}

    def _sample(self, kind, now):
        if kind not in self._rngs:
            # str seeds hash deterministically, independent of PYTHONHASHSEED
            self._rngs[kind] = random.Random(f"{self.seed}:{kind.value}")
            self._state[kind] = LOCATION_START if kind is SensorKind.LOCATION else WALKS[kind][0]
        rng = self._rngs[kind]
        if kind is SensorKind.LOCATION:
            lat, lon = self._state[kind]
            lat = _clamp(lat + rng.uniform(-LOCATION_STEP, LOCATION_STEP), -90.0, 90.0)
            lon = _clamp(lon + rng.uniform(-LOCATION_STEP, LOCATION_STEP), -180.0, 180.0)
            self._state[kind] = (lat, lon)
            return (lat, lon), "deg", now
        _, step, lo, hi, unit = WALKS[kind]
        value = _clamp(self._state[kind] + rng.uniform(-step, step), lo, hi)
        self._state[kind] = value
        return value, unit, now


class TraceReplayProvider(SensorProvider):
    """Replays recorded samples: the latest sample at or before ``now``."""

    def __init__(self, samples: list[tuple[int, SensorKind, Value, str]]) -> None:
        super().__init__()
        self._times: dict[SensorKind, list[int]] = {}
        self._rows: dict[SensorKind, list[tuple[Value, str, int]]] = {}
        for ts, kind, value, unit in samples:
            self._times.setdefault(kind, []).append(ts)
            self._rows.setdefault(kind, []).append((value, unit, ts))

    @classmethod
    def from_csv(cls, path: str | Path) -> "TraceReplayProvider":
        samples = []
        last_ts = None
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["timestamp_ms", "kind", "value", "unit"]:
                raise ProviderSpecError(f"{path}: header must be timestamp_ms,kind,value,unit, got {header}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 4:
                    raise ProviderSpecError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
                ts_text, kind_text, value_text, unit = row
                try:
                    ts = int(ts_text)
                except ValueError:
                    raise ProviderSpecError(f"{path}:{lineno}: bad timestamp {ts_text!r}") from None
                if ts < 0 or (last_ts is not None and ts < last_ts):
                    raise ProviderSpecError(f"{path}:{lineno}: timestamps must be nonnegative and sorted")
                if not unit:
                    raise ProviderSpecError(f"{path}:{lineno}: empty unit")
                try:
                    kind = parse_kind(kind_text)
                    value = parse_value(kind, value_text)
                except ProviderSpecError as exc:
                    raise ProviderSpecError(f"{path}:{lineno}: {exc}") from None
                samples.append((ts, kind, value, unit))
                last_ts = ts
        return cls(samples)

    def _sample(self, kind, now):
        times = self._times.get(kind)
        i = bisect.bisect_right(times, now) if times else 0
        if i == 0:
            raise UnsupportedKind(f"no {kind.value} sample at or before {now}")
        return self._rows[kind][i - 1]


def parse_provider_spec(spec: str) -> SensorProvider:
    if spec.startswith("trace=") or spec.startswith("trace:"):
        path = spec[len("trace="):]
        if not path:
            raise ProviderSpecError("trace provider needs a path")
        try:
            return TraceReplayProvider.from_csv(path)
        except OSError as exc:
            raise ProviderSpecError(f"cannot read trace {path}: {exc}") from None
    name, sep, rest = spec.partition(":")
    if name == "synthetic":
        key, eq, seed = rest.partition("=")
        if key != "seed" or not eq or not seed.isdigit():
            raise ProviderSpecError(f"expected synthetic:seed=N, got {spec!r}")
        return SyntheticProvider(int(seed))
    if name == "constant":
        values: dict[SensorKind, tuple[Value, str]] = {}
        for item in filter(None, rest.split(",")):
            kind_text, eq, tail = item.partition("=")
            value_text, colon, unit = tail.rpartition(":")
            if not eq or not colon or not unit:
                raise ProviderSpecError(f"expected kind=value:unit, got {item!r}")
            kind = parse_kind(kind_text)
            values[kind] = (parse_value(kind, value_text), unit)
        if not values:
            raise ProviderSpecError("constant provider needs at least one kind=value:unit")
        return ConstantProvider(values)
    raise ProviderSpecError(f"unknown provider {spec!r}; use constant:..., synthetic:seed=N or trace=PATH")
