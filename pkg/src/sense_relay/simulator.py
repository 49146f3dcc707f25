"""Discrete-event simulation of sensor-file collection over lossy links.

``p`` clients ship an ``s_f``-byte file each to one processing center,
in index order, over a shared FIFO channel. Files travel in chunks; each
attempt of a chunk is lost independently with probability ``loss_rate``
and resent immediately. The processing center is one serialized
resource: it reads the file (``o_f``), processes it (``s_f / v_d``) and
writes the result (``o_f``) before the channel admits the next client.
Without loss this reproduces the closed-form total time exactly.

Loss draws come from a counter-based stream keyed on
``(seed, replication, client, chunk, attempt)``, so a run is a pure
function of its config no matter how events are ordered.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from .perf_model import (
    EnergyParams,
    InvalidParams,
    TimeParams,
    total_energy_cs,
    total_execution_time,
)

_M64 = 2**64 - 1

AGGREGATE_COLUMNS = [
    "q", "p", "s_f", "chunk", "replications", "mean_t", "max_t",
    "t_cs_model", "rel_dev", "e_sim", "e_model", "failures",
]


class MismatchedParams(ValueError):
    pass


def _splitmix(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def counter_uniform(seed: int, *counters: int) -> float:
    """Uniform draw in [0, 1) determined entirely by ``seed`` and ``counters``."""
    h = _splitmix(seed & _M64)
    for c in counters:
        h = _splitmix(h ^ _splitmix(c & _M64))
    return (h >> 11) * 2.0**-53


@dataclass(frozen=True)
class SimConfig:
    tp: TimeParams
    ep: EnergyParams
    chunk_size: float
    loss_rate: float = 0.0
    max_retries: Optional[int] = None  # None = unlimited
    seed: int = 0
    replications: int = 1

    def validate(self) -> "SimConfig":
        self.tp.validate()
        self.ep.validate()
        if not (isinstance(self.chunk_size, (int, float)) and math.isfinite(self.chunk_size) and self.chunk_size > 0):
            raise InvalidParams(f"chunk_size must be positive, got {self.chunk_size!r}")
        if self.tp.s_f > 0 and self.chunk_size > self.tp.s_f:
            raise InvalidParams(f"chunk_size {self.chunk_size} exceeds s_f {self.tp.s_f}")
        if not 0 <= self.loss_rate < 1:
            raise InvalidParams(f"loss_rate must be in [0, 1), got {self.loss_rate!r}")
        if self.max_retries is not None and self.max_retries < 0:
            raise InvalidParams(f"max_retries must be nonnegative, got {self.max_retries!r}")
        if not 0 <= self.seed <= _M64:
            raise InvalidParams(f"seed must fit in 64 bits, got {self.seed!r}")
        if self.replications < 1:
            raise InvalidParams(f"replications must be positive, got {self.replications!r}")
        return self

    def chunk_sizes(self) -> list[float]:
        s_f = self.tp.s_f
        if s_f == 0:
            return []
        n = math.ceil(s_f / self.chunk_size)
        return [self.chunk_size] * (n - 1) + [s_f - (n - 1) * self.chunk_size]


@dataclass
class ClientOutcome:
    transfer_time: Optional[float]  # None when the client failed
    bytes_sent: float
    bytes_delivered: float
    retransmissions: list[int]
    energy: float
    failed: bool = False


@dataclass
class ReplicationResult:
    clients: list[ClientOutcome]
    total_time: float
    energy: float


@dataclass
class SimResult:
    config: SimConfig
    replications: list[ReplicationResult]
    mean_transfer_time: Optional[float]
    max_transfer_time: Optional[float]
    mean_total_time: Optional[float]
    max_total_time: Optional[float]
    mean_energy: Optional[float]
    mean_attempts_per_chunk: Optional[float]
    failures: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class _Replication:
    """Event loop for one replication."""

    def __init__(self, cfg: SimConfig, index: int) -> None:
        self.cfg = cfg
        self.index = index
        self.chunks = cfg.chunk_sizes()
        self.events: list = []
        self._seq = 0
        self.now = 0.0
        self.outcomes: list[ClientOutcome] = []
        # per-client transfer state
        self._t0 = 0.0
        self._on_air = 0.0
        self._chunk = 0
        self._attempt = 0

    def schedule(self, at: float, kind: str, client: int) -> None:
        heapq.heappush(self.events, (at, self._seq, kind, client))
        self._seq += 1

    def run(self) -> ReplicationResult:
        if self.cfg.tp.p > 0:
            self.schedule(0.0, "client_start", 0)
        while self.events:
            self.now, _, kind, client = heapq.heappop(self.events)
            getattr(self, "_on_" + kind)(client)
        energy = math.fsum(o.energy for o in self.outcomes)
        return ReplicationResult(self.outcomes, self.now, energy)

    def _on_client_start(self, client: int) -> None:
        self.outcomes.append(ClientOutcome(None, 0.0, 0.0, [0] * len(self.chunks), 0.0))
        self._t0 = self.now
        self._on_air = 0.0
        self._chunk = 0
        self._attempt = 0
        if self.chunks:
            self._send_attempt(client)
        else:
            self.schedule(self.now, "file_received", client)

    def _send_attempt(self, client: int) -> None:
        size = self.chunks[self._chunk]
        self._on_air += size
        # times measured from session start keep lossless durations exact
        self.schedule(self._t0 + self._on_air / self.cfg.tp.v_n, "attempt_end", client)

    def _on_attempt_end(self, client: int) -> None:
        cfg, out = self.cfg, self.outcomes[client]
        size = self.chunks[self._chunk]
        out.bytes_sent += size
        # the receiver radio is active for every attempt, lost or not
        out.energy += (cfg.ep.c_tx + cfg.ep.c_rx) * size
        u = counter_uniform(cfg.seed, self.index, client, self._chunk, self._attempt)
        if u < cfg.loss_rate:
            if cfg.max_retries is not None and out.retransmissions[self._chunk] >= cfg.max_retries:
                self._finish_failed(client)
                return
            out.retransmissions[self._chunk] += 1
            self._attempt += 1
            self._send_attempt(client)
            return
        out.bytes_delivered += size
        self._chunk += 1
        self._attempt = 0
        if self._chunk < len(self.chunks):
            self._send_attempt(client)
        else:
            out.transfer_time = self._on_air / cfg.tp.v_n
            self.schedule(self.now, "file_received", client)

    def _finish_failed(self, client: int) -> None:
        out = self.outcomes[client]
        out.failed = True
        out.energy += self.cfg.ep.d_tx + self.cfg.ep.d_rx
        self._next_client(client)

    def _on_file_received(self, client: int) -> None:
        out = self.outcomes[client]
        if out.transfer_time is None:
            out.transfer_time = 0.0
        ep = self.cfg.ep
        out.energy += ep.d_tx + ep.d_rx + 2 * ep.c_proc * ep.s_e * self.cfg.tp.o_f
        self.schedule(self.now + self.cfg.tp.o_f, "read_done", client)

    def _on_read_done(self, client: int) -> None:
        self.schedule(self.now + self.cfg.tp.s_f / self.cfg.tp.v_d, "processed", client)

    def _on_processed(self, client: int) -> None:
        self.schedule(self.now + self.cfg.tp.o_f, "write_done", client)

    def _on_write_done(self, client: int) -> None:
        self._next_client(client)

    def _next_client(self, client: int) -> None:
        if client + 1 < self.cfg.tp.p:
            self.schedule(self.now, "client_start", client + 1)


def run_replication(cfg: SimConfig, index: int) -> ReplicationResult:
    return _Replication(cfg, index).run()


def _mean(xs: list[float]) -> Optional[float]:
    return math.fsum(xs) / len(xs) if xs else None


def summarize(cfg: SimConfig, reps: list[ReplicationResult]) -> SimResult:
    transfers = [o.transfer_time for r in reps for o in r.clients if not o.failed]
    failures = sum(o.failed for r in reps for o in r.clients)
    totals = [r.total_time for r in reps]
    attempts = [1 + k for r in reps for o in r.clients if not o.failed for k in o.retransmissions]
    return SimResult(
        config=cfg,
        replications=reps,
        mean_transfer_time=_mean(transfers),
        max_transfer_time=max(transfers) if transfers else None,
        mean_total_time=_mean(totals),
        max_total_time=max(totals) if totals else None,
        mean_energy=_mean([r.energy for r in reps]),
        mean_attempts_per_chunk=_mean(attempts),
        failures=failures,
    )


def run_sim(cfg: SimConfig) -> SimResult:
    cfg.validate()
    return summarize(cfg, [run_replication(cfg, i) for i in range(cfg.replications)])


@dataclass
class DeviationReport:
    t_cs_model: float
    e_cs_model: float
    per_replication: list[dict] = field(default_factory=list)
    mean_time_abs: Optional[float] = None
    mean_time_rel: Optional[float] = None
    max_time_rel: Optional[float] = None
    mean_energy_abs: Optional[float] = None
    mean_energy_rel: Optional[float] = None
    max_energy_rel: Optional[float] = None
    valid: bool = True


def _rel(diff: float, ref: float) -> Optional[float]:
    if ref == 0:
        return 0.0 if diff == 0 else None
    return diff / ref


def compare_to_model(res: SimResult, tp: TimeParams) -> DeviationReport:
    """Deviation of the simulated total time and energy from the closed forms.

    Energy is compared against the per-byte-receive (corrected) model.
    """
    if res.config.tp != tp:
        raise MismatchedParams(f"result was simulated with {res.config.tp}, not {tp}")
    t_model = total_execution_time(tp).t_cs
    e_model = total_energy_cs(tp, res.config.ep, "corrected")
    report = DeviationReport(t_model, e_model)
    if not res.replications:
        report.valid = False
        return report
    for r in res.replications:
        dt, de = r.total_time - t_model, r.energy - e_model
        report.per_replication.append(
            {"time_abs": dt, "time_rel": _rel(dt, t_model), "energy_abs": de, "energy_rel": _rel(de, e_model)}
        )
    rows = report.per_replication
    report.mean_time_abs = res.mean_total_time - t_model
    report.mean_time_rel = _rel(report.mean_time_abs, t_model)
    report.mean_energy_abs = res.mean_energy - e_model
    report.mean_energy_rel = _rel(report.mean_energy_abs, e_model)
    if any(row["time_rel"] is None or row["energy_rel"] is None for row in rows):
        report.valid = False
    else:
        report.max_time_rel = max(abs(row["time_rel"]) for row in rows)
        report.max_energy_rel = max(abs(row["energy_rel"]) for row in rows)
    return report


def lossless_twin(cfg: SimConfig) -> SimConfig:
    return replace(cfg, loss_rate=0.0, replications=1)


def aggregate_row(res: SimResult) -> dict:
    cfg = res.config
    report = compare_to_model(res, cfg.tp)
    return {
        "q": cfg.loss_rate,
        "p": cfg.tp.p,
        "s_f": cfg.tp.s_f,
        "chunk": cfg.chunk_size,
        "replications": cfg.replications,
        "mean_t": res.mean_total_time,
        "max_t": res.max_total_time,
        "t_cs_model": report.t_cs_model,
        "rel_dev": report.mean_time_rel,
        "e_sim": res.mean_energy,
        "e_model": report.e_cs_model,
        "failures": res.failures,
    }


def aggregate_csv(results: list[SimResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=AGGREGATE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for res in results:
        writer.writerow(aggregate_row(res))
    return buf.getvalue()
