"""HTTP read/evaluate API next to the relay.

Applications read the collected sensor data and the node table here, and
can evaluate the execution-time/energy model or run the transfer
simulator without a local install. The relay itself speaks the framed
TCP protocol; this app never carries queries between nodes.
"""

from __future__ import annotations

import contextlib
from typing import Literal, Optional

import uvicorn
from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel, Field

from . import perf_model, simulator
from .broker.core import Broker
from .broker.registry import NotFound
from .protocol import SensorKind, SensorReading


class TimeParamsIn(BaseModel):
    p: int = Field(ge=0)
    s_f: float = Field(ge=0, allow_inf_nan=False)
    v_n: float = Field(gt=0, allow_inf_nan=False)
    v_d: float = Field(gt=0, allow_inf_nan=False)
    o_f: float = Field(ge=0, allow_inf_nan=False)

    def to_core(self) -> perf_model.TimeParams:
        return perf_model.TimeParams(**self.model_dump())


class EnergyParamsIn(BaseModel):
    c_tx: float = Field(0.0, ge=0, allow_inf_nan=False)
    d_tx: float = Field(0.0, ge=0, allow_inf_nan=False)
    c_rx: float = Field(0.0, ge=0, allow_inf_nan=False)
    d_rx: float = Field(0.0, ge=0, allow_inf_nan=False)
    c_proc: float = Field(0.0, ge=0, allow_inf_nan=False)
    s_e: float = Field(0.0, ge=0, allow_inf_nan=False)

    def to_core(self) -> perf_model.EnergyParams:
        return perf_model.EnergyParams(**self.model_dump())


class ModelRequest(BaseModel):
    time: TimeParamsIn
    energy: EnergyParamsIn = EnergyParamsIn()
    variant: Literal["literal", "corrected"] = "corrected"


class SweepRequest(ModelRequest):
    grid: dict[str, list[float]]


class ModelRow(BaseModel):
    p: int
    s_f: float
    v_n: float
    v_d: float
    o_f: float
    t_trans: float
    t_oh: float
    t_proc: float
    t_cs: float
    e_cs: float
    variant: str


class SimRequest(BaseModel):
    time: TimeParamsIn
    energy: EnergyParamsIn = EnergyParamsIn()
    chunk_size: float = Field(gt=0, allow_inf_nan=False)
    loss_rate: float = Field(0.0, ge=0, lt=1)
    max_retries: Optional[int] = Field(None, ge=0)
    seed: int = Field(0, ge=0, le=2**64 - 1)
    replications: int = Field(1, ge=1, le=100_000)


class SimSummary(BaseModel):
    q: float
    p: int
    s_f: float
    chunk: float
    replications: int
    mean_t: Optional[float]
    max_t: Optional[float]
    t_cs_model: float
    rel_dev: Optional[float]
    e_sim: Optional[float]
    e_model: float
    failures: int
    mean_transfer_time: Optional[float]
    mean_attempts_per_chunk: Optional[float]


class NodeOut(BaseModel):
    node: str
    address: str
    registered_at: int
    last_seen: int
    online: bool


class StoredResponseOut(BaseModel):
    request_id: int
    requester: str
    target: str
    reading: SensorReading
    stored_at: int


def _row(r: perf_model.SweepRow) -> ModelRow:
    return ModelRow(**r.as_dict())


def create_app(broker: Optional[Broker] = None) -> FastAPI:
    app = FastAPI(title="sense-relay")

    def _broker() -> Broker:
        if broker is None:
            raise HTTPException(status_code=503, detail="no broker attached to this service")
        return broker

    @app.get("/health")
    def health():
        return {"status": "ok", "broker": broker is not None}

    @app.post("/model", response_model=ModelRow)
    def model(req: ModelRequest):
        try:
            rows = perf_model.sweep({}, req.time.to_core(), req.energy.to_core(), req.variant)
        except perf_model.InvalidParams as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _row(rows[0])

    @app.post("/sweep", response_model=list[ModelRow])
    def sweep(req: SweepRequest):
        try:
            rows = perf_model.sweep(req.grid, req.time.to_core(), req.energy.to_core(), req.variant)
        except perf_model.InvalidParams as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return [_row(r) for r in rows]

    @app.post("/sim", response_model=SimSummary)
    def sim(req: SimRequest):
        cfg = simulator.SimConfig(
            tp=req.time.to_core(),
            ep=req.energy.to_core(),
            chunk_size=req.chunk_size,
            loss_rate=req.loss_rate,
            max_retries=req.max_retries,
            seed=req.seed,
            replications=req.replications,
        )
        try:
            res = simulator.run_sim(cfg)
        except perf_model.InvalidParams as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SimSummary(
            **simulator.aggregate_row(res),
            mean_transfer_time=res.mean_transfer_time,
            mean_attempts_per_chunk=res.mean_attempts_per_chunk,
        )

    # broker reads are async so they run on the broker's event loop thread

    @app.get("/nodes", response_model=list[NodeOut])
    async def nodes():
        return [NodeOut(**vars(r)) for r in _broker().registry.records()]

    @app.get("/nodes/{node}", response_model=NodeOut)
    async def node(node: str):
        try:
            return NodeOut(**vars(_broker().lookup(node)))
        except NotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/responses", response_model=list[StoredResponseOut])
    async def responses(
        target: Optional[str] = None,
        kind: Optional[SensorKind] = None,
        since: Optional[int] = Query(None, ge=0),
    ):
        rows = _broker().query_store(target=target, kind=kind, since=since)
        return [StoredResponseOut(**vars(r)) for r in rows]

    return app


class EmbeddedServer(uvicorn.Server):
    """uvicorn server that leaves signal handling to the hosting process."""

    @contextlib.contextmanager
    def capture_signals(self):
        yield


def embedded_server(app: FastAPI, host: str, port: int) -> EmbeddedServer:
    return EmbeddedServer(uvicorn.Config(app, host=host, port=port, log_level="warning", lifespan="off"))
