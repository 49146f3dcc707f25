"""Command line entry points.

Payload (JSON or CSV) goes to stdout, diagnostics to stderr. Exit codes:
0 success, 1 operational error, 2 usage error. Flags take precedence
over the SENSE_RELAY_LISTEN / SENSE_RELAY_BROKER environment variables.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import signal
import sys
from dataclasses import asdict
from typing import Optional, Sequence

from . import perf_model, simulator
from .agent import Agent, AgentConfig, BrokerUnreachable, ProviderSpecError, RegistrationRejected, parse_provider_spec
from .broker import (
    DEFAULT_HEARTBEAT_INTERVAL_MS,
    DEFAULT_LIVENESS_TIMEOUT_MS,
    DEFAULT_QUERY_TIMEOUT_MS,
    Broker,
    BrokerServer,
    ResponseStore,
)
from .broker.server import split_address
from .protocol import SensorKind, derive_node_id

log = logging.getLogger("sense_relay")

LOSSLESS_TOLERANCE = 1e-9
DEFAULT_LISTEN = "127.0.0.1:7070"

TIME_FLAGS = ("p", "s_f", "v_n", "v_d", "o_f")
ENERGY_FLAGS = ("c_tx", "d_tx", "c_rx", "d_rx", "c_proc", "s_e")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _address(text: str) -> str:
    try:
        split_address(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    return text


def _kind(text: str) -> SensorKind:
    try:
        return SensorKind(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown sensor kind {text!r}")


def _add_model_flags(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("time parameters (required unless swept)")
    g.add_argument("--p", type=int, help="number of client sensor nodes")
    g.add_argument("--s-f", dest="s_f", type=float, help="data file size per node, bytes")
    g.add_argument("--v-n", dest="v_n", type=float, help="network transfer rate, bytes/s")
    g.add_argument("--v-d", dest="v_d", type=float, help="data processing rate, bytes/s")
    g.add_argument("--o-f", dest="o_f", type=float, help="file access overhead, seconds")
    e = sp.add_argument_group("energy coefficients (default 0)")
    e.add_argument("--c-tx", dest="c_tx", type=float, default=0.0, help="transmit energy per byte")
    e.add_argument("--d-tx", dest="d_tx", type=float, default=0.0, help="fixed transmit energy")
    e.add_argument("--c-rx", dest="c_rx", type=float, default=0.0, help="receive energy per byte")
    e.add_argument("--d-rx", dest="d_rx", type=float, default=0.0, help="fixed receive energy")
    e.add_argument("--c-proc", dest="c_proc", type=float, default=0.0, help="processing energy per byte")
    e.add_argument("--s-e", dest="s_e", type=float, default=0.0, help="equivalent data size, bytes per second of overhead")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sense-relay", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING", help="stderr log level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("broker", help="run the central relay")
    sp.add_argument("--listen", type=_address, default=os.environ.get("SENSE_RELAY_LISTEN", DEFAULT_LISTEN))
    sp.add_argument("--store", default="./responses.jsonl", help="append-only response log")
    sp.add_argument("--liveness-timeout-ms", type=_positive_int, default=DEFAULT_LIVENESS_TIMEOUT_MS)
    sp.add_argument("--heartbeat-interval-ms", type=_positive_int, default=DEFAULT_HEARTBEAT_INTERVAL_MS,
                    help="interval agents are expected to heartbeat at")
    sp.add_argument("--query-timeout-ms", type=_positive_int, default=DEFAULT_QUERY_TIMEOUT_MS)
    sp.add_argument("--http", type=_address, help="also serve the HTTP read API on host:port")

    sp = sub.add_parser("agent", help="run a simulated phone")
    sp.add_argument("--phone", required=True)
    sp.add_argument("--broker", type=_address, default=os.environ.get("SENSE_RELAY_BROKER", DEFAULT_LISTEN))
    sp.add_argument("--provider", required=True,
                    help="constant:KIND=VALUE:UNIT[,...] | synthetic:seed=N | trace=PATH")
    sp.add_argument("--heartbeat-interval-ms", type=_positive_int, default=DEFAULT_HEARTBEAT_INTERVAL_MS)

    sp = sub.add_parser("query", help="ask another node for a sensor reading")
    sp.add_argument("--broker", type=_address, default=os.environ.get("SENSE_RELAY_BROKER", DEFAULT_LISTEN))
    sp.add_argument("--from-phone", required=True, help="phone number to register the query client as")
    target = sp.add_mutually_exclusive_group(required=True)
    target.add_argument("--target-id", help="16-hex-digit node id of the target")
    target.add_argument("--target-phone", help="phone number of the target")
    sp.add_argument("--kind", type=_kind, required=True)
    sp.add_argument("--timeout-ms", type=_positive_int, default=15000)

    sp = sub.add_parser("model", help="evaluate the execution-time and energy model")
    _add_model_flags(sp)
    sp.add_argument("--variant", choices=perf_model.VARIANTS, default="corrected")
    sp.add_argument("--sweep", action="append", default=[], metavar="PARAM=V1,V2,...",
                    help="grid over a time parameter; repeat for more parameters")
    sp.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    sp = sub.add_parser("sim", help="simulate transfers with loss and retransmission")
    _add_model_flags(sp)
    sp.add_argument("--chunk-size", type=float, required=True, help="bytes per chunk")
    sp.add_argument("--loss", default="0", help="loss probability, or comma-separated list")
    sp.add_argument("--max-retries", type=int, default=None, help="default unlimited")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--replications", type=_positive_int, default=1)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--validate", action="store_true",
                    help=f"exit 1 unless the lossless run matches the model within {LOSSLESS_TOLERANCE} relative")

    sp = sub.add_parser("store-dump", help="print stored responses as JSON lines")
    sp.add_argument("--store", default="./responses.jsonl")
    sp.add_argument("--target")
    sp.add_argument("--kind", type=_kind)
    sp.add_argument("--since", type=int)
    return parser


def _parse_grid(specs: Sequence[str]) -> dict[str, list]:
    grid: dict[str, list] = {}
    for spec in specs:
        for part in filter(None, spec.split(";")):
            name, eq, values = part.partition("=")
            name = name.strip().replace("-", "_")
            if not eq or name not in TIME_FLAGS:
                raise UsageError(f"bad sweep spec {part!r}; expected one of {', '.join(TIME_FLAGS)}=V1,V2,...")
            conv = int if name == "p" else float
            try:
                grid[name] = [conv(v) for v in values.split(",")]
            except ValueError:
                raise UsageError(f"bad value in sweep spec {part!r}") from None
    return grid


def _time_params(args, grid: Optional[dict] = None) -> perf_model.TimeParams:
    grid = grid or {}
    values = {}
    for name in TIME_FLAGS:
        value = getattr(args, name)
        if value is None and name in grid:
            value = grid[name][0]
        if value is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
        values[name] = value
    return perf_model.TimeParams(**values)


def _energy_params(args) -> perf_model.EnergyParams:
    return perf_model.EnergyParams(**{name: getattr(args, name) for name in ENERGY_FLAGS})


def cmd_model(args) -> int:
    grid = _parse_grid(args.sweep)
    tp = _time_params(args, grid)
    try:
        rows = perf_model.sweep(grid, tp, _energy_params(args), args.variant)
    except perf_model.InvalidParams as exc:
        raise UsageError(f"InvalidParams: {exc}") from None
    out = perf_model.rows_to_csv(rows) if args.format == "csv" else perf_model.rows_to_jsonl(rows)
    sys.stdout.write(out)
    return 0


def _lossless_check(res: simulator.SimResult) -> tuple[bool, simulator.DeviationReport]:
    if res.config.loss_rate != 0:
        res = simulator.run_sim(simulator.lossless_twin(res.config))
    report = simulator.compare_to_model(res, res.config.tp)
    ok = (
        report.valid
        and report.max_time_rel is not None
        and report.max_time_rel <= LOSSLESS_TOLERANCE
        and report.max_energy_rel <= LOSSLESS_TOLERANCE
    )
    return ok, report


def cmd_sim(args) -> int:
    tp = _time_params(args)
    ep = _energy_params(args)
    try:
        losses = [float(x) for x in args.loss.split(",")]
    except ValueError:
        raise UsageError(f"bad --loss {args.loss!r}") from None
    results = []
    for q in losses:
        cfg = simulator.SimConfig(tp, ep, args.chunk_size, q, args.max_retries, args.seed, args.replications)
        try:
            results.append(simulator.run_sim(cfg))
        except perf_model.InvalidParams as exc:
            raise UsageError(f"InvalidParams: {exc}") from None
    failed = False
    if args.validate:
        for res in results:
            ok, report = _lossless_check(res)
            print(
                f"validate q={res.config.loss_rate}: lossless max rel deviation "
                f"time={report.max_time_rel} energy={report.max_energy_rel} -> {'ok' if ok else 'FAIL'}",
                file=sys.stderr,
            )
            failed |= not ok
    if args.format == "csv":
        sys.stdout.write(simulator.aggregate_csv(results))
    else:
        for res in results:
            doc = res.to_dict()
            doc["aggregate"] = simulator.aggregate_row(res)
            doc["deviation"] = asdict(simulator.compare_to_model(res, res.config.tp))
            sys.stdout.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    return 1 if failed else 0


def cmd_store_dump(args) -> int:
    try:
        store = ResponseStore(args.store, read_only=True)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for row in store.query(target=args.target, kind=args.kind, since=args.since):
        sys.stdout.write(row.to_json() + "\n")
    return 0


def _install_stop(stop: asyncio.Event) -> None:
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError, ValueError):
            pass


async def run_broker(args, stop: Optional[asyncio.Event] = None, ready=None) -> int:
    if args.liveness_timeout_ms < args.heartbeat_interval_ms:
        log.warning("liveness timeout %d ms is shorter than the heartbeat interval %d ms",
                    args.liveness_timeout_ms, args.heartbeat_interval_ms)
    host, port = split_address(args.listen)
    store = ResponseStore(args.store)
    broker = Broker(store, liveness_timeout_ms=args.liveness_timeout_ms, query_timeout_ms=args.query_timeout_ms)
    server = BrokerServer(broker, host, port)
    try:
        await server.start()
    except OSError as exc:
        store.close()
        print(f"error: cannot listen on {args.listen}: {exc}", file=sys.stderr)
        return 1
    http = http_task = None
    if args.http:
        from .service import create_app, embedded_server

        h_host, h_port = split_address(args.http)
        http = embedded_server(create_app(broker), h_host, h_port)
        http_task = asyncio.create_task(http.serve())
    if stop is None:
        stop = asyncio.Event()
        _install_stop(stop)
    print(f"broker listening on {server.address}, store {args.store}", file=sys.stderr)
    if ready is not None:
        ready(server)
    await stop.wait()
    if http is not None:
        http.should_exit = True
        await http_task
    await server.close()
    store.close()
    print(f"broker stopped; {len(store)} responses stored", file=sys.stderr)
    return 0


async def run_agent(args, stop: Optional[asyncio.Event] = None, ready=None) -> int:
    cfg = AgentConfig(args.phone, args.broker, args.provider, args.heartbeat_interval_ms)
    try:
        agent = await Agent(cfg).start()
    except (BrokerUnreachable, RegistrationRejected) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"node": agent.node_id, "broker": args.broker, "status": "registered"}), flush=True)
    if stop is None:
        stop = asyncio.Event()
        _install_stop(stop)
    if ready is not None:
        ready(agent)
    await stop.wait()
    await agent.stop()
    return 0


async def run_query(args) -> int:
    target = args.target_id or derive_node_id(args.target_phone)
    # the query client only asks; it never heartbeats within its lifetime
    cfg = AgentConfig(args.from_phone, args.broker, parse_provider_spec("constant:temperature=0:celsius"),
                      heartbeat_interval_ms=10**9)
    try:
        agent = await Agent(cfg).start()
    except (BrokerUnreachable, RegistrationRejected) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    try:
        outcome = await agent.issue_query(target, args.kind, args.timeout_ms)
    finally:
        await agent.stop()
    print(json.dumps(outcome.to_dict()))
    return 0 if outcome.outcome == "reading" else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "agent":
            try:
                args.provider = parse_provider_spec(args.provider)
            except ProviderSpecError as exc:
                raise UsageError(f"bad --provider: {exc}") from None
            return asyncio.run(run_agent(args))
        if args.command == "query":
            if args.target_id is not None and not _is_node_id(args.target_id):
                raise UsageError(f"--target-id must be 16 lowercase hex digits, got {args.target_id!r}")
            return asyncio.run(run_query(args))
        if args.command == "broker":
            return asyncio.run(run_broker(args))
        if args.command == "model":
            return cmd_model(args)
        if args.command == "sim":
            return cmd_sim(args)
        return cmd_store_dump(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # e.g. malformed phone numbers
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2


def _is_node_id(text: str) -> bool:
    return len(text) == 16 and all(c in "0123456789abcdef" for c in text)


if __name__ == "__main__":
    sys.exit(main())
