"""Closed-form client/server execution-time and energy model.

A processing center serves ``p`` client sensor nodes, each shipping a
data file of ``s_f`` bytes. Times are in seconds, sizes in bytes, rates
in bytes/second. Energy is in whatever unit the coefficients carry.
The node roles (which node is the center, which are clients) only shape
the topology; they carry no numeric fields.

The arithmetic is written against plain numbers, so ``fractions.Fraction``
inputs give exact results.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import numbers
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Literal, Mapping, Sequence

Variant = Literal["literal", "corrected"]
VARIANTS: tuple[str, ...] = ("literal", "corrected")

SWEEP_COLUMNS = [
    "p", "s_f", "v_n", "v_d", "o_f",
    "t_trans", "t_oh", "t_proc", "t_cs", "e_cs", "variant",
]


class InvalidParams(ValueError):
    pass


def _finite(name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise InvalidParams(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise InvalidParams(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class TimeParams:
    p: int
    s_f: float
    v_n: float
    v_d: float
    o_f: float

    def validate(self) -> "TimeParams":
        for f in fields(self):
            _finite(f.name, getattr(self, f.name))
        if int(self.p) != self.p or self.p < 0:
            raise InvalidParams(f"p must be a nonnegative integer, got {self.p!r}")
        if self.v_n <= 0:
            raise InvalidParams(f"v_n must be positive, got {self.v_n!r}")
        if self.v_d <= 0:
            raise InvalidParams(f"v_d must be positive, got {self.v_d!r}")
        if self.s_f < 0:
            raise InvalidParams(f"s_f must be nonnegative, got {self.s_f!r}")
        if self.o_f < 0:
            raise InvalidParams(f"o_f must be nonnegative, got {self.o_f!r}")
        return self


@dataclass(frozen=True)
class EnergyParams:
    c_tx: float
    d_tx: float
    c_rx: float
    d_rx: float
    c_proc: float
    s_e: float

    def validate(self) -> "EnergyParams":
        for f in fields(self):
            value = getattr(self, f.name)
            _finite(f.name, value)
            if value < 0:
                raise InvalidParams(f"{f.name} must be nonnegative, got {value!r}")
        return self


@dataclass(frozen=True)
class TimeBreakdown:
    t_trans: float
    t_oh: float
    t_proc: float
    t_cs: float


def transfer_time(tp: TimeParams):
    tp.validate()
    return tp.p * tp.s_f / tp.v_n


def overhead_time(tp: TimeParams):
    # read and write of the data file are assumed to cost the same
    tp.validate()
    return 2 * tp.p * tp.o_f


def processing_time(tp: TimeParams):
    tp.validate()
    return tp.p * tp.s_f / tp.v_d


def total_execution_time(tp: TimeParams) -> TimeBreakdown:
    t_trans = transfer_time(tp)
    t_oh = overhead_time(tp)
    t_proc = processing_time(tp)
    return TimeBreakdown(t_trans, t_oh, t_proc, t_trans + t_oh + t_proc)


def energy_tx(size, ep: EnergyParams):
    ep.validate()
    return ep.c_tx * size + ep.d_tx


def energy_rx(size, ep: EnergyParams):
    ep.validate()
    return ep.c_rx * size + ep.d_rx


def energy_overhead(size, ep: EnergyParams):
    """Overhead-processing energy for ``size`` bytes.

    For file-access overhead pass ``ep.s_e * o_f``, the byte count whose
    processing takes ``o_f`` seconds.
    """
    ep.validate()
    return ep.c_proc * size


def total_energy_cs(tp: TimeParams, ep: EnergyParams, variant: Variant = "corrected"):
    """Network-wide energy of one client/server round.

    ``literal`` keeps the receive term as the constant ``c_rx + d_rx``;
    ``corrected`` charges reception per byte like transmission,
    ``c_rx * s_f + d_rx``. The two differ by ``p * c_rx * (s_f - 1)``.
    """
    tp.validate()
    ep.validate()
    if variant == "literal":
        rx = ep.c_rx + ep.d_rx
    elif variant == "corrected":
        rx = energy_rx(tp.s_f, ep)
    else:
        raise InvalidParams(f"variant must be one of {VARIANTS}, got {variant!r}")
    oh = energy_overhead(ep.s_e * tp.o_f, ep)
    return tp.p * (energy_tx(tp.s_f, ep) + rx + 2 * oh)


@dataclass(frozen=True)
class SweepRow:
    params: TimeParams
    times: TimeBreakdown
    e_cs: float
    variant: str

    def as_dict(self) -> dict:
        return {**asdict(self.params), **asdict(self.times), "e_cs": self.e_cs, "variant": self.variant}


TIME_FIELDS = tuple(f.name for f in fields(TimeParams))


def sweep(
    grid: Mapping[str, Sequence],
    base: TimeParams,
    ep: EnergyParams,
    variant: Variant = "corrected",
) -> list[SweepRow]:
    """Evaluate the Cartesian product of ``grid`` over ``base``.

    Rows come out in lexicographic order of the grid's declaration order,
    i.e. the last declared parameter varies fastest.
    """
    ep.validate()
    for name, values in grid.items():
        if name not in TIME_FIELDS:
            raise InvalidParams(f"unknown sweep parameter {name!r}")
        if len(values) == 0:
            raise InvalidParams(f"sweep parameter {name!r} has no values")
        for v in values:
            try:
                replace(base, **{name: v}).validate()
            except InvalidParams as exc:
                raise InvalidParams(f"grid entry {name}={v!r}: {exc}") from None
    names = list(grid)
    rows = []
    for combo in itertools.product(*(grid[n] for n in names)):
        tp = replace(base, **dict(zip(names, combo))).validate()
        rows.append(SweepRow(tp, total_execution_time(tp), total_energy_cs(tp, ep, variant), variant))
    return rows


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_dict())
    return buf.getvalue()


def rows_to_jsonl(rows: Iterable[SweepRow]) -> str:
    return "".join(json.dumps(row.as_dict()) + "\n" for row in rows)
