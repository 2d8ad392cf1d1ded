"""Simulation driver and file formats for streams and traces.

Stream files: first line "m k n", then one "t site j" line per event,
LF-terminated. Trace files: "#"-prefixed provenance lines holding the fully
resolved configuration, a CSV header
t,true_fp,estimate,cum_messages,cum_bits,fired_instances, then one row per
recorded event with floats printed to 12 significant digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .monitor import Monitor
from .oracles import fp_power
from .protocol import GlobalParams, ThresholdInstance, fanout
from .sampling import SALT_STREAM, derive, event_key

TRACE_HEADER = "t,true_fp,estimate,cum_messages,cum_bits,fired_instances"


@dataclass(frozen=True)
class StreamEvent:
    """One insertion: at time t, site receives coordinate j."""

    t: int
    site: int
    j: int


@dataclass(frozen=True)
class TraceRow:
    t: int
    true_fp: float
    estimate: float
    cum_messages: int
    cum_bits: int
    fired_instances: int


def _fmt(x: float) -> str:
    return f"{x:.12g}"


# -- stream files ----------------------------------------------------------


def write_stream(path: str, events: Iterable[StreamEvent], m: int, k: int,
                 n: int) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{m} {k} {n}\n")
        for ev in events:
            fh.write(f"{ev.t} {ev.site} {ev.j}\n")


def read_stream(path: str) -> tuple[int, int, int, list[StreamEvent]]:
    """Parse a stream file; malformed input raises ValueError naming the
    offending line."""
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty stream file")
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError(f"{path}: line 1: expected 'm k n', got {lines[0]!r}")
    try:
        m, k, n = (int(x) for x in head)
    except ValueError:
        raise ValueError(f"{path}: line 1: non-integer header {lines[0]!r}")
    events = []
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}: line {i}: expected 't site j', got {line!r}")
        try:
            t, site, j = (int(x) for x in parts)
        except ValueError:
            raise ValueError(f"{path}: line {i}: non-integer field in {line!r}")
        events.append(StreamEvent(t, site, j))
    validate_stream(events, m, k, n, path=path)
    return m, k, n, events


def validate_stream(events: list[StreamEvent], m: int, k: int, n: int,
                    path: str = "<stream>") -> None:
    if len(events) > n:
        raise ValueError(f"{path}: {len(events)} events exceed declared bound {n}")
    prev = -1
    for pos, ev in enumerate(events):
        where = f"{path}: event {pos}"
        if ev.t <= prev:
            raise ValueError(f"{where}: time {ev.t} not strictly increasing")
        prev = ev.t
        if not 0 <= ev.site < k:
            raise ValueError(f"{where}: site {ev.site} outside [0, {k})")
        if not 0 <= ev.j < m:
            raise ValueError(f"{where}: coordinate {ev.j} outside [0, {m})")


# -- trace files -----------------------------------------------------------


def write_trace(path: str, rows: Iterable[TraceRow],
                provenance: dict[str, object]) -> None:
    with open(path, "w", newline="\n") as fh:
        for key in sorted(provenance):
            fh.write(f"# {key}={provenance[key]}\n")
        fh.write(TRACE_HEADER + "\n")
        for row in rows:
            fh.write(
                f"{row.t},{_fmt(row.true_fp)},{_fmt(row.estimate)},"
                f"{row.cum_messages},{row.cum_bits},{row.fired_instances}\n"
            )


def read_trace(path: str) -> tuple[dict[str, str], list[TraceRow]]:
    provenance: dict[str, str] = {}
    rows: list[TraceRow] = []
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            text = line[1:].strip()
            if "=" in text:
                key, val = text.split("=", 1)
                provenance[key.strip()] = val
        elif line:
            body.append(line)
    if not body or body[0] != TRACE_HEADER:
        raise ValueError(f"{path}: missing trace header")
    for line in body[1:]:
        f = line.split(",")
        if len(f) != 6:
            raise ValueError(f"{path}: bad trace row {line!r}")
        rows.append(
            TraceRow(int(f[0]), float(f[1]), float(f[2]), int(f[3]), int(f[4]),
                     int(f[5]))
        )
    return provenance, rows


# -- stream generators -----------------------------------------------------


def gen_uniform_stream(m: int, k: int, n: int, seed: int) -> list[StreamEvent]:
    """n insertions with uniform coordinates and uniform sites."""
    rng = np.random.Generator(np.random.PCG64(derive(seed, SALT_STREAM, 0)))
    sites = rng.integers(0, k, size=n)
    js = rng.integers(0, m, size=n)
    return [StreamEvent(t, int(sites[t]), int(js[t])) for t in range(n)]


def gen_zipf_stream(m: int, k: int, n: int, seed: int,
                    s: float = 1.1) -> list[StreamEvent]:
    """n insertions with coordinate ranks drawn from a Zipf(s) law over [m]."""
    if s <= 0:
        raise ValueError(f"zipf exponent must be positive, got {s}")
    rng = np.random.Generator(np.random.PCG64(derive(seed, SALT_STREAM, 1)))
    w = np.arange(1, m + 1, dtype=np.float64) ** -s
    w /= w.sum()
    js = rng.choice(m, size=n, p=w)
    sites = rng.integers(0, k, size=n)
    return [StreamEvent(t, int(sites[t]), int(js[t])) for t in range(n)]


# -- simulation ------------------------------------------------------------


def params_provenance(params: GlobalParams, mode: str) -> dict[str, object]:
    """Fully resolved configuration; a trace is reproducible from this."""
    return {
        "mode": mode,
        "k": params.k,
        "m": params.m,
        "n": params.n,
        "p": params.p,
        "eps": params.eps,
        "tau": params.tau,
        "gamma": params.gamma,
        "b": params.b,
        "r": params.r,
        "c_fire": params.c_fire,
        "a": params.a,
        "i_max": params.i_max,
        "seed": params.seed,
        "literal_estimation": params.literal_estimation,
    }


def run_simulation(events: list[StreamEvent], params: GlobalParams,
                   mode: str = "threshold", stride: int = 1) -> list[TraceRow]:
    """Drive a stream through a single threshold instance or the full
    monitor ladder; returns the recorded trace rows."""
    rows, _ = simulate(events, params, mode=mode, stride=stride)
    return rows


def simulate(events: list[StreamEvent], params: GlobalParams,
             mode: str = "threshold",
             stride: int = 1) -> tuple[list[TraceRow], object]:
    """Like run_simulation, additionally returning the final protocol state
    (the ThresholdInstance or Monitor). Records one TraceRow per event whose
    position is a multiple of stride, plus the final event.

    true_fp is maintained incrementally in exact arithmetic for integer p;
    estimate is the instance's class-weighted sum (threshold mode) or the
    ladder bracket midpoint (monitor mode).
    """
    if mode not in ("threshold", "monitor"):
        raise ValueError(f"mode must be 'threshold' or 'monitor', got {mode}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    validate_stream(events, params.m, params.k, params.n)

    monitor: Optional[Monitor] = None
    inst: Optional[ThresholdInstance] = None
    if mode == "monitor":
        monitor = Monitor(params)
        msg_bits = monitor.message_bits
    else:
        inst = ThresholdInstance(params)
        msg_bits = params.message_bits()

    site_counts: list[dict[int, int]] = [dict() for _ in range(params.k)]
    agg: dict[int, int] = {}
    int_p = float(params.p).is_integer()
    true_fp: float | int = 0
    cum_messages = 0
    cum_bits = 0
    rows: list[TraceRow] = []

    last = len(events) - 1
    for pos, ev in enumerate(events):
        d = site_counts[ev.site]
        c_site = d.get(ev.j, 0) + 1
        d[ev.j] = c_site
        c_agg = agg.get(ev.j, 0) + 1
        agg[ev.j] = c_agg
        true_fp += fp_power(c_agg, params.p) - fp_power(c_agg - 1, params.p)

        ek = event_key(ev.site, ev.t)
        if monitor is not None:
            outcome = monitor.on_event(c_site, ev.j, ek)
            n_msgs = outcome.messages
            estimate = monitor.estimate()
            fired = monitor.fired_count()
        else:
            assert inst is not None
            if inst.terminated:
                n_msgs = 0
            else:
                emit = fanout(inst.rows, None, c_site, ev.j, ek)
                n_msgs = int(emit.size)
                z_of, l_of = inst.rows.z_of, inst.rows.l_of
                for f in emit.tolist():
                    inst.apply(ev.j, int(z_of[f]), int(l_of[f]))
            estimate = inst.estimate()
            fired = inst.out
        cum_messages += n_msgs
        cum_bits += n_msgs * msg_bits

        if pos % stride == 0 or pos == last:
            rows.append(
                TraceRow(ev.t, float(true_fp), float(estimate), cum_messages,
                         cum_bits, fired)
            )
    state: object = monitor if monitor is not None else inst
    return rows, state


def exact_fp_of_events(events: list[StreamEvent], p: float) -> float | int:
    """Independent recomputation of the final F_p of a stream."""
    agg: dict[int, int] = {}
    for ev in events:
        agg[ev.j] = agg.get(ev.j, 0) + 1
    if float(p).is_integer():
        return sum(c ** int(p) for c in agg.values())
    return math.fsum(float(c) ** p for c in agg.values())
