"""Bidirectional flow metering and per-flow feature extraction.

A flow is keyed by its 5-tuple regardless of direction; the first packet
fixes which side is "forward". TCP flows close on the first FIN or RST seen
in either direction (the closing packet is included). Any flow, TCP or UDP,
idle for longer than the timeout is closed when a later packet arrives.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .errors import OutOfOrderTimestamp
from .features import FeatureVector, Label
from .packets import TCP, UDP, PacketRecord, TcpFlags

DEFAULT_TIMEOUT_US = 120_000_000


class TerminationCause(str, enum.Enum):
    TCP_FIN = "TcpFin"
    TCP_RST = "TcpRst"
    TIMEOUT = "Timeout"
    CAPTURE_END = "CaptureEnd"


@dataclass(frozen=True, slots=True)
class FlowKey:
    """5-tuple in forward orientation (as seen in the flow's first packet)."""

    src_addr: str
    src_port: int
    dst_addr: str
    dst_port: int
    protocol: int

    @classmethod
    def of(cls, p: PacketRecord) -> "FlowKey":
        return cls(p.src_addr, p.src_port, p.dst_addr, p.dst_port, p.protocol)

    def canonical(self) -> tuple:
        a = (str(self.src_addr), self.src_port)
        b = (str(self.dst_addr), self.dst_port)
        return (a, b, self.protocol) if a <= b else (b, a, self.protocol)

    def is_forward(self, p: PacketRecord) -> bool:
        return p.src_addr == self.src_addr and p.src_port == self.src_port


def canonical_key(p: PacketRecord) -> tuple:
    return FlowKey.of(p).canonical()


@dataclass(slots=True)
class FlowRecord:
    key: FlowKey
    fwd_timestamps: list = field(default_factory=list)
    bwd_timestamps: list = field(default_factory=list)
    termination_cause: TerminationCause | None = None

    @property
    def first_ts(self) -> int:
        if self.bwd_timestamps:
            return min(self.fwd_timestamps[0], self.bwd_timestamps[0])
        return self.fwd_timestamps[0]

    @property
    def last_ts(self) -> int:
        if self.bwd_timestamps:
            return max(self.fwd_timestamps[-1], self.bwd_timestamps[-1])
        return self.fwd_timestamps[-1]

    @property
    def n_packets(self) -> int:
        return len(self.fwd_timestamps) + len(self.bwd_timestamps)


class FlowTable:
    """Open flows for one packet stream. Single writer."""

    def __init__(self, timeout_us: int = DEFAULT_TIMEOUT_US):
        if timeout_us <= 0:
            raise ValueError("timeout must be positive")
        self.timeout_us = timeout_us
        # canonical key -> FlowRecord, ordered by last activity
        self.open: OrderedDict[tuple, FlowRecord] = OrderedDict()
        self.last_seen: int | None = None
        self.skipped_protocol = 0
        self.packets_metered = 0

    def __len__(self):
        return len(self.open)


def _expire(table: FlowTable, now: int) -> list[FlowRecord]:
    out = []
    while table.open:
        ckey, flow = next(iter(table.open.items()))
        if now - flow.last_ts <= table.timeout_us:
            break
        del table.open[ckey]
        flow.termination_cause = TerminationCause.TIMEOUT
        out.append(flow)
    return out


def ingest(packet: PacketRecord, table: FlowTable) -> list[FlowRecord]:
    """Feed one packet; return the flows it terminated (possibly none).

    Raises OutOfOrderTimestamp if ``packet`` is older than the previous one.
    Non-TCP/UDP packets are counted in ``table.skipped_protocol`` and ignored.
    """
    ts = packet.timestamp
    if table.last_seen is not None and ts < table.last_seen:
        raise OutOfOrderTimestamp(
            f"packet at {ts} us after {table.last_seen} us", timestamp=ts, previous=table.last_seen)
    table.last_seen = ts
    if packet.protocol not in (TCP, UDP):
        table.skipped_protocol += 1
        return []

    done = _expire(table, ts)
    ckey = canonical_key(packet)
    flow = table.open.get(ckey)
    if flow is None:
        flow = FlowRecord(FlowKey.of(packet))
        table.open[ckey] = flow
    else:
        table.open.move_to_end(ckey)
    if flow.key.is_forward(packet):
        flow.fwd_timestamps.append(ts)
    else:
        flow.bwd_timestamps.append(ts)
    table.packets_metered += 1

    if packet.protocol == TCP:
        if packet.tcp_flags & TcpFlags.RST:
            cause = TerminationCause.TCP_RST
        elif packet.tcp_flags & TcpFlags.FIN:
            cause = TerminationCause.TCP_FIN
        else:
            cause = None
        if cause is not None:
            del table.open[ckey]
            flow.termination_cause = cause
            done.append(flow)
    return done


def expire(table: FlowTable, now: int) -> list[FlowRecord]:
    """Close flows idle longer than the timeout as of ``now`` without a packet."""
    if table.last_seen is not None and now < table.last_seen:
        raise OutOfOrderTimestamp(f"clock {now} us before {table.last_seen} us")
    table.last_seen = now
    return _expire(table, now)


def finalize(table: FlowTable) -> list[FlowRecord]:
    """Emit every open flow with cause CaptureEnd and empty the table."""
    out = list(table.open.values())
    for flow in out:
        flow.termination_cause = TerminationCause.CAPTURE_END
    table.open.clear()
    return out


def meter(packets: Iterable[PacketRecord], timeout_us: int = DEFAULT_TIMEOUT_US,
          table: FlowTable | None = None) -> list[FlowRecord]:
    """Meter a whole packet sequence, finalizing at the end."""
    table = table if table is not None else FlowTable(timeout_us)
    flows = []
    for p in packets:
        flows.extend(ingest(p, table))
    flows.extend(finalize(table))
    return flows


# ---------------------------------------------------------------- features


def _iat_stats(ts: list) -> tuple:
    """(total, mean, std, max, min) of successive differences of integer timestamps.

    Sums are exact integers; mean and the sample variance are each one correctly
    rounded int/int division, so results do not depend on summation order.
    """
    n = len(ts) - 1
    if n < 1:
        return 0, 0.0, 0.0, 0, 0
    iats = [b - a for a, b in zip(ts, ts[1:])]
    total = ts[-1] - ts[0]
    mean = total / n
    if n < 2:
        std = 0.0
    else:
        sq = sum(d * d for d in iats)
        std = math.sqrt((n * sq - total * total) / (n * (n - 1)))
    return total, mean, std, max(iats), min(iats)


def _merge(a: list, b: list) -> list:
    if not b:
        return a
    return sorted(a + b)


def extract_features(flow: FlowRecord, label: Label = Label.UNLABELED) -> FeatureVector:
    fwd, bwd = flow.fwd_timestamps, flow.bwd_timestamps
    merged = _merge(fwd, bwd)
    n_pkts = len(merged)
    duration = merged[-1] - merged[0]
    pkts_per_s = (n_pkts * 1_000_000) / duration if duration > 0 else 0.0
    f_tot, f_mean, f_std, f_max, f_min = _iat_stats(merged)
    _, fw_mean, fw_std, fw_max, fw_min = _iat_stats(fwd)
    bw_tot, bw_mean, bw_std, bw_max, bw_min = _iat_stats(bwd)
    return FeatureVector(
        float(flow.key.dst_port), float(flow.key.protocol), float(duration),
        float(len(fwd)), float(len(bwd)), pkts_per_s,
        f_mean, f_std, float(f_max), float(f_min), float(f_tot),
        fw_mean, fw_std, float(fw_max), float(fw_min),
        float(bw_tot), bw_mean, bw_std, float(bw_max), float(bw_min),
        label=label,
    )


# ---------------------------------------------------------------- flow CSV

FLOW_CSV_HEADER = ["src", "sport", "dst", "dport", "proto", "cause", "label", "fwd_ts", "bwd_ts"]


def write_flow_csv(flows: Iterable[tuple[FlowRecord, Label]], stream: IO[str]) -> int:
    """One row per flow; per-direction timestamps are space-separated microseconds."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(FLOW_CSV_HEADER)
    n = 0
    for flow, label in flows:
        k = flow.key
        cause = flow.termination_cause.value if flow.termination_cause else ""
        w.writerow([k.src_addr, k.src_port, k.dst_addr, k.dst_port, k.protocol, cause, label.value,
                    " ".join(map(str, flow.fwd_timestamps)), " ".join(map(str, flow.bwd_timestamps))])
        n += 1
    return n


def read_flow_csv(stream: IO[str]) -> Iterator[tuple[FlowRecord, Label]]:
    for row in csv.DictReader(stream):
        key = FlowKey(row["src"], int(row["sport"]), row["dst"], int(row["dport"]), int(row["proto"]))
        fwd = [int(t) for t in row["fwd_ts"].split()]
        if not fwd:
            raise ValueError(f"flow {key} has no forward packets")
        cause = TerminationCause(row["cause"]) if row.get("cause") else None
        yield FlowRecord(key, fwd, [int(t) for t in row["bwd_ts"].split()], cause), Label.parse(row["label"])
