"""Seeded synthetic traffic: benign flows whose mean packet gap is Weibull
distributed, plus coarse statistical sketches of three attack families.

Flows are generated as :class:`FlowRecord` objects first; packet streams are
a rendering of those records, so metering the packets reproduces them (every
flow has a unique 5-tuple and gaps stay below the meter timeout).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import UnknownKind
from .features import FeatureVector, Label
from .flow_meter import DEFAULT_TIMEOUT_US, FlowKey, FlowRecord, extract_features
from .packets import TCP, UDP, PacketRecord, TcpFlags
from .weibull import WeibullParams

BENIGN_DEFAULT = WeibullParams(1.5, 2.0)
# 6 584 535 benign / 2 748 235 anomalous flows in the source corpus.
BENIGN_FRACTION = 6584535 / 9332770

_BENIGN_SERVICES = ((80, TCP), (443, TCP), (443, TCP), (443, TCP), (25, TCP),
                    (110, TCP), (143, TCP), (21, TCP), (53, UDP))
_MAX_GAP_US = int(0.9 * DEFAULT_TIMEOUT_US)


class AttackKind(str, enum.Enum):
    FLOOD = "Flood"
    BRUTE_FORCE = "BruteForce"
    INFILTRATION = "Infiltration"

    @classmethod
    def parse(cls, value) -> "AttackKind":
        if isinstance(value, cls):
            return value
        for k in cls:
            if str(value).lower() in (k.value.lower(), k.name.lower()):
                return k
        raise UnknownKind(f"unknown attack kind {value!r}", kind=str(value))


@dataclass
class SynthFlow:
    record: FlowRecord
    label: Label
    kind: str
    closing_flags: TcpFlags


@dataclass(frozen=True)
class _Profile:
    kind: str
    label: Label
    # Weibull law of the per-flow mean packet gap
    shape: float
    scale_s: float
    extra_pkts: float  # packets per flow = min_pkts + Poisson(extra_pkts)
    min_pkts: int
    flow_gap_s: float  # mean gap between flow starts
    closing: TcpFlags


def _profile(kind, params: WeibullParams = BENIGN_DEFAULT) -> _Profile:
    if kind == "Benign":
        return _Profile("Benign", Label.BENIGN, params.shape, params.scale, 4.0, 2, 0.05,
                        TcpFlags.FIN | TcpFlags.ACK)
    kind = AttackKind.parse(kind)
    k, lam = BENIGN_DEFAULT.shape, BENIGN_DEFAULT.scale
    if kind is AttackKind.FLOOD:
        return _Profile(kind.value, Label.ANOMALY, k, lam / 100.0, 2.0, 2, 0.001, TcpFlags.RST)
    if kind is AttackKind.BRUTE_FORCE:
        return _Profile(kind.value, Label.ANOMALY, k, lam / 20.0, 4.0, 4, 0.2,
                        TcpFlags.FIN | TcpFlags.ACK)
    return _Profile(kind.value, Label.ANOMALY, k, lam * 10.0, 15.0, 10, 30.0,
                    TcpFlags.FIN | TcpFlags.ACK)


def _endpoints(kind: str, i: int, rng: np.random.Generator, n: int):
    """(src, sport, dst, dport, proto) columns for flow indices i..i+n-1."""
    idx = np.arange(i, i + n)
    sports = rng.integers(32768, 61000, size=n)
    if kind == "Benign":
        svc = rng.integers(0, len(_BENIGN_SERVICES), size=n)
        srv = rng.integers(1, 21, size=n)
        return ([f"10.{(j >> 16) & 255}.{(j >> 8) & 255}.{j & 255}" for j in idx.tolist()],
                sports.tolist(),
                [f"192.168.10.{s}" for s in srv.tolist()],
                [_BENIGN_SERVICES[s][0] for s in svc.tolist()],
                [_BENIGN_SERVICES[s][1] for s in svc.tolist()])
    if kind == AttackKind.FLOOD.value:
        return ([f"172.16.{(j >> 8) & 255}.{j & 255}" for j in idx.tolist()], sports.tolist(),
                ["192.168.10.50"] * n, [80] * n, [TCP] * n)
    if kind == AttackKind.BRUTE_FORCE.value:
        # one attacker, distinct source ports; wrap to a new attacker address per 28 000 flows
        return ([f"172.17.{(j // 28000 >> 8) & 255}.{(j // 28000) & 255}" for j in idx.tolist()],
                [32768 + j % 28000 for j in idx.tolist()],
                ["192.168.10.60"] * n, [22] * n, [TCP] * n)
    return ([f"172.18.{(j >> 8) & 255}.{j & 255}" for j in idx.tolist()], sports.tolist(),
            ["192.168.10.70"] * n, [4444] * n, [TCP] * n)


def gen_flows(kind, n_flows: int, seed: int, params: WeibullParams = BENIGN_DEFAULT,
              start_us: int = 0, span_s: float | None = None, first_index: int = 0) -> list[SynthFlow]:
    """Generate flow records directly.

    Flow start times form a Poisson process at the profile's rate, or are
    uniform over ``span_s`` seconds when given. ``first_index`` offsets the
    address space so separate calls never share a 5-tuple.
    """
    if n_flows < 1:
        raise ValueError("n_flows must be at least 1")
    prof = _profile(kind if kind == "Benign" else AttackKind.parse(kind).value, params)
    rng = np.random.default_rng(seed)
    if span_s is None:
        starts = np.cumsum(rng.exponential(prof.flow_gap_s, size=n_flows)) * 1e6
    else:
        starts = np.sort(rng.uniform(0.0, span_s, size=n_flows)) * 1e6
    starts = start_us + np.floor(starts).astype(np.int64)
    n_pkts = prof.min_pkts + rng.poisson(prof.extra_pkts, size=n_flows)
    n_gaps = n_pkts - 1
    total_gaps = int(np.sum(n_gaps))
    # The flow's mean gap is the Weibull draw; Dirichlet(2) weights spread it over the gaps.
    mean_gap = prof.scale_s * rng.weibull(prof.shape, size=n_flows) * 1e6
    w = rng.gamma(2.0, size=total_gaps)
    bounds = np.r_[0, np.cumsum(n_gaps)[:-1]]
    w = w / np.repeat(np.add.reduceat(w, bounds), n_gaps)
    gaps = np.repeat(mean_gap * n_gaps, n_gaps) * w
    gaps = np.clip(np.rint(gaps), 1, _MAX_GAP_US).astype(np.int64)
    is_fwd = rng.random(size=total_gaps) < 0.5
    src, sport, dst, dport, proto = _endpoints(prof.kind, first_index, rng, n_flows)

    out = []
    offset = 0
    starts_l = starts.tolist()
    n_pkts_l = n_pkts.tolist()
    for f in range(n_flows):
        m = n_pkts_l[f] - 1
        ts = np.cumsum(gaps[offset:offset + m]) + starts_l[f]
        fwd_mask = is_fwd[offset:offset + m]
        offset += m
        fwd = [starts_l[f]] + ts[fwd_mask].tolist()
        bwd = ts[~fwd_mask].tolist()
        key = FlowKey(src[f], sport[f], dst[f], dport[f], proto[f])
        closing = prof.closing if proto[f] == TCP else TcpFlags.NONE
        out.append(SynthFlow(FlowRecord(key, fwd, bwd), prof.label, prof.kind, closing))
    return out


def render_packets(flows: Iterable[SynthFlow]) -> list[PacketRecord]:
    """Turn flow records into a timestamp-sorted packet stream."""
    pkts = []
    for sf in flows:
        k = sf.record.key
        tcp = k.protocol == TCP
        events = [(t, True) for t in sf.record.fwd_timestamps] + [(t, False) for t in sf.record.bwd_timestamps]
        events.sort()
        last = len(events) - 1
        for i, (t, fwd) in enumerate(events):
            if not tcp:
                flags = TcpFlags.NONE
            elif i == last:
                flags = sf.closing_flags
            elif i == 0:
                flags = TcpFlags.SYN
            else:
                flags = TcpFlags.ACK
            if fwd:
                pkts.append(PacketRecord(t, k.src_addr, k.dst_addr, k.src_port, k.dst_port, k.protocol, flags))
            else:
                pkts.append(PacketRecord(t, k.dst_addr, k.src_addr, k.dst_port, k.src_port, k.protocol, flags))
    pkts.sort(key=lambda p: p.timestamp)
    return pkts


@dataclass
class SynthTraffic:
    packets: list
    flows: list

    def truth(self) -> dict:
        """canonical flow key -> label"""
        return {sf.record.key.canonical(): sf.label for sf in self.flows}


def gen_benign(n_flows: int, params: WeibullParams = BENIGN_DEFAULT, seed: int = 0, **kw) -> SynthTraffic:
    flows = gen_flows("Benign", n_flows, seed, params, **kw)
    return SynthTraffic(render_packets(flows), flows)


def gen_attack(kind, n_flows: int, seed: int = 0, **kw) -> SynthTraffic:
    flows = gen_flows(AttackKind.parse(kind), n_flows, seed, **kw)
    return SynthTraffic(render_packets(flows), flows)


def merge(*parts: SynthTraffic) -> SynthTraffic:
    packets = sorted((p for part in parts for p in part.packets), key=lambda p: p.timestamp)
    return SynthTraffic(packets, [f for part in parts for f in part.flows])


def default_mix_counts(total_flows: int, benign_fraction: float = BENIGN_FRACTION) -> tuple[int, int]:
    n_benign = int(round(total_flows * benign_fraction))
    return n_benign, total_flows - n_benign


# anomaly share per attack kind in the default mix
DEFAULT_ATTACK_MIX = ((AttackKind.FLOOD, 0.5), (AttackKind.BRUTE_FORCE, 0.35), (AttackKind.INFILTRATION, 0.15))


def _split_counts(n: int, mix) -> list[int]:
    counts = [int(n * w) for _, w in mix]
    counts[0] += n - sum(counts)
    return counts


def gen_mixed_flows(n_benign: int, n_anomaly: int, seed: int, span_s: float = 3600.0,
                    attack_mix=DEFAULT_ATTACK_MIX) -> list[SynthFlow]:
    """Benign and attack flows over one capture span, ordered by flow end time."""
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(1 + len(attack_mix))]
    flows: list[SynthFlow] = []
    if n_benign:
        flows += gen_flows("Benign", n_benign, seeds[0], span_s=span_s)
    for (kind, _), n, s in zip(attack_mix, _split_counts(n_anomaly, attack_mix), seeds[1:]):
        if n:
            flows += gen_flows(kind, n, s, span_s=span_s)
    flows.sort(key=lambda sf: (sf.record.last_ts, sf.record.first_ts, sf.kind))
    return flows


def feature_rows(flows: Sequence[SynthFlow]) -> list[FeatureVector]:
    return [extract_features(sf.record, sf.label) for sf in flows]


def corpus_rows(n_benign: int, n_anomaly: int, seed: int, **kw) -> list[FeatureVector]:
    """Labelled feature rows without rendering packets (desk-scale corpora)."""
    return feature_rows(gen_mixed_flows(n_benign, n_anomaly, seed, **kw))


TRUTH_HEADER = ["src", "sport", "dst", "dport", "proto", "label", "kind"]


def write_truth_csv(flows: Iterable[SynthFlow], stream: IO[str]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TRUTH_HEADER)
    for sf in flows:
        k = sf.record.key
        w.writerow([k.src_addr, k.src_port, k.dst_addr, k.dst_port, k.protocol, sf.label.value, sf.kind])


def read_truth_csv(stream: IO[str]) -> dict:
    out = {}
    for row in csv.DictReader(stream):
        key = FlowKey(row["src"], int(row["sport"]), row["dst"], int(row["dport"]), int(row["proto"]))
        out[key.canonical()] = Label.parse(row["label"])
    return out
