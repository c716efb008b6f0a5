"""Simulated software-defined-security loop.

Detections become policy records in an append-only JSON-lines store; a rule
push turns the stored policies into a versioned IDS rule set handed to a
(file-backed) VNF manager; ``run_schedule`` drives meter -> features ->
detect -> record -> push cycles on a simulated clock.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import IO, Callable, Iterable, Sequence

from .errors import StoreUnavailable
from .features import FeatureVector, Label
from .flow_meter import DEFAULT_TIMEOUT_US, FlowTable, expire, extract_features, finalize, ingest
from .weibull import WeibullParams, score_windows, window_slices


class Source(str, enum.Enum):
    CNN = "CnnDetector"
    WEIBULL = "WeibullDetector"


class Action(str, enum.Enum):
    ALERT = "Alert"
    BLOCK = "Block"


def iso_time(us: int) -> str:
    return datetime.fromtimestamp(us / 1e6, tz=timezone.utc).isoformat().replace("+00:00", "Z")


class SimClock:
    """Injected clock in microseconds."""

    def __init__(self, start_us: int = 0):
        self.now_us = start_us

    def now(self) -> int:
        return self.now_us

    def advance_to(self, us: int):
        if us < self.now_us:
            raise ValueError("simulated clock cannot go backwards")
        self.now_us = us


@dataclass(frozen=True)
class Detection:
    source: Source
    evidence: str
    dst_port: int
    protocol: int
    iat_low_us: float
    iat_high_us: float
    action: Action = Action.ALERT


def _mode(values):
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def summarize_rows(rows: Sequence[FeatureVector]) -> tuple[int, int, float, float]:
    """(dst_port, protocol, iat_low, iat_high): modal port/protocol, observed mean-IAT range."""
    iats = [r.flow_iat_mean for r in rows]
    return (int(_mode(int(r.dst_port) for r in rows)), int(_mode(int(r.protocol) for r in rows)),
            float(min(iats)), float(max(iats)))


def detection_from_rows(source: Source, evidence: str, rows: Sequence[FeatureVector],
                        action: Action = Action.ALERT) -> Detection:
    port, proto, lo, hi = summarize_rows(rows)
    return Detection(Source(source), evidence, port, proto, lo, hi, Action(action))


@dataclass(frozen=True)
class PolicyRecord:
    policy_id: str
    seq: int
    created_at: str
    source: Source
    dst_port: int
    protocol: int
    iat_low_us: float
    iat_high_us: float
    action: Action
    evidence: str

    def __post_init__(self):
        if self.iat_low_us > self.iat_high_us:
            raise ValueError("IAT band low exceeds high")

    @property
    def match(self) -> tuple:
        return (self.dst_port, self.protocol, self.iat_low_us, self.iat_high_us)

    def to_json(self) -> dict:
        d = asdict(self)
        d["source"] = self.source.value
        d["action"] = self.action.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PolicyRecord":
        return cls(d["policy_id"], int(d["seq"]), d["created_at"], Source(d["source"]),
                   int(d["dst_port"]), int(d["protocol"]), float(d["iat_low_us"]),
                   float(d["iat_high_us"]), Action(d["action"]), d["evidence"])


def policy_id_for(source: Source, evidence: str) -> str:
    return hashlib.sha256(f"{Source(source).value}|{evidence}".encode()).hexdigest()[:16]


@dataclass(frozen=True)
class IdsRule:
    rule_id: str
    dst_port: int
    protocol: int
    iat_low_us: float
    iat_high_us: float
    action: Action
    policy_ids: tuple

    def matches(self, row: FeatureVector) -> bool:
        return (int(row.dst_port) == self.dst_port and int(row.protocol) == self.protocol
                and self.iat_low_us <= row.flow_iat_mean <= self.iat_high_us)

    def to_json(self) -> dict:
        d = asdict(self)
        d["action"] = self.action.value
        d["policy_ids"] = list(self.policy_ids)
        return d


@dataclass
class IdsRuleSet:
    version: int
    rules: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"version": self.version, "rules": [r.to_json() for r in self.rules]}

    @classmethod
    def from_json(cls, d: dict) -> "IdsRuleSet":
        rules = [IdsRule(r["rule_id"], int(r["dst_port"]), int(r["protocol"]), float(r["iat_low_us"]),
                         float(r["iat_high_us"]), Action(r["action"]), tuple(r["policy_ids"]))
                 for r in d["rules"]]
        return cls(int(d["version"]), rules)


def build_rules(policies: Iterable[PolicyRecord]) -> list[IdsRule]:
    """One rule per distinct match tuple, in order of first appearance. Block beats Alert."""
    grouped: dict[tuple, list[PolicyRecord]] = {}
    for p in policies:
        grouped.setdefault(p.match, []).append(p)
    rules = []
    for match, ps in grouped.items():
        action = Action.BLOCK if any(p.action == Action.BLOCK for p in ps) else Action.ALERT
        rid = hashlib.sha256(json.dumps(list(match)).encode()).hexdigest()[:12]
        rules.append(IdsRule(rid, match[0], match[1], match[2], match[3], action,
                             tuple(p.policy_id for p in ps)))
    return rules


class PolicyStore:
    """Append-only JSON-lines log of policy and push events. Single writer."""

    def __init__(self, path: str, clock: SimClock | None = None):
        self.path = path
        self.clock = clock or SimClock()
        self._policies: dict[str, PolicyRecord] = {}
        self._history: list[IdsRuleSet] = []
        self._seq = 0
        if os.path.exists(path):
            self._replay()

    def _events(self):
        try:
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        yield json.loads(line)
        except OSError as exc:
            raise StoreUnavailable(f"cannot read policy store {self.path}: {exc}") from exc

    def _replay(self):
        for ev in self._events():
            self._seq = max(self._seq, int(ev["seq"]))
            if ev["event"] == "policy":
                rec = PolicyRecord.from_json(ev["policy"])
                self._policies[rec.policy_id] = rec
            elif ev["event"] == "push":
                self._history.append(IdsRuleSet.from_json(ev["ruleset"]))

    def _append(self, event: dict):
        try:
            d = os.path.dirname(self.path)
            if d:
                os.makedirs(d, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreUnavailable(f"cannot write policy store {self.path}: {exc}") from exc

    def record_anomaly(self, det: Detection) -> PolicyRecord:
        """Store a policy for ``det``; recording the same evidence again is a no-op."""
        pid = policy_id_for(det.source, det.evidence)
        if pid in self._policies:
            return self._policies[pid]
        rec = PolicyRecord(pid, self._seq + 1, iso_time(self.clock.now()), Source(det.source),
                           int(det.dst_port), int(det.protocol), float(det.iat_low_us),
                           float(det.iat_high_us), Action(det.action), det.evidence)
        self._append({"event": "policy", "seq": rec.seq, "policy": rec.to_json()})
        self._seq = rec.seq
        self._policies[pid] = rec
        return rec

    def policies(self) -> list[PolicyRecord]:
        return sorted(self._policies.values(), key=lambda p: p.seq)

    @property
    def history(self) -> list[IdsRuleSet]:
        return list(self._history)

    @property
    def current_version(self) -> int:
        return self._history[-1].version if self._history else 0

    def _log_push(self, ruleset: IdsRuleSet):
        self._seq += 1
        self._append({"event": "push", "seq": self._seq, "at": iso_time(self.clock.now()),
                      "ruleset": ruleset.to_json()})
        self._history.append(ruleset)


def replay(path: str) -> tuple[list[PolicyRecord], list[IdsRuleSet]]:
    """Rebuild policies and the rule-set version history from a store log."""
    store = PolicyStore(path)
    return store.policies(), store.history


class VnfManager:
    """In-process stand-in for the VNF manager; keeps the active rule set."""

    def __init__(self):
        self.active: IdsRuleSet | None = None

    def apply(self, ruleset: IdsRuleSet):
        self.active = ruleset


class FileVnfManager(VnfManager):
    """Writes each applied rule set to a JSON file."""

    def __init__(self, path: str):
        super().__init__()
        self.path = path

    def apply(self, ruleset: IdsRuleSet):
        super().apply(ruleset)
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(ruleset.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def push_rules(store: PolicyStore, vnf: VnfManager | None = None) -> IdsRuleSet:
    """Build the next rule-set version from every stored policy and hand it to ``vnf``."""
    ruleset = IdsRuleSet(store.current_version + 1, build_rules(store.policies()))
    store._log_push(ruleset)
    if vnf is not None:
        vnf.apply(ruleset)
    return ruleset


class SimulatedIds:
    def __init__(self, ruleset: IdsRuleSet | None):
        self.ruleset = ruleset or IdsRuleSet(0, [])

    def apply(self, rows: Iterable[FeatureVector]) -> dict:
        """Per-rule hit counts over a flow stream (a flow may hit several rules)."""
        hits = {r.rule_id: 0 for r in self.ruleset.rules}
        for row in rows:
            for r in self.ruleset.rules:
                if r.matches(row):
                    hits[r.rule_id] += 1
        return hits


# ---------------------------------------------------------------- schedule


@dataclass
class ScheduleConfig:
    """What one scheduled run needs. ``packets_for(cycle, start_us, end_us)`` supplies traffic."""

    baseline: WeibullParams
    store: PolicyStore
    packets_for: Callable
    window: int = 100
    threshold: float | None = None
    model: object = None  # CnnModel
    norm: object = None  # NormalizationSpec
    cnn_threshold: float = 0.5
    timeout_us: int = DEFAULT_TIMEOUT_US
    vnf: VnfManager | None = None
    start_us: int = 0


@dataclass
class CycleReport:
    cycle: int
    sim_time_us: int
    packets: int
    flows: int
    windows: int
    flagged_windows: int
    images: int
    flagged_images: int
    new_policies: list
    total_policies: int
    ruleset_version: int
    rule_hits: dict


def _detect(rows, config: ScheduleConfig, cycle: int) -> list[Detection]:
    dets = []
    scores = score_windows(rows, config.baseline, config.window, config.threshold)
    for s, sl in zip(scores, window_slices(len(rows), config.window)):
        if s.flagged:
            dets.append(detection_from_rows(Source.WEIBULL, f"cycle{cycle}:window{s.window_id}", rows[sl]))
    return dets, scores


def _detect_cnn(rows, config: ScheduleConfig, cycle: int):
    if config.model is None or config.norm is None:
        return [], 0
    from .cnn import predict_scores
    from .image_codec import ROWS_PER_IMAGE, encode

    unl = [r.with_label(Label.UNLABELED) for r in rows]
    images = encode(unl, config.norm)
    dets = []
    if images:
        for i, s in enumerate(predict_scores(config.model, images)):
            if s >= config.cnn_threshold:
                span = rows[i * ROWS_PER_IMAGE:(i + 1) * ROWS_PER_IMAGE]
                dets.append(detection_from_rows(Source.CNN, f"cycle{cycle}:image{i}", span))
    return dets, len(images)


def run_schedule(config: ScheduleConfig, interval_us: int, n_cycles: int,
                 clock: SimClock | None = None) -> list[CycleReport]:
    """Run ``n_cycles`` detection cycles of ``interval_us`` simulated time each."""
    if interval_us <= 0 or n_cycles < 1:
        raise ValueError("interval and cycle count must be positive")
    clock = clock or config.store.clock
    table = FlowTable(config.timeout_us)
    ids = SimulatedIds(config.store.history[-1] if config.store.history else None)
    log = []
    for cycle in range(1, n_cycles + 1):
        start = config.start_us + (cycle - 1) * interval_us
        end = start + interval_us
        packets = config.packets_for(cycle, start, end)
        flows = []
        for p in packets:
            flows.extend(ingest(p, table))
        flows.extend(finalize(table) if cycle == n_cycles else expire(table, end))
        clock.advance_to(end)
        # arrival order; completion order over-represents short flows early in a cycle
        flows.sort(key=lambda f: (f.first_ts, f.key))
        rows = [extract_features(f) for f in flows]

        dets, scores = _detect(rows, config, cycle)
        cnn_dets, n_images = _detect_cnn(rows, config, cycle)
        before = {p.policy_id for p in config.store.policies()}
        new = []
        for d in dets + cnn_dets:
            rec = config.store.record_anomaly(d)
            if rec.policy_id not in before and rec.policy_id not in new:
                new.append(rec.policy_id)
        if new:
            ids = SimulatedIds(push_rules(config.store, config.vnf))
        log.append(CycleReport(
            cycle, end, len(packets), len(rows), len(scores), sum(s.flagged for s in scores),
            n_images, len(cnn_dets), new, len(config.store.policies()),
            config.store.current_version, ids.apply(rows)))
    return log


RUN_LOG_HEADER = ["cycle", "sim_time", "packets", "flows", "windows", "flagged_windows", "images",
                  "flagged_images", "new_policies", "total_policies", "ruleset_version", "rule_hits"]


def write_run_log(log: Iterable[CycleReport], stream: IO[str]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RUN_LOG_HEADER)
    for e in log:
        w.writerow([e.cycle, iso_time(e.sim_time_us), e.packets, e.flows, e.windows, e.flagged_windows,
                    e.images, e.flagged_images, ";".join(e.new_policies), e.total_policies,
                    e.ruleset_version, ";".join(f"{k}:{v}" for k, v in sorted(e.rule_hits.items()))])
