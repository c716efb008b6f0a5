import json
import os

import numpy as np
import pytest

from flowids import sds_policy as sp
from flowids.errors import StoreUnavailable
from flowids.features import FeatureVector, Label
from flowids.pipeline import PipelineSettings, scripted_packets
from flowids.traffic_synth import BENIGN_DEFAULT
from flowids.weibull import score_windows


def row(port=80, proto=6, iat=1000.0):
    vals = [0.0] * 20
    vals[0], vals[1], vals[6] = float(port), float(proto), float(iat)
    return FeatureVector(*vals, label=Label.UNLABELED)


def det(evidence, port=80, lo=10.0, hi=20.0, action=sp.Action.ALERT):
    return sp.Detection(sp.Source.WEIBULL, evidence, port, 6, lo, hi, action)


@pytest.fixture
def store(tmp_path):
    return sp.PolicyStore(str(tmp_path / "policies.jsonl"), sp.SimClock(0))


def test_flagged_window_becomes_policy_with_its_band(store):
    rng = np.random.default_rng(0)
    rows = [row(80, 6, float(x)) for x in rng.integers(100, 900, 100)]
    scores = score_windows(rows, BENIGN_DEFAULT, 100)
    assert scores[0].flagged
    d = sp.detection_from_rows(sp.Source.WEIBULL, "w0", rows)
    rec = store.record_anomaly(d)
    iats = [r.flow_iat_mean for r in rows]
    assert (rec.dst_port, rec.protocol) == (80, 6)
    assert (rec.iat_low_us, rec.iat_high_us) == (min(iats), max(iats))


def test_record_is_idempotent(store):
    a = store.record_anomaly(det("x"))
    b = store.record_anomaly(det("x"))
    assert a == b
    assert len(store.policies()) == 1
    with open(store.path) as fh:
        assert len(fh.readlines()) == 1


def test_three_detections_three_versions(store):
    vnf = sp.VnfManager()
    for i in range(3):
        store.clock.advance_to(i * 1000)
        store.record_anomaly(det(f"d{i}", port=80 + i))
        sp.push_rules(store, vnf)
    policies, history = sp.replay(store.path)
    assert [p.seq for p in policies] == sorted(p.seq for p in policies)
    assert [h.version for h in history] == [1, 2, 3]
    assert [len(h.rules) for h in history] == [1, 2, 3]
    assert vnf.active.version == 3


def test_empty_store_pushes_version_one(store):
    rs = sp.push_rules(store)
    assert rs.version == 1 and rs.rules == []


def test_identical_match_tuples_share_one_rule(store):
    store.record_anomaly(det("a"))
    store.record_anomaly(det("b", action=sp.Action.BLOCK))
    rs = sp.push_rules(store)
    assert len(rs.rules) == 1
    assert rs.rules[0].action == sp.Action.BLOCK
    assert len(rs.rules[0].policy_ids) == 2


def test_rule_hits_match_linear_scan(store):
    store.record_anomaly(det("a", port=80, lo=0, hi=500))
    store.record_anomaly(det("b", port=22, lo=100, hi=200))
    rs = sp.push_rules(store)
    rng = np.random.default_rng(1)
    rows = [row(int(rng.choice([22, 80, 443])), 6, float(rng.integers(0, 1000))) for _ in range(500)]
    hits = sp.SimulatedIds(rs).apply(rows)
    for r in rs.rules:
        expect = sum(1 for x in rows if int(x.dst_port) == r.dst_port and r.iat_low_us <= x.flow_iat_mean <= r.iat_high_us)
        assert hits[r.rule_id] == expect


def test_band_must_be_ordered():
    with pytest.raises(ValueError):
        sp.PolicyRecord("p", 1, "t", sp.Source.CNN, 80, 6, 5.0, 1.0, sp.Action.ALERT, "e")


def _quiet(cycle, start, end):
    return []


def test_schedule_times_and_quiet_cycles(store):
    cfg = sp.ScheduleConfig(baseline=BENIGN_DEFAULT, store=store, packets_for=_quiet)
    log = sp.run_schedule(cfg, 600_000_000, 3)
    assert [e.sim_time_us for e in log] == [600_000_000, 1_200_000_000, 1_800_000_000]
    assert all(e.ruleset_version == 0 and e.new_policies == [] for e in log)


def _scripted_run(path):
    settings = PipelineSettings(seed=7, cycle_flows=300)
    store = sp.PolicyStore(path, sp.SimClock(0))
    cfg = sp.ScheduleConfig(baseline=BENIGN_DEFAULT, store=store, packets_for=scripted_packets(settings))
    return sp.run_schedule(cfg, 600_000_000, 3), store


def test_scripted_attack_first_flagged_in_attack_cycle(tmp_path):
    log, store = _scripted_run(str(tmp_path / "s.jsonl"))
    assert log[0].new_policies == []
    assert log[1].new_policies
    assert log[1].flagged_windows == log[1].windows
    versions = [e.ruleset_version for e in log]
    assert versions == sorted(versions) and versions[1] >= 1
    # no rule is ever dropped from a later version
    hist = store.history
    for a, b in zip(hist, hist[1:]):
        assert {r.rule_id for r in a.rules} <= {r.rule_id for r in b.rules}


def test_replay_is_deterministic(tmp_path):
    _scripted_run(str(tmp_path / "a.jsonl"))
    _scripted_run(str(tmp_path / "b.jsonl"))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    pa, ha = sp.replay(str(tmp_path / "a.jsonl"))
    reopened = sp.PolicyStore(str(tmp_path / "a.jsonl"))
    assert reopened.policies() == pa
    assert [h.to_json() for h in reopened.history] == [h.to_json() for h in ha]


def test_file_vnf_writes_ruleset(store, tmp_path):
    store.record_anomaly(det("a"))
    out = tmp_path / "ruleset.json"
    sp.push_rules(store, sp.FileVnfManager(str(out)))
    assert json.loads(out.read_text())["version"] == 1


def test_store_unavailable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    s = sp.PolicyStore(os.path.join(str(blocker), "sub", "p.jsonl"))
    with pytest.raises(StoreUnavailable):
        s.record_anomaly(det("x"))
