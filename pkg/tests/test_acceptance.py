"""Numbered acceptance criteria; a PASS/FAIL line per criterion is printed at the end of the run."""

import filecmp
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from flowids import cnn, evaluator, image_codec
from flowids import traffic_synth as ts
from flowids.features import Label
from flowids.flow_meter import extract_features
from flowids.weibull import fit_weibull, score_windows

from conftest import DESK_EPOCHS
from oracles import brute_counts, naive_features
from test_cicids_interop import CICIDS_PATH, run_interop
from test_cnn import gradient_check
from test_evaluator import reference_predictions


def _detail(request, text):
    request.node.acceptance_detail = text


@pytest.mark.acceptance(1, "metric arithmetic reproduces the reference table")
def test_1_table_arithmetic(request):
    t0 = time.perf_counter()
    r = evaluator.evaluate(*reference_predictions())
    elapsed = time.perf_counter() - t0
    got = [r.benign.precision, r.benign.recall, r.benign.f1,
           r.anomaly.precision, r.anomaly.recall, r.anomaly.f1,
           r.average.precision, r.average.recall, r.average.f1]
    want = [0.977, 1.0, 0.988, 1.0, 0.964, 0.982, 0.9885, 0.982, 0.985]
    worst = max(abs(g - w) for g, w in zip(got, want))
    _detail(request, f"max abs error {worst:.2e}, {elapsed * 1e3:.1f} ms")
    assert worst <= 5e-4
    assert elapsed < 1.0


@pytest.mark.slow
@pytest.mark.acceptance(2, "desk-scale CNN classification")
def test_2_desk_classification(request, desk_training):
    ds, result = desk_training["dataset"], desk_training["result"]
    test = [ds.images[i] for i in result.split.test]
    r = evaluator.evaluate(cnn.predict_scores(result.model, test), [im.label for im in test])
    _detail(request, f"{len(ds.images)} images, test n={len(test)}, F1 benign {r.benign.f1:.4f} "
                     f"anomaly {r.anomaly.f1:.4f}, {DESK_EPOCHS} epochs in {desk_training['train_s']:.0f} s")
    counts = {lab: sum(im.label == lab for im in ds.images) for lab in (Label.BENIGN, Label.ANOMALY)}
    assert len(ds.images) >= 1000
    assert counts[Label.BENIGN] / len(ds.images) == pytest.approx(0.7055, abs=0.02)
    assert r.benign.f1 >= 0.95 and r.anomaly.f1 >= 0.95
    assert desk_training["train_s"] <= 15 * 60


# Acceptance 3 setup: the flood share is the corpus anomaly share, not tuned to the result.
A3_WINDOW = 100
A3_WINDOWS = 200
A3_FLOOD_PER_WINDOW = 29  # corpus anomaly share of a 100-flow window


def _rows(flows):
    return [extract_features(sf.record) for sf in flows]


@pytest.mark.acceptance(3, "Weibull flood detection vs false alarms")
def test_3_weibull_detection(request):
    t0 = time.perf_counter()
    train = ts.gen_flows("Benign", 20000, seed=7)
    baseline = fit_weibull([r.flow_iat_mean / 1e6 for r in _rows(train)])
    null = _rows(ts.gen_flows("Benign", A3_WINDOW * A3_WINDOWS, seed=8, first_index=1_000_000))
    n_f = A3_FLOOD_PER_WINDOW
    n_b = A3_WINDOW - n_f
    flood = _rows(ts.gen_flows("flood", n_f * A3_WINDOWS, seed=9, first_index=2_000_000))
    benign = _rows(ts.gen_flows("Benign", n_b * A3_WINDOWS, seed=10, first_index=3_000_000))
    attack = []
    for i in range(A3_WINDOWS):
        attack += flood[i * n_f:(i + 1) * n_f] + benign[i * n_b:(i + 1) * n_b]
    null_s = score_windows(null, baseline, A3_WINDOW)
    attack_s = score_windows(attack, baseline, A3_WINDOW)
    assert len(null_s) == len(attack_s) == A3_WINDOWS
    fa = sum(s.flagged for s in null_s) / A3_WINDOWS
    det = sum(s.flagged for s in attack_s) / A3_WINDOWS
    elapsed = time.perf_counter() - t0
    _detail(request, f"detection {det:.1%}, false alarms {fa:.1%}, {elapsed:.1f} s")
    assert det >= 0.95
    assert fa <= 0.05
    assert elapsed < 30


@pytest.mark.acceptance(4, "Weibull MLE parameter recovery")
def test_4_mle_recovery(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    fit = fit_weibull(2.0 * rng.weibull(1.5, 100_000))
    expo = fit_weibull(rng.exponential(2.0, 100_000))
    elapsed = time.perf_counter() - t0
    _detail(request, f"k={fit.shape:.4f} lambda={fit.scale:.4f}; exponential k={expo.shape:.4f}; {elapsed:.2f} s")
    assert abs(fit.shape - 1.5) <= 0.05 and abs(fit.scale - 2.0) <= 0.05
    assert abs(expo.shape - 1.0) <= 0.02
    assert elapsed < 10


@pytest.mark.acceptance(5, "CNN gradients vs central finite differences")
def test_5_gradient_check(request):
    t0 = time.perf_counter()
    errs = gradient_check()
    elapsed = time.perf_counter() - t0
    _detail(request, f"worst relative error {max(errs.values()):.2e}, {elapsed:.1f} s")
    assert all(e < 1e-4 for e in errs.values()), errs
    assert elapsed < 60


@pytest.mark.acceptance(6, "oracle equivalence: counts, features, image round trip")
def test_6_oracle_equivalence(request):
    rng = np.random.default_rng(6)
    scores = rng.random(1000)
    truth = rng.random(1000) < 0.3
    r = evaluator.evaluate(scores, truth, with_curve=False)
    assert (r.tp, r.fp, r.tn, r.fn) == brute_counts(scores, truth, 0.5)

    flows = ts.gen_mixed_flows(70, 30, seed=6, span_s=60)
    assert len(flows) == 100
    for sf in flows:
        rec = sf.record
        got = list(extract_features(rec).values())
        assert got == naive_features(rec.fwd_timestamps, rec.bwd_timestamps, rec.key.dst_port, rec.key.protocol)

    rows = ts.corpus_rows(1500, 0, seed=6)
    spec = image_codec.learn_normalization(rows)
    back = image_codec.to_matrix(image_codec.decode(image_codec.encode(rows, spec)[0], spec))
    orig = image_codec.to_matrix(rows)
    lo, hi = spec.arrays()
    half_step = (hi - lo) / 510.0
    worst = float(np.max((np.abs(back - orig) - half_step) / np.where(hi > lo, hi - lo, 1.0)))
    _detail(request, f"1000 counts exact, 100 flows exact, worst round-trip excess {worst:.1e} of span")
    assert np.all(np.abs(back - orig) <= half_step * (1 + 1e-9) + 1e-9)


PIPELINE_FILES = ["features.csv", "baseline.json", "norm.json", "model.ckpt", "train_log.csv", "predictions.csv",
                  "report.json", "report.txt", "pr_curve.csv", "policies.jsonl", "ruleset.json", "run_log.csv"]


@pytest.mark.slow
@pytest.mark.acceptance(7, "pipeline determinism")
def test_7_pipeline_determinism(request, tmp_path):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        subprocess.run([sys.executable, "-m", "flowids", "pipeline", "--scenario", "flood", "--seed", "7",
                        "--out", str(out)], check=True, capture_output=True)
        outs.append(out)
    images = sorted(os.listdir(outs[0] / "images"))
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], PIPELINE_FILES, shallow=False)
    img_match, img_mismatch, img_errors = filecmp.cmpfiles(outs[0] / "images", outs[1] / "images", images,
                                                           shallow=False)
    _detail(request, f"{len(match)} artifacts + {len(img_match)} image files identical")
    assert not (mismatch or errors or img_mismatch or img_errors)
    assert len(images) > 1


@pytest.mark.acceptance(8, "CICIDS2018 interop (needs CICIDS2018_CSV)")
@pytest.mark.skipif(not CICIDS_PATH, reason="CICIDS2018_CSV not set")
def test_8_cicids_interop(request):
    rows, stats, report = run_interop(CICIDS_PATH)
    _detail(request, f"{len(rows)} rows read, {stats.skipped} skipped {stats.reasons}, "
                     f"held-out F1 benign {report.benign.f1} anomaly {report.anomaly.f1}")
    assert all(len(r.values()) == 20 for r in rows)
    assert report.n > 0
