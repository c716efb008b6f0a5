"""Runs only when CICIDS2018_CSV points at a genuine CICIDS2018 day file.

    CICIDS2018_CSV=/data/Wednesday-14-02-2018_TrafficForML_CICFlowMeter.csv pytest tests/test_cicids_interop.py

CICIDS2018_MAX_ROWS (default 300 000) caps how many rows are read.
"""

import itertools
import os

import pytest

from flowids import cnn, evaluator
from flowids.features import Label, read_feature_csv
from flowids.packets import ReadStats
from flowids.pipeline import build_image_dataset

CICIDS_PATH = os.environ.get("CICIDS2018_CSV")
needs_data = pytest.mark.skipif(not CICIDS_PATH, reason="CICIDS2018_CSV not set")


def run_interop(path, max_rows=None, epochs=3):
    """Read, encode, train and evaluate; returns (rows read, stats, report)."""
    max_rows = max_rows or int(os.environ.get("CICIDS2018_MAX_ROWS", "300000"))
    stats = ReadStats()
    with open(path, newline="", encoding="utf-8", errors="replace") as fh:
        rows = list(itertools.islice(read_feature_csv(fh, stats), max_rows))
    config = cnn.TrainConfig(seed=0, epochs=epochs)
    ds = build_image_dataset(rows, config)
    result = cnn.train(ds.images, config)
    held = result.split.test or result.split.val
    images = [ds.images[i] for i in held]
    report = evaluator.evaluate(cnn.predict_scores(result.model, images), [im.label for im in images])
    return rows, stats, report


@needs_data
def test_reader_selects_twenty_columns_and_label():
    stats = ReadStats()
    with open(CICIDS_PATH, newline="", encoding="utf-8", errors="replace") as fh:
        rows = list(itertools.islice(read_feature_csv(fh, stats), 10000))
    assert rows
    assert all(len(r.values()) == 20 for r in rows)
    assert all(r.label in (Label.BENIGN, Label.ANOMALY) for r in rows)


@needs_data
def test_encode_train_evaluate_completes():
    rows, _, report = run_interop(CICIDS_PATH)
    assert report.n > 0
