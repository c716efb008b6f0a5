"""Binary IDS evaluation: counts, per-class P/R/F1, confusion matrix, PR curve.

Anomaly is the positive class. A metric whose denominator is zero is
reported as ``None`` ("undefined"), never as 0 or 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import EmptyInput, LengthMismatch, SingleClassTruth
from .features import Label


def _div(a, b):
    return a / b if b else None


def f1_score(p, r):
    if p is None or r is None or (p + r) == 0:
        return None
    return 2 * p * r / (p + r)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float | None
    recall: float | None
    f1: float | None


@dataclass
class EvalReport:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    anomaly: ClassMetrics
    benign: ClassMetrics
    average: ClassMetrics
    confusion: list  # rows: true Anomaly, true Benign; cols: predicted Anomaly, Benign (percent)
    pr_curve: list
    pr_auc: float | None

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn

    def to_json(self) -> dict:
        def cm(m):
            return {"precision": m.precision, "recall": m.recall, "f1": m.f1}
        return {
            "threshold": self.threshold,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "per_class": {"Benign": cm(self.benign), "Anomaly": cm(self.anomaly)},
            "average": cm(self.average),
            "confusion_matrix": {
                "rows": ["Anomaly", "Benign"], "cols": ["Anomaly", "Benign"],
                "percent": self.confusion,
            },
            "pr_auc": self.pr_auc,
        }


def _as_bool_truth(truth) -> np.ndarray:
    out = []
    for t in truth:
        if isinstance(t, Label):
            out.append(t == Label.ANOMALY)
        elif isinstance(t, str):
            out.append(Label.parse(t) == Label.ANOMALY)
        else:
            out.append(bool(t))
    return np.array(out, dtype=bool)


def _scores(predictions) -> np.ndarray:
    return np.array([getattr(p, "anomaly_score", p) for p in predictions], dtype=np.float64)


def _check(scores, truth):
    if len(scores) != len(truth):
        raise LengthMismatch(f"{len(scores)} predictions vs {len(truth)} labels")
    if len(scores) == 0:
        raise EmptyInput("nothing to evaluate")


def counts(pred_pos: np.ndarray, true_pos: np.ndarray) -> tuple[int, int, int, int]:
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    tn = int(np.sum(~pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    return tp, fp, tn, fn


def class_metrics(tp, fp, fn) -> ClassMetrics:
    p, r = _div(tp, tp + fp), _div(tp, tp + fn)
    return ClassMetrics(p, r, f1_score(p, r))


def _mean_defined(a, b):
    return None if a is None or b is None else (a + b) / 2


def metrics_from_counts(tp, fp, tn, fn):
    """(anomaly, benign, macro-average) metrics; benign swaps the roles."""
    anomaly = class_metrics(tp, fp, fn)
    benign = class_metrics(tn, fn, fp)
    average = ClassMetrics(_mean_defined(anomaly.precision, benign.precision),
                           _mean_defined(anomaly.recall, benign.recall),
                           _mean_defined(anomaly.f1, benign.f1))
    return anomaly, benign, average


def confusion_from_counts(tp, fp, tn, fn) -> list:
    """Row-normalised percentages; a row with no samples is undefined."""
    def row(a, b):
        s = a + b
        return [100.0 * a / s, 100.0 * b / s] if s else [None, None]
    return [row(tp, fn), row(fp, tn)]


def confusion_matrix(predictions, truth, threshold: float = 0.5) -> list:
    scores = _scores(predictions)
    _check(scores, truth)
    return confusion_from_counts(*counts(scores >= threshold, _as_bool_truth(truth)))


def pr_curve(scores, truth):
    """Sweep distinct scores descending; return ([(t, precision, recall)], auc).

    The area is the trapezoid rule over (recall, precision), anchored at
    (recall 0, precision 1).
    """
    s = _scores(scores)
    _check(s, truth)
    y = _as_bool_truth(truth)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise SingleClassTruth("PR curve needs positive and negative examples")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tp_cum = np.cumsum(y_sorted)
    fp_cum = np.cumsum(~y_sorted)
    # last index of each distinct score value
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1]
    points = []
    for i in last:
        tp, fp = int(tp_cum[i]), int(fp_cum[i])
        points.append((float(s_sorted[i]), tp / (tp + fp), tp / n_pos))
    rec = np.array([0.0] + [p[2] for p in points])
    prec = np.array([1.0] + [p[1] for p in points])
    auc = float(np.sum(np.diff(rec) * (prec[1:] + prec[:-1]) / 2))
    return points, auc


def curve_point_at(points, threshold: float):
    """The curve point whose predictions equal binarising at ``threshold``."""
    eligible = [p for p in points if p[0] >= threshold]
    return min(eligible, key=lambda p: p[0]) if eligible else None


def evaluate(predictions, truth, threshold: float = 0.5, with_curve: bool = True) -> EvalReport:
    scores = _scores(predictions)
    _check(scores, truth)
    y = _as_bool_truth(truth)
    tp, fp, tn, fn = counts(scores >= threshold, y)
    anomaly, benign, average = metrics_from_counts(tp, fp, tn, fn)
    curve, auc = [], None
    if with_curve and 0 < y.sum() < len(y):
        curve, auc = pr_curve(scores, y)
    return EvalReport(threshold, tp, fp, tn, fn, anomaly, benign, average,
                      confusion_from_counts(tp, fp, tn, fn), curve, auc)


# ---------------------------------------------------------------- output


def _fmt(v, digits=4):
    return "undefined" if v is None else f"{v:.{digits}f}"


def format_table(report: EvalReport) -> str:
    lines = [
        f"{'Traffic Type':<14}{'Precision':>11}{'Recall':>11}{'F1 Score':>11}",
    ]
    for name, m in (("Benign", report.benign), ("Anomaly", report.anomaly), ("Average", report.average)):
        lines.append(f"{name:<14}{_fmt(m.precision):>11}{_fmt(m.recall):>11}{_fmt(m.f1):>11}")
    lines.append("")
    lines.append(f"TP={report.tp} FP={report.fp} TN={report.tn} FN={report.fn} "
                 f"threshold={report.threshold:g} PR-AUC={_fmt(report.pr_auc)}")
    cm = report.confusion
    lines.append("Confusion (% of true class)   pred Anomaly   pred Benign")
    for name, row in zip(("true Anomaly", "true Benign"), cm):
        lines.append(f"{name:<30}{_fmt(row[0], 2):>12}{_fmt(row[1], 2):>14}")
    return "\n".join(lines) + "\n"


def write_report_json(report: EvalReport, stream: IO[str]):
    json.dump(report.to_json(), stream, indent=2, sort_keys=True)
    stream.write("\n")


def write_pr_curve_csv(points: Sequence, stream: IO[str]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall"])
    for t, p, r in points:
        w.writerow([f"{t:.9f}", f"{p:.9f}", f"{r:.9f}"])


PREDICTION_HEADER = ["id", "score", "label"]


def read_predictions_csv(stream: IO[str]):
    """Read (id, score, label) rows; returns (ids, scores, truth labels)."""
    ids, scores, truth = [], [], []
    for row in csv.DictReader(stream):
        ids.append(row["id"])
        scores.append(float(row["score"]))
        truth.append(Label.parse(row["label"]))
    return ids, scores, truth


def write_predictions_csv(ids, scores, truth, stream: IO[str]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(PREDICTION_HEADER)
    for i, s, t in zip(ids, scores, truth):
        w.writerow([i, f"{s:.9f}", t.value if isinstance(t, Label) else t])
