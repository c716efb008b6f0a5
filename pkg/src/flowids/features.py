"""The 20-column flow feature row and its CSV format.

Column headers follow the CICIDS2018 spellings so that genuine day files can
be read back with the same code. CICIDS2018 has no total flow IAT column; the
reader derives it from ``Flow Duration`` (the two are equal by construction).
"""

from __future__ import annotations

import csv
import enum
import math
import operator
from dataclasses import dataclass, fields
from typing import IO, Iterable, Iterator

import numpy as np

from .packets import ReadStats


class Label(str, enum.Enum):
    BENIGN = "Benign"
    ANOMALY = "Anomaly"
    UNLABELED = "Unlabeled"

    @classmethod
    def parse(cls, text: str | None) -> "Label":
        t = (text or "").strip()
        if not t or t.lower() == "unlabeled":
            return cls.UNLABELED
        if t.lower() == "benign":
            return cls.BENIGN
        # CICIDS2018 names each attack; every non-benign label is an anomaly.
        return cls.ANOMALY


@dataclass(slots=True)
class FeatureVector:
    dst_port: float
    protocol: float
    flow_duration: float
    tot_fwd_pkts: float
    tot_bwd_pkts: float
    flow_pkts_per_s: float
    flow_iat_mean: float
    flow_iat_std: float
    flow_iat_max: float
    flow_iat_min: float
    flow_iat_total: float
    fwd_iat_mean: float
    fwd_iat_std: float
    fwd_iat_max: float
    fwd_iat_min: float
    bwd_iat_total: float
    bwd_iat_mean: float
    bwd_iat_std: float
    bwd_iat_max: float
    bwd_iat_min: float
    label: Label = Label.UNLABELED

    def values(self) -> tuple:
        return _values_of(self)

    def with_label(self, label: Label) -> "FeatureVector":
        return FeatureVector(*self.values(), label=label)


FEATURE_NAMES = tuple(f.name for f in fields(FeatureVector) if f.name != "label")
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 20
_values_of = operator.attrgetter(*FEATURE_NAMES)

CSV_COLUMNS = (
    "Dst Port", "Protocol", "Flow Duration", "Tot Fwd Pkts", "Tot Bwd Pkts", "Flow Pkts/s",
    "Flow IAT Mean", "Flow IAT Std", "Flow IAT Max", "Flow IAT Min", "Flow IAT Tot",
    "Fwd IAT Mean", "Fwd IAT Std", "Fwd IAT Max", "Fwd IAT Min",
    "Bwd IAT Tot", "Bwd IAT Mean", "Bwd IAT Std", "Bwd IAT Max", "Bwd IAT Min",
)
LABEL_COLUMN = "Label"

# Written without a fractional part; the rest use six decimals.
INTEGER_FEATURES = frozenset({
    "dst_port", "protocol", "flow_duration", "tot_fwd_pkts", "tot_bwd_pkts",
    "flow_iat_max", "flow_iat_min", "flow_iat_total", "fwd_iat_max", "fwd_iat_min",
    "bwd_iat_total", "bwd_iat_max", "bwd_iat_min",
})
_IS_INT = tuple(name in INTEGER_FEATURES for name in FEATURE_NAMES)

# CICIDS2017 spellings and a few whitespace variants seen in the wild.
_ALIASES = {
    "Destination Port": "Dst Port",
    "Total Fwd Packets": "Tot Fwd Pkts",
    "Total Backward Packets": "Tot Bwd Pkts",
    "Flow Packets/s": "Flow Pkts/s",
    "Fwd IAT Total": "Fwd IAT Tot",
    "Bwd IAT Total": "Bwd IAT Tot",
    "Flow IAT Total": "Flow IAT Tot",
}


def format_value(value: float, is_int: bool) -> str:
    if is_int:
        return str(int(round(value)))
    return f"{value:.6f}"


def write_feature_csv(rows: Iterable[FeatureVector], stream: IO[str]) -> int:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS + (LABEL_COLUMN,))
    n = 0
    for row in rows:
        vals = row.values()
        writer.writerow([format_value(v, i) for v, i in zip(vals, _IS_INT)] + [row.label.value])
        n += 1
    return n


def _canonical(name: str) -> str:
    name = name.strip()
    return _ALIASES.get(name, name)


def read_feature_csv(stream: IO[str], stats: ReadStats | None = None) -> Iterator[FeatureVector]:
    """Read our feature CSV or a CICIDS2017/2018 flow CSV.

    Extra columns are ignored. Repeated header lines (present in some
    CICIDS2018 day files) and rows with non-numeric or non-finite values are
    counted in ``stats`` and skipped.
    """
    stats = stats if stats is not None else ReadStats()
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        return
    canon = [_canonical(h) for h in header]
    index = {name: i for i, name in enumerate(canon)}
    missing = [c for c in CSV_COLUMNS if c not in index and c != "Flow IAT Tot"]
    if missing:
        raise ValueError(f"feature CSV lacks columns: {missing}")
    cols = [index.get(c) for c in CSV_COLUMNS]
    duration_col = index["Flow Duration"]
    label_col = index.get(LABEL_COLUMN)
    for raw in reader:
        if not raw:
            continue
        if [_canonical(x) for x in raw[:3]] == canon[:3]:
            stats.skip("repeated_header")
            continue
        try:
            vals = [float(raw[duration_col] if c is None else raw[c]) for c in cols]
        except (IndexError, ValueError):
            stats.skip("non_numeric")
            continue
        if not all(math.isfinite(v) for v in vals):
            stats.skip("non_finite")
            continue
        label = Label.parse(raw[label_col] if label_col is not None and label_col < len(raw) else None)
        stats.parsed += 1
        yield FeatureVector(*vals, label=label)


def to_matrix(rows: Iterable[FeatureVector]) -> np.ndarray:
    """Stack rows into an (n, 20) float64 array."""
    return np.array([r.values() for r in rows], dtype=np.float64).reshape(-1, N_FEATURES)
