"""Regenerate the frozen test fixtures in this directory.

    python3 tests/data/make_fixtures.py

The golden evaluation report is produced by the brute-force oracle, never by
the package under test.
"""

import csv
import json
import os
import sys

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.dirname(HERE))

from oracles import brute_report  # noqa: E402

# Column layout of a CICIDS2018 day file (subset of the 80 columns, original order and spelling).
CICIDS_HEADER = [
    "Dst Port", "Protocol", "Timestamp", "Flow Duration", "Tot Fwd Pkts", "Tot Bwd Pkts",
    "TotLen Fwd Pkts", "TotLen Bwd Pkts", "Fwd Pkt Len Max", "Flow Byts/s", "Flow Pkts/s",
    "Flow IAT Mean", "Flow IAT Std", "Flow IAT Max", "Flow IAT Min", "Fwd IAT Tot", "Fwd IAT Mean",
    "Fwd IAT Std", "Fwd IAT Max", "Fwd IAT Min", "Bwd IAT Tot", "Bwd IAT Mean", "Bwd IAT Std",
    "Bwd IAT Max", "Bwd IAT Min", "Fwd PSH Flags", "Init Fwd Win Byts", "Idle Min", "Label",
]


def make_predictions(path, rng):
    n = 80
    truth = rng.random(n) < 0.35
    scores = np.clip(np.where(truth, rng.normal(0.7, 0.2, n), rng.normal(0.3, 0.2, n)), 0, 1)
    scores = np.round(scores, 2)  # coarse grid gives tied scores on purpose
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score", "label"])
        for i, (s, t) in enumerate(zip(scores, truth)):
            w.writerow([f"img{i:03d}", f"{s:.2f}", "Anomaly" if t else "Benign"])
    return [float(f"{s:.2f}") for s in scores], [bool(t) for t in truth]


def make_cicids_sample(path, rng):
    rows = []
    for i in range(3000):
        attack = rng.random() < 0.3
        dur = int(rng.integers(0, 120_000_000))
        fwd, bwd = int(rng.integers(1, 40)), int(rng.integers(0, 40))
        iat = rng.exponential(50_000 if attack else 2_000_000, size=4)
        row = {
            "Dst Port": int(rng.choice([80, 443, 22, 21, 53, 3389])), "Protocol": int(rng.choice([6, 17])),
            "Timestamp": f"14/02/2018 {8 + i // 600:02d}:{(i // 10) % 60:02d}:{i % 60:02d}",
            "Flow Duration": dur, "Tot Fwd Pkts": fwd, "Tot Bwd Pkts": bwd,
            "TotLen Fwd Pkts": int(rng.integers(0, 5000)), "TotLen Bwd Pkts": int(rng.integers(0, 5000)),
            "Fwd Pkt Len Max": int(rng.integers(0, 1500)),
            "Flow Byts/s": f"{rng.random() * 1e5:.6f}",
            "Flow Pkts/s": f"{(fwd + bwd) / max(dur, 1) * 1e6:.6f}",
            "Flow IAT Mean": f"{iat[0]:.6f}", "Flow IAT Std": f"{iat[1]:.6f}",
            "Flow IAT Max": int(iat[0] + iat[1]), "Flow IAT Min": int(iat[0] / 3),
            "Fwd IAT Tot": int(iat[2] * fwd), "Fwd IAT Mean": f"{iat[2]:.6f}", "Fwd IAT Std": f"{iat[3]:.6f}",
            "Fwd IAT Max": int(iat[2] * 2), "Fwd IAT Min": int(iat[2] / 2),
            "Bwd IAT Tot": int(iat[3] * bwd), "Bwd IAT Mean": f"{iat[3]:.6f}", "Bwd IAT Std": f"{iat[1]:.6f}",
            "Bwd IAT Max": int(iat[3] * 2), "Bwd IAT Min": int(iat[3] / 2),
            "Fwd PSH Flags": int(rng.integers(0, 2)), "Init Fwd Win Byts": int(rng.integers(-1, 65535)),
            "Idle Min": int(rng.integers(0, 10 ** 7)),
            "Label": str(rng.choice(["DDoS attacks-LOIC-HTTP", "FTP-BruteForce"])) if attack else "Benign",
        }
        rows.append(row)
    # quirks seen in the real day files
    rows[100]["Flow Byts/s"] = "Infinity"
    rows[101]["Flow Pkts/s"] = "Infinity"
    rows[102]["Flow IAT Mean"] = "NaN"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, CICIDS_HEADER, lineterminator="\n")
        w.writeheader()
        for i, row in enumerate(rows):
            if i == 1500:
                w.writeheader()
            w.writerow(row)


def main():
    rng = np.random.default_rng(20180214)
    scores, truth = make_predictions(os.path.join(HERE, "predictions_fixture.csv"), rng)
    with open(os.path.join(HERE, "golden_report.json"), "w") as fh:
        json.dump(brute_report(scores, truth, 0.5), fh, indent=2, sort_keys=True)
        fh.write("\n")
    make_cicids_sample(os.path.join(HERE, "cicids2018_schema_sample.csv"), rng)


if __name__ == "__main__":
    main()
