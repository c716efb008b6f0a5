"""Flow rows to 100x100x3 eight-bit images and back.

Format: 1 500 consecutive feature rows of one label make one image. Row r,
feature f becomes byte ``r * 20 + f`` of the image buffer; the buffer is
read as 100 rows of 100 RGB pixels, so each pixel holds three consecutive
feature values. A value v maps to ``rint(255 * clamp((v - lo) / (hi - lo)))``
where (lo, hi) come from the training rows, and to 0 when lo == hi.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np
from PIL import Image

from .errors import EmptyInput, MissingSpec, MixedLabels
from .features import FEATURE_NAMES, N_FEATURES, FeatureVector, Label, to_matrix

WIDTH = HEIGHT = 100
CHANNELS = 3
IMAGE_BYTES = WIDTH * HEIGHT * CHANNELS
ROWS_PER_IMAGE = IMAGE_BYTES // N_FEATURES  # 1500


@dataclass(frozen=True)
class NormalizationSpec:
    mins: tuple
    maxs: tuple

    def __post_init__(self):
        if len(self.mins) != N_FEATURES or len(self.maxs) != N_FEATURES:
            raise MissingSpec(f"spec must cover {N_FEATURES} features")
        if any(lo > hi for lo, hi in zip(self.mins, self.maxs)):
            raise ValueError("normalization min exceeds max")

    def arrays(self):
        return np.asarray(self.mins, dtype=np.float64), np.asarray(self.maxs, dtype=np.float64)

    def to_json(self) -> dict:
        return {"features": [{"name": n, "min": lo, "max": hi}
                             for n, lo, hi in zip(FEATURE_NAMES, self.mins, self.maxs)]}

    @classmethod
    def from_json(cls, doc: dict) -> "NormalizationSpec":
        by_name = {f["name"]: f for f in doc.get("features", [])}
        missing = [n for n in FEATURE_NAMES if n not in by_name]
        if missing:
            raise MissingSpec(f"spec lacks features {missing}")
        return cls(tuple(float(by_name[n]["min"]) for n in FEATURE_NAMES),
                   tuple(float(by_name[n]["max"]) for n in FEATURE_NAMES))

    def save(self, stream: IO[str]):
        json.dump(self.to_json(), stream, indent=2)
        stream.write("\n")

    @classmethod
    def load(cls, stream: IO[str]) -> "NormalizationSpec":
        return cls.from_json(json.load(stream))


@dataclass(frozen=True)
class FlowImage:
    pixels: bytes
    label: Label
    first_row: int = 0
    row_count: int = ROWS_PER_IMAGE

    def __post_init__(self):
        if len(self.pixels) != IMAGE_BYTES:
            raise ValueError(f"image needs {IMAGE_BYTES} bytes, got {len(self.pixels)}")

    def array(self) -> np.ndarray:
        """(100, 100, 3) uint8 view."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(HEIGHT, WIDTH, CHANNELS)

    @property
    def source_span(self) -> tuple[int, int]:
        return self.first_row, self.row_count


def learn_normalization(rows: Sequence[FeatureVector] | np.ndarray) -> NormalizationSpec:
    m = rows if isinstance(rows, np.ndarray) else to_matrix(rows)
    if m.shape[0] == 0:
        raise EmptyInput("cannot learn normalization from zero rows")
    return NormalizationSpec(tuple(float(v) for v in m.min(axis=0)),
                             tuple(float(v) for v in m.max(axis=0)))


def quantize(matrix: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    """Map an (n, 20) value matrix to uint8 bytes."""
    lo, hi = spec.arrays()
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    t = np.clip((matrix - lo) / safe, 0.0, 1.0)
    t = np.where(span > 0, t, 0.0)
    return np.rint(255.0 * t).astype(np.uint8)


def dequantize(codes: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    lo, hi = spec.arrays()
    t = codes.astype(np.float64) / 255.0
    # lo*(1-t) + hi*t hits both endpoints exactly.
    return lo * (1.0 - t) + hi * t


def encode(rows: Sequence[FeatureVector], spec: NormalizationSpec | None,
           first_row: int = 0) -> list[FlowImage]:
    """Encode label-homogeneous rows; a trailing partial image is discarded."""
    if spec is None:
        raise MissingSpec("encode needs a normalization spec")
    if not rows:
        return []
    label = rows[0].label
    if any(r.label != label for r in rows):
        raise MixedLabels("all rows of an encode call must share one label")
    n_images = len(rows) // ROWS_PER_IMAGE
    if n_images == 0:
        return []
    used = to_matrix(rows[:n_images * ROWS_PER_IMAGE])
    codes = quantize(used, spec).reshape(n_images, IMAGE_BYTES)
    return [FlowImage(codes[i].tobytes(), label, first_row + i * ROWS_PER_IMAGE)
            for i in range(n_images)]


def decode(image: FlowImage, spec: NormalizationSpec | None) -> list[FeatureVector]:
    if spec is None:
        raise MissingSpec("decode needs a normalization spec")
    codes = np.frombuffer(image.pixels, dtype=np.uint8).reshape(ROWS_PER_IMAGE, N_FEATURES)
    vals = dequantize(codes, spec)
    return [FeatureVector(*map(float, row), label=image.label) for row in vals]


def encode_by_label(rows: Sequence[FeatureVector], spec: NormalizationSpec) -> list[FlowImage]:
    """Split a mixed stream into per-label streams (order kept) and encode each.

    ``first_row`` of each image indexes the per-label stream.
    """
    images = []
    for label in (Label.BENIGN, Label.ANOMALY):
        stream = [r for r in rows if r.label == label]
        images.extend(encode(stream, spec))
    return images


# ---------------------------------------------------------------- files

MANIFEST_HEADER = ["path", "label", "first_row_index"]


def write_images(images: Sequence[FlowImage], out_dir: str, manifest_name: str = "manifest.csv") -> str:
    """Write ``<label>_<index>.png`` files plus a manifest; return the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    counters: dict[Label, int] = {}
    manifest = os.path.join(out_dir, manifest_name)
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for img in images:
            idx = counters.get(img.label, 0)
            counters[img.label] = idx + 1
            name = f"{img.label.value.lower()}_{idx:05d}.png"
            Image.fromarray(img.array()).save(os.path.join(out_dir, name), optimize=False)
            w.writerow([name, img.label.value, img.first_row])
    return manifest


def read_images(manifest: str) -> list[FlowImage]:
    base = os.path.dirname(manifest)
    out = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            with Image.open(os.path.join(base, row["path"])) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            if arr.shape != (HEIGHT, WIDTH, CHANNELS):
                raise ValueError(f"{row['path']}: expected 100x100 RGB, got {arr.shape}")
            out.append(FlowImage(arr.tobytes(), Label.parse(row["label"]), int(row["first_row_index"])))
    return out
