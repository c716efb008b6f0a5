"""Small fixed convolutional classifier for flow images, trained from scratch.

Architecture (NHWC, 3x3 convolutions with zero padding 1):

    conv 3->16, ReLU, maxpool 2x2
    conv 16->32, ReLU, maxpool 2x2
    global average pool
    dense 32->2, softmax        (class 1 = Anomaly)
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import IO, Sequence

import numpy as np

from . import kernels
from .errors import CheckpointError, ShapeMismatch, SingleClassDataset
from .features import Label
from .image_codec import CHANNELS, HEIGHT, WIDTH, FlowImage

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")
CHECKPOINT_MAGIC = b"FLOWCNN\x00"
CHECKPOINT_VERSION = 1


def architecture(in_channels: int = CHANNELS, c1: int = 16, c2: int = 32, n_classes: int = 2) -> dict:
    return {
        "layers": [
            {"type": "conv3x3", "in": in_channels, "out": c1, "padding": 1},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
            {"type": "conv3x3", "in": c1, "out": c2, "padding": 1},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
            {"type": "global_avg_pool"},
            {"type": "dense", "in": c2, "out": n_classes},
            {"type": "softmax"},
        ],
        "params": {
            "conv1_w": [3, 3, in_channels, c1], "conv1_b": [c1],
            "conv2_w": [3, 3, c1, c2], "conv2_b": [c2],
            "dense_w": [c2, n_classes], "dense_b": [n_classes],
        },
    }


@dataclass
class CnnModel:
    params: dict
    descriptor: dict = field(default_factory=architecture)

    @property
    def dtype(self):
        return self.params["conv1_w"].dtype

    def validate(self):
        for name in PARAM_NAMES:
            want = tuple(self.descriptor["params"][name])
            got = self.params[name].shape
            if got != want:
                raise ShapeMismatch(f"{name}: expected {want}, got {got}")
            if not np.all(np.isfinite(self.params[name])):
                raise ValueError(f"{name} has non-finite values")

    def copy(self) -> "CnnModel":
        return CnnModel({k: v.copy() for k, v in self.params.items()}, json.loads(json.dumps(self.descriptor)))


def init_model(seed: int = 0, dtype=np.float32, zero_dense: bool = False, **arch) -> CnnModel:
    """He-normal convolutions, zero biases, small normal dense weights."""
    desc = architecture(**arch)
    shapes = desc["params"]
    rng = np.random.default_rng(seed)
    params = {}
    for name in ("conv1_w", "conv2_w"):
        shp = shapes[name]
        fan_in = shp[0] * shp[1] * shp[2]
        params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shp)
    dshape = shapes["dense_w"]
    params["dense_w"] = (np.zeros(dshape) if zero_dense
                         else rng.normal(0.0, np.sqrt(1.0 / dshape[0]), size=dshape))
    for name in ("conv1_b", "conv2_b", "dense_b"):
        params[name] = np.zeros(shapes[name])
    return CnnModel({k: params[k].astype(dtype) for k in PARAM_NAMES}, desc)


# ---------------------------------------------------------------- forward/backward


def images_to_batch(images: Sequence[FlowImage] | np.ndarray, dtype=np.float32) -> np.ndarray:
    """Stack images into (N, 100, 100, 3) reals in [0, 1]."""
    if isinstance(images, np.ndarray):
        arr = images
    else:
        arr = np.stack([im.array() for im in images]) if len(images) else np.zeros((0, HEIGHT, WIDTH, CHANNELS), np.uint8)
    dtype = np.dtype(dtype)
    if arr.dtype == np.uint8:
        return arr.astype(dtype) / dtype.type(255.0)
    return arr.astype(dtype, copy=False)


def _conv(x, w, b):
    n, h, wd, c = x.shape
    f = w.shape[-1]
    cols = kernels.im2col3x3(np.ascontiguousarray(x))
    z = cols.reshape(-1, 9 * c) @ w.reshape(9 * c, f) + b
    return z.reshape(n, h, wd, f), cols


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward_batch(model: CnnModel, x: np.ndarray, keep: bool = False):
    """Return class probabilities (N, 2); with ``keep`` also the backward cache."""
    if x.ndim != 4 or x.shape[-1] != model.params["conv1_w"].shape[2]:
        raise ShapeMismatch(f"expected (N, H, W, {model.params['conv1_w'].shape[2]}), got {x.shape}")
    p = model.params
    x = x.astype(model.dtype, copy=False)
    z1, cols1 = _conv(x, p["conv1_w"], p["conv1_b"])
    a1 = np.maximum(z1, 0)
    m1, arg1 = kernels.maxpool2x2_forward(a1)
    z2, cols2 = _conv(m1, p["conv2_w"], p["conv2_b"])
    a2 = np.maximum(z2, 0)
    m2, arg2 = kernels.maxpool2x2_forward(a2)
    g = m2.mean(axis=(1, 2))
    logits = g @ p["dense_w"] + p["dense_b"]
    probs = softmax(logits)
    if not keep:
        return probs
    cache = dict(x_shape=x.shape, cols1=cols1, z1=z1, arg1=arg1, m1_shape=m1.shape,
                 cols2=cols2, z2=z2, arg2=arg2, m2_shape=m2.shape, g=g)
    return probs, cache


def backward(model: CnnModel, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss and its gradient for every parameter tensor."""
    labels = np.asarray(labels, dtype=np.intp)
    if x.shape[0] == 0:
        raise ShapeMismatch("empty batch")
    if labels.shape != (x.shape[0],):
        raise ShapeMismatch(f"labels shape {labels.shape} does not match batch {x.shape[0]}")
    p = model.params
    probs, c = forward_batch(model, x, keep=True)
    n = x.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1
    dlogits /= n
    grads = {"dense_w": c["g"].T @ dlogits, "dense_b": dlogits.sum(axis=0)}
    dg = dlogits @ p["dense_w"].T

    _, h2, w2, f2 = c["m2_shape"]
    dm2 = np.broadcast_to((dg / (h2 * w2))[:, None, None, :], c["m2_shape"]).astype(model.dtype)
    da2 = kernels.maxpool2x2_backward(np.ascontiguousarray(dm2), c["arg2"], c["z2"].shape[1], c["z2"].shape[2])
    dz2 = np.where(c["z2"] > 0, da2, 0).reshape(-1, f2)
    c1 = p["conv2_w"].shape[2]
    grads["conv2_w"] = (c["cols2"].reshape(-1, 9 * c1).T @ dz2).reshape(p["conv2_w"].shape)
    grads["conv2_b"] = dz2.sum(axis=0)
    dcols2 = (dz2 @ p["conv2_w"].reshape(9 * c1, f2).T).reshape(c["cols2"].shape)
    dm1 = kernels.col2im3x3(np.ascontiguousarray(dcols2), c1)

    da1 = kernels.maxpool2x2_backward(dm1, c["arg1"], c["z1"].shape[1], c["z1"].shape[2])
    f1 = p["conv1_w"].shape[-1]
    cin = p["conv1_w"].shape[2]
    dz1 = np.where(c["z1"] > 0, da1, 0).reshape(-1, f1)
    grads["conv1_w"] = (c["cols1"].reshape(-1, 9 * cin).T @ dz1).reshape(p["conv1_w"].shape)
    grads["conv1_b"] = dz1.sum(axis=0)
    return loss, {k: grads[k].astype(model.dtype, copy=False) for k in PARAM_NAMES}


# ---------------------------------------------------------------- prediction


@dataclass(frozen=True)
class Prediction:
    anomaly_score: float
    predicted_label: Label

    @classmethod
    def from_score(cls, score: float, threshold: float = 0.5) -> "Prediction":
        return cls(score, Label.ANOMALY if score >= threshold else Label.BENIGN)


def _check_image_shape(arr: np.ndarray):
    if arr.shape[1:] != (HEIGHT, WIDTH, CHANNELS):
        raise ShapeMismatch(f"expected images of shape {(HEIGHT, WIDTH, CHANNELS)}, got {arr.shape[1:]}")


def forward(model: CnnModel, image: FlowImage | np.ndarray, threshold: float = 0.5) -> Prediction:
    arr = image.array() if isinstance(image, FlowImage) else np.asarray(image)
    arr = arr[None] if arr.ndim == 3 else arr
    _check_image_shape(arr)
    probs = forward_batch(model, images_to_batch(arr, model.dtype))
    return Prediction.from_score(float(probs[0, 1]), threshold)


def predict_scores(model: CnnModel, images: Sequence[FlowImage], batch_size: int = 32) -> np.ndarray:
    out = []
    for s in range(0, len(images), batch_size):
        x = images_to_batch(images[s:s + batch_size], model.dtype)
        _check_image_shape(x)
        out.append(forward_batch(model, x)[:, 1])
    return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def predict_batch(model: CnnModel, images: Sequence[FlowImage], threshold: float = 0.5,
                  batch_size: int = 32) -> list[Prediction]:
    return [Prediction.from_score(float(s), threshold) for s in predict_scores(model, images, batch_size)]


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    train_frac: float = 0.7
    val_frac: float = 0.2
    test_frac: float = 0.1

    def __post_init__(self):
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class Split:
    train: list
    val: list
    test: list


@dataclass
class TrainResult:
    model: CnnModel
    log: list
    split: Split
    best_epoch: int


def label_index(label: Label) -> int:
    return 1 if label == Label.ANOMALY else 0


def stratified_split(n_by_label: dict, config: TrainConfig) -> Split:
    """Per-label seeded shuffle, then test/val/train cuts. Values are index lists."""
    rng = np.random.default_rng(config.seed)
    split = Split([], [], [])
    for label in sorted(n_by_label, key=lambda l: l.value):
        idx = list(n_by_label[label])
        order = rng.permutation(len(idx))
        idx = [idx[i] for i in order]
        n = len(idx)
        n_test = int(round(n * config.test_frac))
        n_val = int(round(n * config.val_frac))
        split.test += idx[:n_test]
        split.val += idx[n_test:n_test + n_val]
        split.train += idx[n_test + n_val:]
    for part in (split.train, split.val, split.test):
        part.sort()
    return split


def split_images(images: Sequence[FlowImage], config: TrainConfig) -> Split:
    by_label: dict = {}
    for i, im in enumerate(images):
        by_label.setdefault(im.label, []).append(i)
    return stratified_split(by_label, config)


def evaluate_loss(model: CnnModel, x: np.ndarray, y: np.ndarray, batch_size: int = 32):
    """(mean cross-entropy, accuracy at 0.5) over a dataset."""
    if len(y) == 0:
        return float("nan"), float("nan")
    total, correct = 0.0, 0
    for s in range(0, len(y), batch_size):
        probs = forward_batch(model, x[s:s + batch_size])
        yb = y[s:s + batch_size]
        picked = probs[np.arange(len(yb)), yb]
        total += float(-np.sum(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))
        correct += int(np.sum((probs[:, 1] >= 0.5).astype(np.intp) == yb))
    return total / len(y), correct / len(y)


def train(images: Sequence[FlowImage], config: TrainConfig | None = None,
          model: CnnModel | None = None, progress=None) -> TrainResult:
    """Minibatch SGD with momentum; returns the best-validation-loss checkpoint."""
    config = config or TrainConfig()
    split = split_images(images, config)
    y_all = np.array([label_index(im.label) for im in images], dtype=np.intp)
    if len(set(y_all[split.train].tolist())) < 2:
        raise SingleClassDataset("training split must contain both Benign and Anomaly images")
    model = model.copy() if model is not None else init_model(config.seed)
    x_train = images_to_batch([images[i] for i in split.train], model.dtype)
    y_train = y_all[split.train]
    x_val = images_to_batch([images[i] for i in split.val], model.dtype)
    y_val = y_all[split.val]

    rng = np.random.default_rng(config.seed + 1)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    lr = model.dtype.type(config.learning_rate)
    mu = model.dtype.type(config.momentum)
    log: list[EpochLog] = []
    best, best_epoch, best_key = model.copy(), 0, None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(y_train))
        seen, loss_sum = 0, 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = backward(model, x_train[idx], y_train[idx])
            for k in PARAM_NAMES:
                velocity[k] *= mu
                velocity[k] -= lr * grads[k]
                model.params[k] += velocity[k]
            loss_sum += loss * len(idx)
            seen += len(idx)
        train_loss = loss_sum / seen
        if len(y_val):
            val_loss, val_acc = evaluate_loss(model, x_val, y_val)
        else:
            val_loss, val_acc = evaluate_loss(model, x_train, y_train)
        log.append(EpochLog(epoch, train_loss, val_loss, val_acc))
        key = (-val_acc, val_loss)
        if best_key is None or key < best_key:
            best, best_epoch, best_key = model.copy(), epoch, key
        if progress is not None:
            progress(log[-1])
    return TrainResult(best, log, split, best_epoch)


def write_train_log(log: Sequence[EpochLog], stream: IO[str]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
    for e in log:
        w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.val_loss:.6f}", f"{e.val_acc:.6f}"])


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(model: CnnModel, stream: IO[bytes]):
    """Magic, version, JSON descriptor, then little-endian float32 tensors in PARAM_NAMES order."""
    desc = json.dumps({"architecture": model.descriptor, "tensors": list(PARAM_NAMES)},
                      sort_keys=True).encode("utf-8")
    stream.write(CHECKPOINT_MAGIC)
    stream.write(struct.pack("<II", CHECKPOINT_VERSION, len(desc)))
    stream.write(desc)
    for name in PARAM_NAMES:
        stream.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())


def load_checkpoint(stream: IO[bytes]) -> CnnModel:
    if stream.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, n = struct.unpack("<II", stream.read(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    doc = json.loads(stream.read(n).decode("utf-8"))
    desc = doc["architecture"]
    params = {}
    for name in doc["tensors"]:
        shape = tuple(desc["params"][name])
        count = int(np.prod(shape))
        raw = stream.read(4 * count)
        if len(raw) != 4 * count:
            raise CheckpointError(f"truncated tensor {name}")
        params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
    model = CnnModel(params, desc)
    model.validate()
    return model


def checkpoint_bytes(model: CnnModel) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(model, buf)
    return buf.getvalue()


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
