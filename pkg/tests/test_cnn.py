import io

import numpy as np
import pytest

from flowids import cnn, kernels
from flowids.errors import CheckpointError, ShapeMismatch, SingleClassDataset
from flowids.features import Label
from flowids.image_codec import IMAGE_BYTES, FlowImage

from oracles import naive_forward


def _image(rng, label=Label.BENIGN, lo=0, hi=256):
    return FlowImage(rng.integers(lo, hi, IMAGE_BYTES, dtype=np.uint8).tobytes(), label)


def test_zero_dense_scores_exactly_half():
    model = cnn.init_model(3, zero_dense=True)
    img = _image(np.random.default_rng(0))
    assert cnn.forward(model, img).anomaly_score == 0.5


def test_forward_deterministic_and_matches_oracle():
    rng = np.random.default_rng(1)
    model = cnn.init_model(5)
    for _ in range(3):
        img = _image(rng)
        a = cnn.forward(model, img).anomaly_score
        assert a == cnn.forward(model, img).anomaly_score
        ref = naive_forward(model.params, img.array() / 255.0)
        assert a == pytest.approx(ref, abs=1e-5)


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    x = cnn.images_to_batch([_image(rng) for _ in range(4)])
    probs = cnn.forward_batch(cnn.init_model(0), x)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_shape_mismatch():
    model = cnn.init_model(0)
    with pytest.raises(ShapeMismatch):
        cnn.forward(model, np.zeros((50, 100, 3), np.uint8))
    with pytest.raises(ShapeMismatch):
        cnn.forward_batch(model, np.zeros((1, 8, 8, 4)))
    with pytest.raises(ShapeMismatch):
        cnn.backward(model, np.zeros((2, 8, 8, 3)), [0])


def _pattern(model, x):
    """Which inputs win each pool and whether the winner is past the ReLU hinge."""
    _, c = cnn.forward_batch(model, x, keep=True)
    out = []
    for z in (c["z1"], c["z2"]):
        m, arg = kernels.maxpool2x2_forward(np.maximum(z, 0))
        out += [m > 0, np.where(m > 0, arg, -1)]
    return out


def _numeric_grad(model, x, y, name, h=1e-4):
    """Central differences; fails if a +-h step flips any ReLU or pooling choice (the oracle is void there)."""
    base = _pattern(model, x)
    p = model.params[name]
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + h
        lp, _ = cnn.backward(model, x, y)
        smooth = all(np.array_equal(a, b) for a, b in zip(base, _pattern(model, x)))
        p[i] = old - h
        lm, _ = cnn.backward(model, x, y)
        smooth = smooth and all(np.array_equal(a, b) for a, b in zip(base, _pattern(model, x)))
        p[i] = old
        assert smooth, f"{name}{i}: step crosses a kink"
        g[i] = (lp - lm) / (2 * h)
    return g


def gradient_check(model_seed=11, data_seed=3, n=3):
    """Relative error per parameter block on an 8x8x3 batch."""
    rng = np.random.default_rng(data_seed)
    model = cnn.init_model(model_seed, dtype=np.float64)
    for k in ("conv1_b", "conv2_b", "dense_b"):
        model.params[k] = rng.normal(0, 0.1, model.params[k].shape)
    x = rng.random((n, 8, 8, 3))
    y = np.arange(n) % 2
    _, grads = cnn.backward(model, x, y)
    errs = {}
    for name in cnn.PARAM_NAMES:
        num = _numeric_grad(model, x, y, name)
        errs[name] = float(np.linalg.norm(grads[name] - num) / (np.linalg.norm(grads[name]) + np.linalg.norm(num)))
    return errs


def test_gradient_matches_finite_differences():
    errs = gradient_check()
    assert all(e < 1e-4 for e in errs.values()), errs


def test_duplicated_batch_same_gradient():
    rng = np.random.default_rng(4)
    model = cnn.init_model(2, dtype=np.float64)
    x = rng.random((2, 8, 8, 3))
    y = np.array([0, 1])
    _, g1 = cnn.backward(model, x, y)
    _, g2 = cnn.backward(model, np.concatenate([x, x]), np.concatenate([y, y]))
    for k in cnn.PARAM_NAMES:
        assert np.allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)


def test_dense_bias_gradient_is_mean_residual():
    rng = np.random.default_rng(5)
    model = cnn.init_model(2, dtype=np.float64)
    x = rng.random((5, 8, 8, 3))
    y = np.array([0, 1, 1, 0, 1])
    _, g = cnn.backward(model, x, y)
    probs = cnn.forward_batch(model, x)
    assert np.allclose(g["dense_b"], (probs - np.eye(2)[y]).mean(axis=0), atol=1e-12)


def _separable(n, seed):
    rng = np.random.default_rng(seed)
    dark = [_image(rng, Label.BENIGN, 0, 60) for _ in range(n)]
    bright = [_image(rng, Label.ANOMALY, 190, 256) for _ in range(n)]
    return dark + bright


def test_separable_set_learned_quickly():
    images = _separable(40, 6)
    result = cnn.train(images, cnn.TrainConfig(seed=1, epochs=3, batch_size=4))
    assert max(e.val_acc for e in result.log) == 1.0
    val = [images[i] for i in result.split.val]
    preds = cnn.predict_batch(result.model, val)
    assert [p.predicted_label for p in preds] == [im.label for im in val]


def test_training_reproducible():
    images = _separable(6, 7)
    cfg = cnn.TrainConfig(seed=9, epochs=2, batch_size=4)
    a, b = cnn.train(images, cfg), cnn.train(images, cfg)
    assert a.log == b.log
    assert cnn.checkpoint_bytes(a.model) == cnn.checkpoint_bytes(b.model)


def test_single_class_rejected():
    rng = np.random.default_rng(8)
    with pytest.raises(SingleClassDataset):
        cnn.train([_image(rng) for _ in range(6)], cnn.TrainConfig(epochs=1))


def test_threshold_edges():
    model = cnn.init_model(3)
    img = _image(np.random.default_rng(9))
    s = cnn.forward(model, img).anomaly_score
    assert cnn.forward(model, img, threshold=0.0).predicted_label == Label.ANOMALY
    assert cnn.forward(model, img, threshold=1.0 + 1e-9).predicted_label == Label.BENIGN
    assert cnn.forward(model, img, threshold=s).predicted_label == Label.ANOMALY
    assert cnn.forward(model, img, threshold=np.nextafter(s, 2)).predicted_label == Label.BENIGN


def test_checkpoint_round_trip():
    model = cnn.init_model(13)
    blob = cnn.checkpoint_bytes(model)
    back = cnn.load_checkpoint(io.BytesIO(blob))
    for k in cnn.PARAM_NAMES:
        assert back.params[k].tobytes() == model.params[k].tobytes()
    assert cnn.checkpoint_bytes(back) == blob


def test_checkpoint_bad_magic_and_truncation():
    blob = cnn.checkpoint_bytes(cnn.init_model(0))
    with pytest.raises(CheckpointError):
        cnn.load_checkpoint(io.BytesIO(b"NOTACKPT" + blob[8:]))
    with pytest.raises(CheckpointError):
        cnn.load_checkpoint(io.BytesIO(blob[:-10]))


@pytest.mark.slow
def test_desk_training_loss_falls(desk_training):
    losses = [e.train_loss for e in desk_training["result"].log[:5]]
    assert all(b <= a for a, b in zip(losses, losses[1:])), losses
