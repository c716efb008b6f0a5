import os
import subprocess
import sys

import numpy as np
import pytest

from flowids import _pykernels, kernels

ck = pytest.importorskip("flowids._ckernels", reason="compiled extension not built")

SHAPES = [(1, 4, 4, 1), (2, 5, 7, 3), (3, 8, 8, 16), (1, 1, 1, 2), (2, 9, 3, 4)]


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", SHAPES)
def test_backends_are_bit_identical(shape, dtype):
    rng = np.random.default_rng(sum(shape))
    x = rng.standard_normal(shape).astype(dtype)
    c = shape[3]
    cols_p, cols_c = _pykernels.im2col3x3(x), ck.im2col3x3(x)
    assert cols_p.dtype == cols_c.dtype == dtype
    assert np.array_equal(cols_p, cols_c)
    d = rng.standard_normal(cols_p.shape).astype(dtype)
    assert np.array_equal(_pykernels.col2im3x3(d, c), ck.col2im3x3(d, c))
    (mp, ap), (mc, ac) = _pykernels.maxpool2x2_forward(x), ck.maxpool2x2_forward(x)
    assert np.array_equal(mp, mc) and np.array_equal(ap, ac)
    g = rng.standard_normal(mp.shape).astype(dtype)
    assert np.array_equal(_pykernels.maxpool2x2_backward(g, ap, shape[1], shape[2]),
                          ck.maxpool2x2_backward(g, ac, shape[1], shape[2]))


def test_pool_ties_pick_first_offset_on_both_backends():
    x = np.zeros((1, 2, 2, 1), np.float32)
    for k in (_pykernels, ck):
        out, arg = k.maxpool2x2_forward(x)
        assert arg.ravel().tolist() == [0]
        assert k.maxpool2x2_backward(np.ones_like(out), arg, 2, 2)[0, :, :, 0].tolist() == [[1, 0], [0, 0]]


@pytest.mark.parametrize("shape", SHAPES)
def test_col2im_is_adjoint_of_im2col(shape):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(shape)
    cols = kernels.im2col3x3(x)
    y = rng.standard_normal(cols.shape)
    assert np.vdot(cols, y) == pytest.approx(np.vdot(x, kernels.col2im3x3(y, shape[3])), rel=1e-12)


def test_im2col_matches_padding_definition():
    x = np.arange(2 * 3 * 4 * 2, dtype=np.float64).reshape(2, 3, 4, 2)
    cols = kernels.im2col3x3(x)
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    for n in range(2):
        for i in range(3):
            for j in range(4):
                assert np.array_equal(cols[n, i, j], pad[n, i:i + 3, j:j + 3, :].ravel())


def test_pure_python_switch():
    code = "from flowids import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, FLOWIDS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("cython", "python")
