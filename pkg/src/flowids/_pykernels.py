"""Pure numpy versions of the CNN inner kernels (NHWC layout).

Used when the compiled extension is unavailable or FLOWIDS_PURE_PYTHON is set.
Both implementations must agree bit for bit; tests compare them.
"""

import numpy as np

# pool window offsets, in tie-break order
_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def im2col3x3(x):
    """(N, H, W, C) -> (N, H, W, 9*C) patches of a zero-padded 3x3 window.

    Patch layout is (dy, dx, c), matching a (3, 3, C, F) weight tensor.
    """
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.empty((n, h, w, 9 * c), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            j = (dy * 3 + dx) * c
            cols[..., j:j + c] = xp[:, dy:dy + h, dx:dx + w, :]
    return cols


def col2im3x3(dcols, c):
    """Adjoint of im2col3x3: scatter-add patch gradients back to (N, H, W, C)."""
    n, h, w, _ = dcols.shape
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for dy in range(3):
        for dx in range(3):
            j = (dy * 3 + dx) * c
            dxp[:, dy:dy + h, dx:dx + w, :] += dcols[..., j:j + c]
    return dxp[:, 1:-1, 1:-1, :].copy()


def maxpool2x2_forward(x):
    """2x2 stride-2 max pool; odd trailing rows/cols are dropped.

    Returns (out, arg) where arg in 0..3 indexes the winning offset; ties go
    to the earliest offset.
    """
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    xc = x[:, :2 * ho, :2 * wo, :]
    cand = np.stack([xc[:, oy::2, ox::2, :] for oy, ox in _POOL_OFFSETS], axis=-1)
    arg = np.argmax(cand, axis=-1).astype(np.uint8)
    out = np.take_along_axis(cand, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2x2_backward(dout, arg, h, w):
    n, ho, wo, c = dout.shape
    dx = np.zeros((n, h, w, c), dtype=dout.dtype)
    for i, (oy, ox) in enumerate(_POOL_OFFSETS):
        dx[:, oy:2 * ho:2, ox:2 * wo:2, :] = np.where(arg == i, dout, 0)
    return dx
