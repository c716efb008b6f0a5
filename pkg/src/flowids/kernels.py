"""Kernel backend selection.

The compiled extension is used when it imports; set FLOWIDS_PURE_PYTHON=1 to
force the numpy fallback. ``BACKEND`` names the active choice.
"""

import os

from . import _pykernels

if os.environ.get("FLOWIDS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward

__all__ = ["BACKEND", "im2col3x3", "col2im3x3", "maxpool2x2_forward", "maxpool2x2_backward"]
