"""Compiled vs numpy kernels, plus one CNN training step on each backend.

    python3 benchmarks/bench_kernels.py [--repeat N] [--batch B]

Prints a table of best-of-N wall times and checks both backends agree.
"""

import argparse
import importlib
import os
import sys
import time

import numpy as np

from flowids import _pykernels

try:
    from flowids import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(batch, rng):
    x = rng.standard_normal((batch, 100, 100, 16)).astype(np.float32)
    cols = _pykernels.im2col3x3(x)
    pooled, arg = _pykernels.maxpool2x2_forward(x)
    dout = rng.standard_normal(pooled.shape).astype(np.float32)
    return {
        "im2col3x3": lambda k: k.im2col3x3(x),
        "col2im3x3": lambda k: k.col2im3x3(cols, 16),
        "maxpool fwd": lambda k: k.maxpool2x2_forward(x),
        "maxpool bwd": lambda k: k.maxpool2x2_backward(dout, arg, 100, 100),
    }


def train_step_time(backend, batch, repeat):
    """Forward+backward on one batch with the chosen backend loaded fresh."""
    os.environ["FLOWIDS_PURE_PYTHON"] = "1" if backend == "python" else "0"
    for name in ("flowids.kernels", "flowids.cnn"):
        if name in sys.modules:
            importlib.reload(sys.modules[name])
    from flowids import cnn, kernels

    assert kernels.BACKEND == backend, kernels.BACKEND
    model = cnn.init_model(0)
    rng = np.random.default_rng(1)
    x = rng.random((batch, 100, 100, 3), dtype=np.float32)
    y = rng.integers(0, 2, batch)
    return best_of(lambda: cnn.backward(model, x, y), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=16)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numpy s':>10}{'cython s':>10}{'speedup':>9}")
    for name, fn in kernel_cases(args.batch, rng).items():
        a, b = fn(_pykernels), fn(_ckernels)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            assert np.array_equal(u, v), f"{name}: backends disagree"
        tp = best_of(lambda: fn(_pykernels), args.repeat)
        tc = best_of(lambda: fn(_ckernels), args.repeat)
        print(f"{name:<16}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x")
    tp = train_step_time("python", args.batch, args.repeat)
    tc = train_step_time("cython", args.batch, args.repeat)
    print(f"{'train step':<16}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
