"""Compiled vs numpy im2col/col2im, and a desk-scale conv2d forward+backward.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per backend and checks the outputs are bit-identical.
"""

import argparse
import timeit

import numpy as np

from sparsevit import _kernels_py, kernels, ops
from sparsevit.tensor import Tensor

try:
    from sparsevit import _kernels as compiled
except ImportError:
    compiled = None

# (batch, channels, height, width, kernel, stride, pad): shapes met by the desk model
CASES = [
    (4, 3, 256, 256, 3, 2, 1),    # stem conv0
    (4, 32, 64, 64, 3, 1, 1),     # stage-1 block
    (4, 64, 32, 32, 3, 1, 1),     # stage-2 block
    (4, 64, 32, 32, 3, 2, 1),     # stage-3 downsample
]


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'shape':34s} {'op':7s} {'numpy ms':>9s} {'cython ms':>10s} {'speedup':>8s}")
    for b, c, h, w, k, s, p in CASES:
        x = rng.normal(size=(b, c, h, w))
        cols = _kernels_py.im2col(x, k, s, p)
        label = f"{b}x{c}x{h}x{w} k{k} s{s}"
        for name, py, cy, args in (
            ("im2col", _kernels_py.im2col, getattr(compiled, "im2col", None), (x, k, s, p)),
            ("col2im", _kernels_py.col2im, getattr(compiled, "col2im", None), (cols, x.shape, k, s, p)),
        ):
            t_py = best(lambda: py(*args), repeat)
            if cy is None:
                print(f"{label:34s} {name:7s} {t_py * 1e3:9.2f} {'n/a':>10s}")
                continue
            assert np.array_equal(py(*args), cy(*args)), f"{name} backends disagree"
            t_cy = best(lambda: cy(*args), repeat)
            print(f"{label:34s} {name:7s} {t_py * 1e3:9.2f} {t_cy * 1e3:10.2f} {t_py / t_cy:7.2f}x")


def bench_conv(repeat):
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(4, 32, 64, 64)), requires_grad=True)
    wt = Tensor(rng.normal(size=(32, 32, 3, 3)) * 0.1, requires_grad=True)

    def step():
        x.grad = wt.grad = None
        ops.sum(ops.conv2d(x, wt, pad=1)).backward()

    saved = kernels._compiled
    times = {}
    for backend, mod in (("numpy", None), ("cython", saved)):
        if backend == "cython" and saved is None:
            continue
        kernels._compiled = mod
        times[backend] = best(step, repeat)
    kernels._compiled = saved
    line = "  ".join(f"{k} {v * 1e3:.1f} ms" for k, v in times.items())
    print(f"\nconv2d fwd+bwd 4x32x64x64, 32 filters 3x3: {line}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}\n")
    bench_kernels(args.repeat)
    bench_conv(args.repeat)


if __name__ == "__main__":
    main()
