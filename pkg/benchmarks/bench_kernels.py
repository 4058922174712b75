"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times the three convolution kernels and the bilinear pair on shapes drawn
from the desk-scale cascade (64x128 output, d=[64,64,64,32,32], c=6) plus
the stride-2 perceiver taps. The winner depends on the machine: the numpy
path leans on BLAS GEMM throughput, the numba path on compiled loops that
skip the big im2col-style temporaries and scale with threads.
"""

import argparse
import time

import numpy as np

from crnsynth.kernels import numba_backend, numpy_backend

CONV_SHAPES = [
    # (label, H, W, cin, cout, stride, dilation)
    ("module0 4x8", 4, 8, 6, 64, 1, 1),
    ("module2 16x32", 16, 32, 70, 64, 1, 1),
    ("module3 32x64", 32, 64, 70, 32, 1, 1),
    ("module4 64x128", 64, 128, 38, 32, 1, 1),
    ("perceiver s2", 64, 128, 16, 24, 2, 1),
    ("fullres dil4", 64, 128, 32, 32, 1, 4),
]


def _time(fn, repeat):
    fn()  # warm (and JIT-compile)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_conv(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for label, h, w, cin, cout, stride, dil in CONV_SHAPES:
        x = rng.standard_normal((h, w, cin)).astype(np.float32)
        wgt = (rng.standard_normal((3, 3, cin, cout)) * 0.1).astype(np.float32)
        b = np.zeros(cout, np.float32)
        y = numpy_backend.conv2d_forward(x, wgt, b, stride=stride, dilation=dil)
        dy = rng.standard_normal(y.shape).astype(np.float32)
        flops = 2 * y.shape[0] * y.shape[1] * cin * cout * 9
        for op, np_fn, nb_fn in (
            ("fwd",
             lambda: numpy_backend.conv2d_forward(x, wgt, b, stride=stride, dilation=dil),
             lambda: numba_backend.conv2d_forward(x, wgt, b, stride=stride, dilation=dil)),
            ("bwd_in",
             lambda: numpy_backend.conv2d_backward_input(dy, wgt, h, w, stride=stride, dilation=dil),
             lambda: numba_backend.conv2d_backward_input(dy, wgt, h, w, stride=stride, dilation=dil)),
            ("bwd_w",
             lambda: numpy_backend.conv2d_backward_params(x, dy, 3, 3, stride=stride, dilation=dil),
             lambda: numba_backend.conv2d_backward_params(x, dy, 3, 3, stride=stride, dilation=dil)),
        ):
            t_np = _time(np_fn, repeat)
            t_nb = _time(nb_fn, repeat)
            rows.append((f"conv {label} {op}", t_np, t_nb, flops))
    return rows


def bench_bilinear(repeat):
    rng = np.random.default_rng(1)
    rows = []
    for h, w, c in [(32, 64, 32), (64, 128, 16)]:
        x = rng.standard_normal((h, w, c)).astype(np.float32)
        dy = rng.standard_normal((2 * h, 2 * w, c)).astype(np.float32)
        rows.append((f"bilinear {h}x{w}x{c} fwd",
                     _time(lambda: numpy_backend.bilinear_forward(x, 2 * h, 2 * w), repeat),
                     _time(lambda: numba_backend.bilinear_forward(x, 2 * h, 2 * w), repeat),
                     None))
        rows.append((f"bilinear {h}x{w}x{c} bwd",
                     _time(lambda: numpy_backend.bilinear_backward(dy, h, w), repeat),
                     _time(lambda: numba_backend.bilinear_backward(dy, h, w), repeat),
                     None))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    rows = bench_conv(args.repeat) + bench_bilinear(args.repeat)
    print(f"{'kernel':<32} {'numpy':>10} {'numba':>10} {'numba/numpy':>12}")
    for label, t_np, t_nb, flops in rows:
        extra = ""
        if flops:
            extra = f"  ({flops / t_np / 1e9:5.1f} vs {flops / t_nb / 1e9:5.1f} GF/s)"
        print(f"{label:<32} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_nb / t_np:>11.2f}x{extra}")


if __name__ == "__main__":
    main()
