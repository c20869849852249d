"""Benchmark the compiled vs pure-NumPy gather/scatter kernels.

Times the raw im2col/col2im primitives and full conv/deconv layer
forward+backward passes on training-shaped workloads, once per available
backend. Run:

    python3 benchmarks/bench_kernels.py [--batch 16] [--repeats 5]
"""

import argparse
import time

import numpy as np

from voice2face import backend, ops
from voice2face.backend import available_backends
from voice2face.tensor import Tensor

KERNEL_NAMES = ("im2col1d", "col2im1d", "im2col2d", "col2im2d")


def median_ms(fn, repeats):
    fn()  # warm up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000)
    return sorted(times)[len(times) // 2]


def swap_backend(impl):
    for name in KERNEL_NAMES:
        setattr(backend, name, getattr(impl, name))


def kernel_cases(batch, rng):
    x1 = np.ascontiguousarray(rng.normal(size=(batch, 64, 503)).astype(np.float32))
    c1 = np.ascontiguousarray(rng.normal(size=(batch, 192, 251)).astype(np.float32))
    x2 = np.ascontiguousarray(rng.normal(size=(batch, 64, 34, 34)).astype(np.float32))
    c2 = np.ascontiguousarray(rng.normal(size=(batch, 576, 256)).astype(np.float32))
    return [
        ("im2col1d 64ch T=500", lambda i: i.im2col1d(x1, 3, 2, 251)),
        ("col2im1d 64ch T=500", lambda i: i.col2im1d(c1, 3, 2, 503)),
        ("im2col2d 64ch 32px", lambda i: i.im2col2d(x2, 3, 3, 2, 16, 16)),
        ("col2im2d 64ch 32px", lambda i: i.col2im2d(c2, 3, 3, 2, 16, 16, 34, 34)),
    ]


def layer_cases(batch, rng):
    w_conv = Tensor(rng.normal(0, 0.02, size=(128, 64, 3, 3)).astype(np.float32),
                    requires_grad=True)
    b_conv = Tensor(np.zeros(128, dtype=np.float32), requires_grad=True)
    x_conv = rng.normal(size=(batch, 64, 32, 32)).astype(np.float32)

    w_dec = Tensor(rng.normal(0, 0.02, size=(128, 64, 3, 3)).astype(np.float32),
                   requires_grad=True)
    b_dec = Tensor(np.zeros(64, dtype=np.float32), requires_grad=True)
    x_dec = rng.normal(size=(batch, 128, 16, 16)).astype(np.float32)

    w_1d = Tensor(rng.normal(0, 0.02, size=(96, 64, 3)).astype(np.float32),
                  requires_grad=True)
    b_1d = Tensor(np.zeros(96, dtype=np.float32), requires_grad=True)
    x_1d = rng.normal(size=(batch, 64, 500)).astype(np.float32)

    def conv_fwd_bwd():
        t = Tensor(x_conv, requires_grad=True)
        ops.conv2d(t, w_conv, b_conv, 2, 1).sum().backward()

    def deconv_fwd_bwd():
        t = Tensor(x_dec, requires_grad=True)
        ops.deconv2d(t, w_dec, b_dec, 2, 1, 1).sum().backward()

    def conv1d_fwd_bwd():
        t = Tensor(x_1d, requires_grad=True)
        ops.conv1d(t, w_1d, b_1d, 2, 1).sum().backward()

    return [
        ("conv2d 64->128 32px fwd+bwd", conv_fwd_bwd),
        ("deconv2d 128->64 16px fwd+bwd", deconv_fwd_bwd),
        ("conv1d 64->96 T=500 fwd+bwd", conv1d_fwd_bwd),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = available_backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(backends)}   batch={args.batch}")

    results = {}
    for label, case in kernel_cases(args.batch, rng):
        results[label] = {name: median_ms(lambda: case(impl), args.repeats)
                          for name, impl in backends.items()}

    original = {name: getattr(backend, name) for name in KERNEL_NAMES}
    try:
        for label, case in layer_cases(args.batch, rng):
            row = {}
            for name, impl in backends.items():
                swap_backend(impl)
                row[name] = median_ms(case, args.repeats)
            results[label] = row
    finally:
        for name, fn in original.items():
            setattr(backend, name, fn)

    width = max(len(k) for k in results)
    names = list(backends)
    header = f"{'case':<{width}}  " + "  ".join(f"{n:>10}" for n in names)
    if len(names) == 2:
        header += "   speedup"
    print(header)
    print("-" * len(header))
    for label, row in results.items():
        line = f"{label:<{width}}  " + "  ".join(f"{row[n]:>8.2f}ms" for n in names)
        if len(names) == 2:
            line += f"   {row[names[0]] / row[names[1]]:>6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
