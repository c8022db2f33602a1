#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Times the three hot kernels (im2col, col2im_add, 2x2 max-pool) plus a full
convolution forward/backward pass at encoder-1 geometry, and verifies both
backends return bitwise-identical results while timing them.

Usage:
    python3 benchmarks/bench_kernels.py [--size 256] [--channels 64] [--repeats 5]
"""
import argparse
import importlib
import sys
import time

import numpy as np


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        tic = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - tic)
    return min(times), out


def flatten_outputs(out):
    if isinstance(out, tuple):
        return [np.asarray(o) for o in out]
    return [np.asarray(out)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256, help="square input size")
    ap.add_argument("--channels", type=int, default=64, help="channel count")
    ap.add_argument("--repeats", type=int, default=5, help="best-of repeats")
    args = ap.parse_args()

    try:
        from crackseg.kernels import _core
    except ImportError:
        print("compiled extension not built; run pip install -e . first",
              file=sys.stderr)
        return 1
    numpy_impl = importlib.import_module("crackseg.kernels.numpy_impl")

    h = w = args.size
    cin = args.channels
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, h, w, cin)).astype(np.float32)
    kh = kw = 3
    sh = sw = 1
    ph = pw = 1
    cols = numpy_impl.im2col(x, kh, kw, sh, sw, ph, pw)
    kernels = rng.normal(size=(kh * kw * cin, cin)).astype(np.float32)
    grad = rng.normal(size=(2, h // 2, w // 2, cin)).astype(np.float32)
    _, arg = numpy_impl.maxpool2x2_forward(x)

    cases = [
        ("im2col 3x3/s1/p1",
         lambda impl: impl.im2col(x, kh, kw, sh, sw, ph, pw)),
        ("col2im_add 3x3/s1/p1",
         lambda impl: impl.col2im_add(cols, h, w, kh, kw, sh, sw, ph, pw)),
        ("maxpool2x2 forward",
         lambda impl: impl.maxpool2x2_forward(x)),
        ("maxpool2x2 backward",
         lambda impl: impl.maxpool2x2_backward(arg, grad)),
    ]

    print(f"input 2x{h}x{w}x{cin} float32, best of {args.repeats}")
    print(f"{'kernel':26s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, call in cases:
        t_np, out_np = best_of(lambda: call(numpy_impl), args.repeats)
        t_cy, out_cy = best_of(lambda: call(_core), args.repeats)
        for a, b in zip(flatten_outputs(out_np), flatten_outputs(out_cy)):
            if not np.array_equal(a, b):
                print(f"MISMATCH in {name}", file=sys.stderr)
                return 1
        print(f"{name:26s} {t_np * 1e3:8.1f}ms {t_cy * 1e3:8.1f}ms "
              f"{t_np / t_cy:7.2f}x")

    # end-to-end convolution layer (forward + backward) through the public op
    from crackseg import ops

    p = ops.ConvParams(
        rng.normal(size=(3, 3, cin, cin)).astype(np.float32) * 0.05,
        np.zeros(cin, dtype=np.float32), (1, 1), (1, 1))
    grad_out = rng.normal(size=x.shape).astype(np.float32)

    def conv_pass():
        out = ops.conv2d_forward(x, p)
        ops.conv2d_backward(x, p, grad_out)
        return out

    from crackseg import kernels as K
    results = {}
    for backend in ("numpy", "cython"):
        K._impl = numpy_impl if backend == "numpy" else _core
        t, out = best_of(conv_pass, args.repeats)
        results[backend] = (t, out)
    K._impl = _core  # restore the default
    if not np.array_equal(results["numpy"][1], results["cython"][1]):
        print("MISMATCH in conv2d forward", file=sys.stderr)
        return 1
    t_np, t_cy = results["numpy"][0], results["cython"][0]
    print(f"{'conv2d fwd+bwd (3x3)':26s} {t_np * 1e3:8.1f}ms {t_cy * 1e3:8.1f}ms "
          f"{t_np / t_cy:7.2f}x")
    print("all outputs bitwise identical across backends")
    return 0


if __name__ == "__main__":
    sys.exit(main())
