#!/usr/bin/env python3
"""Benchmark the compiled im2col/col2im kernels against the numpy fallback.

Shapes mirror the conv layers the encoder/decoder ladders actually run.
Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from m2d import kernels

# (label, n, c, hp, wp, kh, kw, sh, sw) drawn from the desk-scale model
SHAPES = [
    ("stem 7x7/2 in", 16, 1, 134, 134, 7, 7, 2, 2),
    ("stage1 3x3/2", 16, 8, 66, 66, 3, 3, 2, 2),
    ("stage3 3x3/2", 16, 32, 18, 18, 3, 3, 2, 2),
    ("dec 4x4/2 mid", 16, 16, 33, 33, 4, 4, 2, 2),
    ("dec 4x4/2 late", 16, 8, 66, 66, 4, 4, 2, 2),
]


def out_hw(hp, wp, kh, kw, sh, sw):
    return (hp - kh) // sh + 1, (wp - kw) // sw + 1


def bench(fn, repeats):
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    impls = kernels.backends()
    print(f"backends available: {', '.join(impls)} (active: {kernels.backend_name()})")
    header = f"{'shape':18s} {'op':8s}" + "".join(f" {name:>12s}" for name in impls)
    if len(impls) > 1:
        header += f" {'speedup':>9s}"
    print(header)

    rng = np.random.default_rng(0)
    for label, n, c, hp, wp, kh, kw, sh, sw in SHAPES:
        ho, wo = out_hw(hp, wp, kh, kw, sh, sw)
        xp = rng.standard_normal((n, c, hp, wp)).astype(np.float32)
        cols = rng.standard_normal((n, c * kh * kw, ho * wo)).astype(np.float32)

        times_i = {name: bench(lambda m=m: m.im2col(xp, kh, kw, sh, sw, ho, wo), args.repeats) for name, m in impls.items()}
        times_c = {name: bench(lambda m=m: m.col2im(cols, c, hp, wp, kh, kw, sh, sw, ho, wo), args.repeats) for name, m in impls.items()}

        for op, times in (("im2col", times_i), ("col2im", times_c)):
            row = f"{label:18s} {op:8s}" + "".join(f" {times[name] * 1e3:9.3f} ms" for name in impls)
            if "compiled" in times and "numpy" in times:
                row += f" {times['numpy'] / times['compiled']:8.2f}x"
            print(row)


if __name__ == "__main__":
    main()
