"""Benchmark the compiled mode-filter kernel against the numpy fallback.

Usage: python3 benchmarks/bench_modefilter.py [--size 256] [--repeat 20]
"""

import argparse
import time

import numpy as np

from tryondiff._kernels import KERNEL_BACKEND
from tryondiff._kernels.modefilter_py import mode_filter_pass as py_pass

try:
    from tryondiff._kernels._modefilter import mode_filter_pass as cy_pass
except ImportError:
    cy_pass = None


def bench(fn, labels, flags, k, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(labels, flags, k)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--neighborhood", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    labels = rng.integers(0, 9, size=(args.size, args.size)).astype(np.int32)
    flags = (rng.random((args.size, args.size)) < 0.3).astype(np.uint8)

    print(f"grid {args.size}x{args.size}, {int(flags.sum())} flagged pixels, "
          f"k={args.neighborhood}, active backend: {KERNEL_BACKEND}")
    t_py = bench(py_pass, labels, flags, args.neighborhood, args.repeat)
    print(f"python fallback : {t_py * 1e3:9.3f} ms")
    if cy_pass is None:
        print("compiled kernel : unavailable (extension not built)")
        return
    out_cy = cy_pass(labels, flags, args.neighborhood)
    out_py = py_pass(labels, flags, args.neighborhood)
    assert np.array_equal(out_cy, out_py), "backend outputs disagree"
    t_cy = bench(cy_pass, labels, flags, args.neighborhood, args.repeat)
    print(f"compiled kernel : {t_cy * 1e3:9.3f} ms")
    print(f"speedup         : {t_py / t_cy:9.2f}x (outputs identical)")


if __name__ == "__main__":
    main()
