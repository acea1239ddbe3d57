#!/usr/bin/env python3
"""Benchmark the numba and pure-numpy kernel backends.

Run after installing the package:

    python3 benchmarks/bench_kernels.py

Results are wall-clock medians over repeated calls; the first numba call
is excluded (JIT warm-up).
"""

import time

import numpy as np

from facedeid import kernels


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm-up (JIT compile / cache touch)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    return sorted(samples)[len(samples) // 2]


def main():
    rng = np.random.default_rng(0)
    backends = kernels.BACKENDS
    if "numba" not in backends:
        print("numba backend unavailable (FACEDEID_NUMBA=0 or import failure); "
              "benchmarking numpy only")

    print(f"{'kernel':<34} {'case':<22} " +
          " ".join(f"{name:>12}" for name in backends))

    blur_cases = [
        ("face crop 128x128, k=26", rng.integers(0, 256, (128, 128, 3), dtype=np.uint8), 26),
        ("face crop 256x256, k=51", rng.integers(0, 256, (256, 256, 3), dtype=np.uint8), 51),
        ("full frame 720x1280, k=40", rng.integers(0, 256, (720, 1280, 3), dtype=np.uint8), 40),
    ]
    for label, img, k in blur_cases:
        times = {name: timeit(impl["box_blur"], img, k) for name, impl in backends.items()}
        row = " ".join(f"{times[name] * 1e3:>10.2f}ms" for name in backends)
        print(f"{'box_blur':<34} {label:<22} {row}")

    dist_cases = [
        ("100q x 110r x 128d", rng.normal(size=(100, 128)), rng.normal(size=(110, 128))),
        ("1000q x 110r x 128d", rng.normal(size=(1000, 128)), rng.normal(size=(110, 128))),
        ("1000q x 1000r x 128d", rng.normal(size=(1000, 128)), rng.normal(size=(1000, 128))),
    ]
    for label, q, r in dist_cases:
        times = {name: timeit(impl["pairwise"], q, r) for name, impl in backends.items()}
        row = " ".join(f"{times[name] * 1e3:>10.2f}ms" for name in backends)
        print(f"{'pairwise_sq_distances':<34} {label:<22} {row}")

    # sanity: backends agree bit-for-bit
    if "numba" in backends:
        img = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        assert np.array_equal(backends["numba"]["box_blur"](img, 13),
                              backends["numpy"]["box_blur"](img, 13))
        q, r = rng.normal(size=(50, 32)), rng.normal(size=(40, 32))
        assert np.array_equal(backends["numba"]["pairwise"](q, r),
                              backends["numpy"]["pairwise"](q, r))
        print("\nbackends agree bit-for-bit on spot checks")


if __name__ == "__main__":
    main()
