#!/usr/bin/env python3
"""Compare the numba and numpy convolution backends on training-shaped work.

Times the three raw kernels plus one full solver training step per backend.
Run:  python benchmarks/bench_kernels.py [--sizes 32,64,128]
"""

import argparse
import time

import numpy as np

from ocfill import kernels
from ocfill import autodiff as ad
from ocfill import varnet as vn


def time_fn(fn, reps=10):
    fn()  # warmup / JIT
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def bench_raw(size, c_in=32, c_out=64, reps=10):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((c_in, size, size))
    w = rng.standard_normal((c_out, c_in, 3, 3))
    g = rng.standard_normal((c_out, size, size))
    flops = 2 * size * size * c_in * c_out * 9
    rows = []
    for name, fn in [
        ("fwd", lambda: kernels.conv2d_fwd(x, w)),
        ("igrad", lambda: kernels.conv2d_igrad(g, w)),
        ("wgrad", lambda: kernels.conv2d_wgrad(x, g, 3, 3)),
    ]:
        dt = time_fn(fn, reps)
        rows.append((name, dt * 1e3, flops / dt / 1e9))
    return rows


def bench_train_step(size, reps=3):
    rng = np.random.default_rng(0)
    m = vn.build_mapper("varnet-cnn", 5, width=16, hidden=16, seed=1)
    z = rng.standard_normal((5, size, size))
    valid = rng.random((5, size, size)) < 0.8
    keep = valid & (rng.random((5, size, size)) < 0.5)
    zm = np.where(valid, z, np.nan)

    def step():
        m.weights.zero_grad()
        with ad.Tape():
            x = vn._reconstruct_window(m, zm, keep, differentiable=True)
            ad.backward(ad.masked_mse(x, zm, valid))

    return time_fn(step, reps)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="32,64",
                    help="comma-separated spatial sizes")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    backends = ["numpy"]
    if kernels.HAVE_NUMBA:
        backends.insert(0, "numba")
    else:
        print("numba unavailable; timing numpy only")

    print(f"{'backend':8} {'size':>5} {'kernel':>6} {'ms':>9} {'GFLOP/s':>9}")
    for size in sizes:
        for backend in backends:
            kernels.set_backend(backend)
            for name, ms, gflops in bench_raw(size):
                print(f"{backend:8} {size:>5} {name:>6} {ms:>9.2f} {gflops:>9.2f}")

    print(f"\n{'backend':8} {'size':>5} {'train step (ms)':>16}")
    for size in sizes:
        for backend in backends:
            kernels.set_backend(backend)
            dt = bench_train_step(size)
            print(f"{backend:8} {size:>5} {dt * 1e3:>16.1f}")
    kernels.set_backend("auto")


if __name__ == "__main__":
    main()
