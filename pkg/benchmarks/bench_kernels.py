#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Times the individual kernels and an end-to-end training run at the sweep's
model sizes. Run from the repo root:

    python3 benchmarks/bench_kernels.py [--epochs 10] [--repeats 5]
"""

import argparse
import time

import numpy as np

from prunelab import kernels
from prunelab.data import DatasetSpec, gen_synthetic
from prunelab.network import mlp_specs
from prunelab.training import TrainConfig, train_model


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(be, repeats):
    rng = np.random.default_rng(0)
    results = {}
    for label, (m, k, n) in {
        "affine 32x20x16": (32, 20, 16),
        "affine 128x64x64": (128, 64, 64),
    }.items():
        x = rng.standard_normal((m, k))
        w = rng.standard_normal((k, n))
        b = rng.standard_normal(n)
        dy = rng.standard_normal((m, n))

        def fwd_bwd():
            for _ in range(200):
                y = be.affine(x, w, b)
                be.affine_grad(x, w, dy)

        results[label] = time_call(fwd_bwd, repeats) / 200
    logits = np.ascontiguousarray(rng.standard_normal((128, 10)))
    labels = rng.integers(0, 10, size=128)

    def xent():
        for _ in range(500):
            be.softmax_xent(logits, labels)

    results["softmax_xent 128x10"] = time_call(xent, repeats) / 500
    wv = rng.standard_normal(10000)
    vel = np.zeros_like(wv)
    grad = rng.standard_normal(10000)

    def sgd():
        for _ in range(500):
            be.sgd_momentum(wv, vel, grad, 0.01, 0.9, 1e-4)

    results["sgd_momentum 10k"] = time_call(sgd, repeats) / 500
    return results


def bench_training(backend_name, width, epochs, repeats):
    kernels.set_backend(backend_name)
    train_set, test_set = gen_synthetic(DatasetSpec(seed=7, label_noise=0.1))
    cfg = TrainConfig(epochs=epochs, batch_size=32, learning_rate=0.05, seed=3)
    specs = mlp_specs(20, width, 3, 4)

    def run():
        train_model(specs, (20,), train_set, test_set, cfg)

    return time_call(run, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = kernels.available_backends()
    if "ext" not in names:
        print("compiled backend unavailable; benchmarking the fallback only")

    per_kernel = {n: bench_kernels(kernels.get_backend(n), args.repeats) for n in names}
    print(f"{'kernel':<24}" + "".join(f"{n:>14}" for n in names) + f"{'speedup':>10}")
    for label in next(iter(per_kernel.values())):
        row = f"{label:<24}"
        for n in names:
            row += f"{per_kernel[n][label] * 1e6:>12.2f}us"
        if len(names) == 2:
            row += f"{per_kernel['python'][label] / per_kernel['ext'][label]:>9.2f}x"
        print(row)

    print()
    for width in (16, 64):
        times = {}
        for n in names:
            times[n] = bench_training(n, width, args.epochs, args.repeats)
            print(f"train width-{width} depth-3 MLP, {args.epochs} epochs [{n:>7}]: "
                  f"{times[n] * 1e3:8.1f} ms")
        if len(names) == 2:
            print(f"  end-to-end speedup at width {width}: "
                  f"{times['python'] / times['ext']:.2f}x")
    kernels.set_backend(kernels.available_backends()[-1])


if __name__ == "__main__":
    main()
