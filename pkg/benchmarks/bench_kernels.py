#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy twins.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--sizes small|full]

Timings cover the Lloyd assignment/update pair, the Hartigan sweep, the
softmax/cross-entropy pair, and one SGD epoch, at sizes representative of the
pipeline's hot paths. The active-backend column shows what `import eds` would
pick on this machine.
"""

import argparse
import time

import numpy as np

from eds import _kernels


def time_call(fn, *args, repeat=5, **kwargs):
    fn(*args, **kwargs)  # warm-up (JIT compile on the numba side)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best


def bench(sizes: str):
    rng = np.random.default_rng(0)
    if sizes == "full":
        n_points, dim, k = 100_000, 192, 300
        n_img, px, classes = 3500, 256, 15
    else:
        n_points, dim, k = 20_000, 48, 100
        n_img, px, classes = 800, 256, 15

    X = rng.normal(size=(n_points, dim))
    centroids = rng.normal(size=(k, dim))
    labels = rng.integers(0, k, size=n_points).astype(np.int64)

    feats = rng.normal(size=(n_img, px, 6))
    feats[..., -1] = 1.0
    ylab = rng.integers(0, classes, size=(n_img, px)).astype(np.int64)
    order = rng.permutation(n_img).astype(np.int64)
    logits = rng.normal(size=(n_img * px, classes))
    probs = _kernels.NUMPY_IMPLS["softmax2d"](logits)
    weights = np.ones(n_img * px)

    cases = {
        "assign_labels": lambda impl: impl["assign_labels"](X, centroids),
        "centroid_sums": lambda impl: impl["centroid_sums"](X, labels, k),
        "hartigan_sweep": lambda impl: impl["hartigan_sweep"](
            X, labels.copy(), *impl["centroid_sums"](X, labels, k)
        ),
        "softmax2d": lambda impl: impl["softmax2d"](logits),
        "ce_loss_grad": lambda impl: impl["ce_loss_grad"](
            probs, ylab.reshape(-1), weights
        ),
        "sgd_epoch": lambda impl: impl["sgd_epoch"](
            feats, ylab, order, np.zeros((classes, 6)), np.zeros((classes, 6)),
            0.1, 0.9, 0, 1000, 0.9, 1e-4, 8,
        ),
    }

    print(f"sizes={sizes}: kmeans {n_points}x{dim} k={k}; "
          f"training {n_img} images x {px} px, {classes} classes")
    print(f"active backend: {_kernels.BACKEND}")
    header = f"{'kernel':<16}{'numpy':>12}{'numba':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call in cases.items():
        t_np = time_call(call, _kernels.NUMPY_IMPLS)
        if _kernels.NUMBA_IMPLS is None:
            print(f"{name:<16}{t_np * 1e3:>10.1f}ms{'n/a':>12}{'n/a':>10}")
            continue
        t_nb = time_call(call, _kernels.NUMBA_IMPLS)
        print(f"{name:<16}{t_np * 1e3:>10.1f}ms{t_nb * 1e3:>10.1f}ms"
              f"{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", choices=("small", "full"), default="small")
    args = parser.parse_args()
    bench(args.sizes)
