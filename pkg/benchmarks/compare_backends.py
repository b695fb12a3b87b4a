#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Runs the three hot paths on synthetic data: pairwise Hermite feature row
sums (the filter's setup), capped-simplex projections, and the batched
projected-gradient weight fits (the search inner loop).

    python benchmarks/compare_backends.py [--n 4000] [--reps 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from listmean import rng as rng_mod
from listmean.backend import get_backend
from listmean.filtering import _stack_coeffs
from listmean.search import build_cover, gaussian_moment_targets


def time_call(fn, reps):
    fn()  # warmup (numba compiles here)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gram(backend, n, d, reps):
    gen = rng_mod.stream(0, "bench-gram")
    X = np.vstack([gen.standard_normal((n // 2, d)) + 2.0,
                   gen.standard_normal((n - n // 2, d))])
    sq = np.einsum("nd,nd->n", X, X)
    coefs = _stack_coeffs([1, 2, 3, 4], d)
    alive = np.ones(n, dtype=bool)
    return time_call(lambda: backend.gram_rowsums(X, sq, coefs, alive), reps)


def bench_projection(backend, n, reps):
    gen = rng_mod.stream(1, "bench-proj")
    vs = gen.normal(0, 2, size=(200, n))

    def run():
        for v in vs:
            backend.project_capped_simplex(v, 0.3 * n)

    return time_call(run, reps)


def bench_search_fit(backend, n, reps):
    gen = rng_mod.stream(2, "bench-fit")
    d_sub = 3
    mu = np.array([1.0, -0.5, 0.25])
    Y = np.vstack([mu + gen.standard_normal((n // 3, d_sub)),
                   gen.standard_normal((n - n // 3, d_sub)) * 4.0])
    cover = build_cover(1.25, 0.25, d_sub)
    g = gaussian_moment_targets(d_sub, 2)
    m = cover.shape[0]
    out = (np.empty(m), np.empty(m, np.int64), np.empty(m, np.int64),
           np.empty(m, np.int64), np.empty((m, 2)))
    skip = np.zeros(m, dtype=np.uint8)

    def run():
        backend.pgd_fit_batch(Y, cover, g, 0.3 * n, 2, 0.25, 150, 20, 1e-7,
                              True, 10, 25.0, 5e-3, True, skip, *out)

    return time_call(run, reps), m


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args()

    rows = []
    cover_m = None
    for name in ("numpy", "numba"):
        try:
            backend = get_backend(name)
        except RuntimeError:
            print(f"{name}: unavailable, skipping")
            continue
        t_gram = bench_gram(backend, args.n, args.d, args.reps)
        t_proj = bench_projection(backend, args.n, args.reps)
        t_fit, cover_m = bench_search_fit(backend, args.n, args.reps)
        rows.append((name, t_gram, t_proj, t_fit))

    print(f"\nn={args.n}, d={args.d}, cover={cover_m} candidates")
    print(f"{'backend':<8} {'gram_rowsums':>14} {'200 projections':>16} {'search fit batch':>17}")
    for name, t_gram, t_proj, t_fit in rows:
        print(f"{name:<8} {t_gram:>12.3f} s {t_proj:>14.3f} s {t_fit:>15.3f} s")
    if len(rows) == 2:
        print(f"{'speedup':<8} {rows[0][1] / rows[1][1]:>12.1f} x "
              f"{rows[0][2] / rows[1][2]:>14.1f} x {rows[0][3] / rows[1][3]:>15.1f} x")


if __name__ == "__main__":
    main()
