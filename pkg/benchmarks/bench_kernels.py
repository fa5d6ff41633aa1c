"""Numba vs numpy timings for the controller's hot kernels.

Run with ``python benchmarks/bench_kernels.py``. Sizes match one closed-loop
step of the stochastic controller: K = 379 scenarios over H = 24 hours.
"""
import argparse
import timeit

import numpy as np

from resmpc import kernels
from resmpc._accel import HAVE_NUMBA


def make_case(K, H, seed=0):
    g = np.random.default_rng(seed)
    base = np.ascontiguousarray(5e6 + 3600.0 * np.cumsum(g.uniform(0, 200, (K, H)), axis=1))
    return base, np.full(K, 1.0 / K), g.uniform(0, 150, H), g.uniform(0, 120, H)


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-K", type=int, default=379)
    ap.add_argument("-H", type=int, default=24)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba not installed; nothing to compare")

    base, weights, u, w = make_case(args.K, args.H)
    grad = np.empty(args.H)
    son = (base, weights, u, w, 0.0, 1e7, 1e-4, 1e4, 0.15, grad)
    quad = (base, weights, u, w, 0.0, 1e7, 1.0, grad)
    mus = np.array([1e-2, 1e-3, 1e-4, 1e-5])

    def loop(fn):
        def run():
            x = np.full(args.H, 0.5)
            fn(base, weights, w, 0.0, 1e7, 1e-4, 0.0, 150.0, 1.0, x, mus, 1e-8, 2000, 1.0, np.empty(10000))
        return run

    cases = [
        ("son value+grad", lambda: kernels.son_value_grad_numba(*son), lambda: kernels.son_value_grad_numpy(*son), 200),
        ("quad value+grad", lambda: kernels.quad_value_grad_numba(*quad),
         lambda: kernels.quad_value_grad_numpy(*quad), 200),
        ("mfista loop", loop(kernels.mfista_son_numba), loop(kernels.mfista_son_numpy), 1),
    ]
    print(f"K={args.K} H={args.H}  (best of {args.repeat}, seconds per call)")
    print(f"{'kernel':18s} {'numba':>12s} {'numpy':>12s} {'speedup':>8s}")
    for name, fast, slow, number in cases:
        fast()  # compile outside the timing
        t_fast = best_of(fast, args.repeat, number)
        t_slow = best_of(slow, args.repeat, number)
        print(f"{name:18s} {t_fast:12.3e} {t_slow:12.3e} {t_slow / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
