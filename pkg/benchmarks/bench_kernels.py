"""Compare the compiled and numpy mixture kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from distill_lab import _kernels_py

try:
    from distill_lab import _kernels as _compiled
except ImportError:
    _compiled = None

CASES = [
    # (label, n points, d, K components)
    ("single point, 1D, K=3", 1, 1, 3),
    ("single point, 2D, K=19", 1, 2, 19),
    ("batch 100, 1D, K=3", 100, 1, 3),
    ("batch 1000, 8D, K=16", 1000, 8, 16),
]


def _inputs(n, d, K, rng):
    x = rng.standard_normal((n, d))
    means = rng.standard_normal((K, d)) * 2.0
    scales = rng.uniform(0.1, 1.0, K)
    log_w = np.log(np.full(K, 1.0 / K))
    return x, 0.37, log_w, means, scales


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'kernel':8s} {'python us':>10s} {'cython us':>10s} {'speedup':>8s} {'max diff':>9s}")
    for label, n, d, K in CASES:
        inp = _inputs(n, d, K, rng)
        reps = max(10, args.repeat // max(1, n // 10))
        for name in ("eps", "logpdf"):
            fp = getattr(_kernels_py, f"mixture_{name}")
            tp = min(timeit.repeat(lambda: fp(*inp), number=reps, repeat=3)) / reps * 1e6
            if _compiled is None:
                print(f"{label:28s} {name:8s} {tp:10.2f} {'n/a':>10s}")
                continue
            fc = getattr(_compiled, f"mixture_{name}")
            tc = min(timeit.repeat(lambda: fc(*inp), number=reps, repeat=3)) / reps * 1e6
            diff = float(np.max(np.abs(fp(*inp) - fc(*inp))))
            print(f"{label:28s} {name:8s} {tp:10.2f} {tc:10.2f} {tp / tc:7.1f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
