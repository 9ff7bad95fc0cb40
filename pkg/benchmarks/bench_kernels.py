"""Time the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--sizes 500 2000 5000]

Both backends are imported directly, so the environment switch is not
needed. Results are checked for agreement before timing.
"""

import argparse
import sys
import timeit

import numpy as np

from outres import _kernels_py as fallback

try:
    from outres import _kernels as compiled
except ImportError:
    compiled = None


def _cases(n, rng):
    X = rng.normal(size=(n, 3))
    C = rng.normal(size=(8, 3))
    return {
        "knn_with_ties(k=10)": lambda m: m.knn_with_ties(X, 10),
        "lof_scores(k=10)": lambda m: m.lof_scores(X, 10),
        "nearest_centroid(8)": lambda m: m.nearest_centroid(X, C),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, list):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12, equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 2000, 5000])
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; run 'pip install --no-build-isolation -e .'", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'n':>6}{'fallback s':>12}{'compiled s':>12}{'speedup':>9}")
    for n in args.sizes:
        for name, fn in _cases(n, rng).items():
            if not _same(fn(fallback), fn(compiled)):
                print(f"{name} n={n}: backends disagree", file=sys.stderr)
                return 2
            t_py = min(timeit.repeat(lambda: fn(fallback), number=1, repeat=args.repeat))
            t_c = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat))
            print(f"{name:<22}{n:>6}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
