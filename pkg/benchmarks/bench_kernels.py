"""Time the compiled and pure-Python kernels side by side.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 1000 5000 20000] [--repeat 3]

Each row reports the best wall time over ``--repeat`` runs and checks that
both backends return the same values.
"""

import argparse
import timeit

import numpy as np

from cbmm import kernels


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench(sizes, repeat, seed=0):
    rng = np.random.default_rng(seed)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    rows = []
    for n in sizes:
        x = rng.standard_normal((n, 2))
        w = rng.uniform(0.5, 2.0, n)
        labels = rng.integers(0, 5, n)
        cases = {
            "dominance_counts": lambda b: kernels.dominance_counts(x[:, 0], x[:, 1], w, backend=b),
        }
        # the silhouette kernel is O(N^2); keep the pure-Python run bounded
        if n <= 5000:
            cases["cluster_distance_sums"] = lambda b: kernels.cluster_distance_sums(x, labels, 5, backend=b)
        for name, fn in cases.items():
            times = {b: _best(lambda: fn(b), repeat) for b in backends}
            same = len(backends) == 1 or np.allclose(fn("python"), fn("cython"), rtol=1e-12, atol=1e-9)
            rows.append((name, n, times, same))
    return backends, rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 5000, 20000])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends, rows = bench(args.sizes, args.repeat)
    if "cython" not in backends:
        print("compiled extension not available; timing the Python fallback only")
    head = f"{'kernel':<22}{'N':>8}" + "".join(f"{b + ' [s]':>14}" for b in backends)
    if len(backends) == 2:
        head += f"{'speedup':>10}{'agree':>7}"
    print(head)
    for name, n, t, same in rows:
        line = f"{name:<22}{n:>8}" + "".join(f"{t[b]:>14.4f}" for b in backends)
        if len(backends) == 2:
            line += f"{t['python'] / t['cython']:>9.1f}x{'yes' if same else 'NO':>7}"
        print(line)


if __name__ == "__main__":
    main()
