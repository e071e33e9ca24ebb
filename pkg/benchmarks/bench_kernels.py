"""Compare the compiled and pure-Python kernels on representative workloads.

    python3 benchmarks/bench_kernels.py [--tune-size 1100] [--population 64] [--repeat 5]
"""

import argparse
import sys
import timeit

import numpy as np

from echokws import _kernels_py
from echokws.fusion import indicator_matrix

try:
    from echokws import _kernels as compiled
except ImportError:
    compiled = None


def fusion_workload(T, P, seed=0):
    r = np.random.default_rng(seed)
    z = r.standard_normal((2, T, 12)) * 3
    p = np.exp(z) / np.exp(z).sum(-1, keepdims=True)
    params = np.hstack([r.uniform(0, 2, (P, 4)), r.uniform(-5, 5, (P, 4)), r.uniform(0, 1.5, (P, 4))])
    return (np.ascontiguousarray(np.log(p[0])), np.ascontiguousarray(np.log(p[1])),
            np.ascontiguousarray(indicator_matrix(p[0], p[1])),
            r.integers(0, 3, T).astype(np.int64), r.integers(0, 3, T).astype(np.int64),
            r.integers(0, 12, T).astype(np.int64), params, 11)


def edit_workload(n_pairs, seed=0):
    r = np.random.default_rng(seed)
    return [(r.integers(0, 12, r.integers(1, 40)).astype(np.int64),
             r.integers(0, 12, r.integers(1, 40)).astype(np.int64)) for _ in range(n_pairs)]


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tune-size", type=int, default=1100, help="posterior pairs per objective call")
    ap.add_argument("--population", type=int, default=64, help="parameter rows per objective call")
    ap.add_argument("--pairs", type=int, default=500, help="sequence pairs for edit distance")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled kernels are not built; only the Python timings are shown", file=sys.stderr)

    fw = fusion_workload(args.tune_size, args.population)
    ew = edit_workload(args.pairs)
    rows = []
    for name, impl in (("python", _kernels_py), ("cython", compiled)):
        if impl is None:
            continue
        t_fuse = best_time(lambda: impl.fused_accuracy(*fw), args.repeat)
        t_edit = best_time(lambda: [impl.edit_counts(a, b) for a, b in ew], args.repeat)
        rows.append((name, t_fuse, t_edit))
    if compiled is not None:
        a = compiled.fused_accuracy(*fw)
        b = _kernels_py.fused_accuracy(*fw)
        assert np.array_equal(a, b), "backends disagree"

    print(f"fused_accuracy: {args.tune_size} pairs x {args.population} rows; "
          f"edit_counts: {args.pairs} pairs of length <= 40")
    print(f"{'backend':<8} {'fused_accuracy [ms]':>20} {'edit_counts [ms]':>18}")
    for name, tf, te in rows:
        print(f"{name:<8} {1e3 * tf:>20.2f} {1e3 * te:>18.2f}")
    if len(rows) == 2:
        print(f"{'speedup':<8} {rows[0][1] / rows[1][1]:>19.1f}x {rows[0][2] / rows[1][2]:>17.1f}x")


if __name__ == "__main__":
    main()
