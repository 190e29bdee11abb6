"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Workloads mirror the pipeline: the default 448-point hyperparameter grid over
a cohort-sized set of series, and one t-SNE gradient on a 500-point embedding.
"""
import argparse
import timeit

import numpy as np

from phenolearn import _kernels_py
from phenolearn.gpr import GridSpec

try:
    from phenolearn import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def grid_workload(n_series, rng):
    lengths = rng.integers(3, 40, n_series)
    t = np.concatenate([np.sort(rng.uniform(0, 10, n)) for n in lengths])
    y = rng.standard_normal(t.size)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    rows = np.ascontiguousarray([p.as_tuple() for p in GridSpec().points()], dtype=np.float64)
    return t, y, offsets, rows


def tsne_workload(n, rng):
    P = rng.random((n, n))
    P = P + P.T
    np.fill_diagonal(P, 0.0)
    P /= P.sum()
    return np.ascontiguousarray(P), np.ascontiguousarray(rng.standard_normal((n, 2)))


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--series", type=int, default=200)
    ap.add_argument("--points", type=int, default=500)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    grid_args = grid_workload(args.series, rng)
    tsne_args = tsne_workload(args.points, rng)
    backends = [("python", _kernels_py)]
    if _kernels_c is None:
        print("compiled kernels not built; timing the fallback only")
    else:
        backends.append(("cython", _kernels_c))
        a = _kernels_py.rq_lml_grid(*grid_args)
        b = _kernels_c.rq_lml_grid(*grid_args)
        print(f"max |LML difference| between backends: {np.nanmax(np.abs(a - b)):.3g}")

    print(f"{'kernel':<28}{'backend':<10}{'seconds':>10}")
    timings = {}
    for name, mod in backends:
        for kernel, call in (
                (f"rq_lml_grid ({args.series} series)", lambda m=mod: m.rq_lml_grid(*grid_args)),
                (f"tsne_gradient ({args.points} pts)", lambda m=mod: m.tsne_gradient(*tsne_args))):
            timings[kernel, name] = best_of(call, args.repeat)
            print(f"{kernel:<28}{name:<10}{timings[kernel, name]:>10.4f}")
    if _kernels_c is not None:
        for kernel in sorted({k for k, _ in timings}):
            print(f"speedup {kernel}: {timings[kernel, 'python'] / timings[kernel, 'cython']:.1f}x")


if __name__ == "__main__":
    main()
