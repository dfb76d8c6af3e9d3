"""Time each hot kernel under numba and under plain numpy.

    python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

Both variants are imported directly, so the MALPIPE_DISABLE_NUMBA flag does
not matter here. The first numba call (compilation) is excluded.
"""
import argparse
import time

import numpy as np

from malpipe import kernels
from malpipe._accel import HAS_NUMBA
from malpipe.numerics import make_rng


def _spd(rng, n):
    m = rng.normal(size=(n, n))
    return m @ m.T + n * np.eye(n)


def cases(quick):
    rng = make_rng(0)
    n_eig = 64 if quick else 128
    n_svm = 200 if quick else 600
    sym = _spd(rng, n_eig)
    low, _ = kernels.cholesky_numpy(sym)
    rhs = rng.normal(size=(n_eig, 8))
    u = rng.normal(size=(n_svm, 14))
    gram = kernels.rbf_gram_numpy(u, u, 1.0 / 14)
    y = np.where(rng.random(n_svm) < 0.5, 1.0, -1.0)
    cbox = np.full(n_svm, 10.0)
    d = 10 if quick else 14
    values = rng.normal(size=1 << d)
    weights = kernels.shapley_weights(d)
    smo_args = (gram, y, cbox, 1e-3, 50, 0, kernels.SMO_POLISH_EPS, 200 * n_svm)
    return [
        (f"jacobi_eigh {n_eig}x{n_eig}", "jacobi_eigh", (sym, 100, 1e-15)),
        (f"cholesky {n_eig}x{n_eig}", "cholesky", (sym,)),
        (f"forward_sub {n_eig}x8", "forward_sub", (low, rhs)),
        (f"back_sub_t {n_eig}x8", "back_sub_t", (low, rhs)),
        (f"rbf_gram {n_svm}x{n_svm}", "rbf_gram", (u, u, 1.0 / 14)),
        (f"smo n={n_svm}", "smo", smo_args),
        (f"shapley_accumulate d={d}", "shapley_accumulate", (values, weights, d)),
    ]


def best_time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = parser.parse_args()
    if not HAS_NUMBA:
        print("numba is not installed; only the numpy column is meaningful")
    print(f"{'kernel':32s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>9s}")
    for label, name, call_args in cases(args.quick):
        jit_fn = getattr(kernels, f"{name}_numba")
        np_fn = getattr(kernels, f"{name}_numpy")
        jit_fn(*call_args)  # compile
        t_jit = best_time(jit_fn, call_args, args.repeat)
        t_np = best_time(np_fn, call_args, args.repeat)
        print(f"{label:32s} {1e3 * t_jit:12.3f} {1e3 * t_np:12.3f} {t_np / t_jit:8.1f}x")


if __name__ == "__main__":
    main()
