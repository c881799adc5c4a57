"""Time the squared-exponential kernels on the numba and numpy paths.

Run from the repository root::

    python3 bench/bench_kernels.py

The numpy path is timed in-process; the numba path is timed as well when
numba is importable (the first call, which compiles, is excluded).  Both
paths must agree to rounding.
"""
import argparse
import timeit

import numpy as np

from mfbo import _accel


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 150, 400])
    ap.add_argument("--dim", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    ell = rng.uniform(0.2, 1.0, args.dim)
    print(f"backend selected at import: {_accel.BACKEND}")
    print(f"{'n':>6} {'kernel':>14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>10}")
    for n in args.sizes:
        X = rng.random((n, args.dim))
        B = rng.random((4 * n, args.dim))
        cases = [
            ("cross", lambda: _accel.se_kernel_numpy(X, B, ell, 1.3),
             (lambda: _accel._se_kernel_nb(X, B, ell, 1.3)) if _accel.HAVE_NUMBA else None),
            ("gram+grads", lambda: _accel.se_kernel_grads_numpy(X, ell, 1.3),
             (lambda: _accel._se_kernel_grads_nb(X, ell, 1.3)) if _accel.HAVE_NUMBA else None),
        ]
        for name, f_np, f_nb in cases:
            number = max(1, int(2e6 // (n * n * args.dim)))
            t_np = _best(f_np, args.repeat, number) * 1e3
            if f_nb is None:
                print(f"{n:>6} {name:>14} {t_np:>10.3f} {'-':>10} {'-':>8} {'-':>10}")
                continue
            f_nb()  # compile
            t_nb = _best(f_nb, args.repeat, number) * 1e3
            a, b = f_np(), f_nb()
            if isinstance(a, tuple):
                diff = max(np.abs(x - y).max() for x, y in zip(a, b))
            else:
                diff = np.abs(a - b).max()
            print(f"{n:>6} {name:>14} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>8.2f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
