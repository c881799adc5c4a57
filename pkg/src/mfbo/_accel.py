"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time.  Set ``MFBO_DISABLE_NUMBA=1`` to
force the numpy implementation (useful for debugging and for comparing the
two paths, see ``bench/bench_kernels.py``).
"""
import os

import numpy as np

_DISABLED = os.environ.get("MFBO_DISABLE_NUMBA", "0").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised with the env flag
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def se_kernel_numpy(A, B, lengthscales, variance):
    """Squared-exponential ARD cross-covariance, numpy path."""
    # direct differences (not the |a|^2+|b|^2-2ab expansion) so that
    # k(x, x) == variance exactly
    sq = (((A[:, None, :] - B[None, :, :]) / lengthscales) ** 2).sum(-1)
    return variance * np.exp(-0.5 * sq)


def se_kernel_grads_numpy(X, lengthscales, variance):
    """Gram matrix and its derivatives w.r.t. each log-lengthscale."""
    n, d = X.shape
    diff2 = ((X[:, None, :] - X[None, :, :]) / lengthscales) ** 2
    K = variance * np.exp(-0.5 * diff2.sum(-1))
    dK = np.empty((d, n, n))
    for j in range(d):
        dK[j] = K * diff2[:, :, j]
    return K, dK


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _se_kernel_nb(A, B, lengthscales, variance):
        n, d = A.shape
        m = B.shape[0]
        out = np.empty((n, m))
        inv = 1.0 / lengthscales
        for i in range(n):
            for k in range(m):
                s = 0.0
                for j in range(d):
                    r = (A[i, j] - B[k, j]) * inv[j]
                    s += r * r
                out[i, k] = variance * np.exp(-0.5 * s)
        return out

    @njit(cache=True, nogil=True)
    def _se_kernel_grads_nb(X, lengthscales, variance):
        n, d = X.shape
        K = np.empty((n, n))
        dK = np.empty((d, n, n))
        inv = 1.0 / lengthscales
        r2 = np.empty(d)
        for i in range(n):
            for k in range(i, n):
                s = 0.0
                for j in range(d):
                    r = (X[i, j] - X[k, j]) * inv[j]
                    r2[j] = r * r
                    s += r2[j]
                v = variance * np.exp(-0.5 * s)
                K[i, k] = v
                K[k, i] = v
                for j in range(d):
                    g = v * r2[j]
                    dK[j, i, k] = g
                    dK[j, k, i] = g
        return K, dK

    def se_kernel(A, B, lengthscales, variance):
        return _se_kernel_nb(
            np.ascontiguousarray(A, dtype=np.float64),
            np.ascontiguousarray(B, dtype=np.float64),
            np.ascontiguousarray(lengthscales, dtype=np.float64),
            float(variance),
        )

    def se_kernel_grads(X, lengthscales, variance):
        return _se_kernel_grads_nb(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(lengthscales, dtype=np.float64),
            float(variance),
        )

else:
    se_kernel = se_kernel_numpy
    se_kernel_grads = se_kernel_grads_numpy
