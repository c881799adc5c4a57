"""Exact Gaussian-process regression with a squared-exponential ARD kernel.

Hyperparameters are estimated by maximizing the marginal likelihood in log
space on standardized outputs; the returned :class:`GPModel` is expressed in
the original output units.  The mean is linear in a user supplied basis
(a constant by default) and its coefficients are profiled out by generalized
least squares, so they are always jointly optimal with the kernel
hyperparameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg, optimize

from ._accel import se_kernel, se_kernel_grads

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-4
LOG_SIGNAL_BOUNDS = (-10.0, 10.0)
LOG_NOISE_BOUNDS = (-16.0, 0.0)


class TrainingError(RuntimeError):
    """Raised when a surrogate cannot be trained (non-PD covariance, no finite likelihood)."""


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ValueError("lower/upper must be 1-d arrays of equal length >= 1")
        if not np.all(lo < hi):
            raise ValueError("BoxDomain requires lower[j] < upper[j] for every j")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + rng.random((n, self.dim)) * self.span


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential ARD kernel ``s2 * exp(-0.5 * sum(((x - x') / l)**2))``."""

    lengthscales: np.ndarray
    signal_variance: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        if ls.ndim != 1 or np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be a 1-d vector of positive numbers")
        if not (self.signal_variance > 0 and math.isfinite(self.signal_variance)):
            raise ValueError("signal_variance must be positive")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def matrix(self, A, B=None) -> np.ndarray:
        A = _as_2d(A, self.dim)
        B = A if B is None else _as_2d(B, self.dim)
        return se_kernel(A, B, self.lengthscales, self.signal_variance)

    def scaled(self, factor: float) -> "KernelSpec":
        return KernelSpec(self.lengthscales, self.signal_variance * factor)

    # log-space parameter vector [log l_1..log l_d, log s2]
    def to_theta(self) -> np.ndarray:
        return np.concatenate([np.log(self.lengthscales), [math.log(self.signal_variance)]])

    @classmethod
    def from_theta(cls, theta) -> "KernelSpec":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[:-1]), math.exp(theta[-1]))

    def gram_grads(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Gram matrix and derivatives w.r.t. :meth:`to_theta` entries, stacked (d+1, n, n)."""
        K, dK = se_kernel_grads(X, self.lengthscales, self.signal_variance)
        return K, np.concatenate([dK, K[None]], axis=0)


def kernel_eval(k: KernelSpec, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != (k.dim,) or x2.shape != (k.dim,):
        raise ValueError(f"expected vectors of length {k.dim}, got {x.shape} and {x2.shape}")
    return float(k.matrix(x[None], x2[None])[0, 0])


def _as_2d(X, d: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if d is None or X.size == d else X[:, None]
    if d is not None and X.shape[1] != d:
        raise ValueError(f"expected inputs with {d} columns, got shape {X.shape}")
    return X


def kernel_bounds(domain: BoxDomain) -> list[tuple[float, float]]:
    """Log-space bounds for [log l_1..log l_d, log s2] in standardized units."""
    span = domain.span
    b = [(math.log(1e-3 * s), math.log(10.0 * s)) for s in span]
    b.append(LOG_SIGNAL_BOUNDS)
    return b


def kernel_start(domain: BoxDomain, rng: np.random.Generator | None) -> np.ndarray:
    span = domain.span
    if rng is None:
        return np.concatenate([np.log(0.3 * span), [0.0]])
    return np.concatenate([np.log(span) + rng.uniform(math.log(0.02), math.log(2.0), span.size),
                           [rng.uniform(-2.0, 2.0)]])


# ---------------------------------------------------------------------------
# factorization and profiled likelihood

def factorize(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + jitter*I`` with escalating relative jitter.

    Returns the factor and the absolute jitter that was added.
    """
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = float(np.mean(np.diag(K)))
    if not (scale > 0 and math.isfinite(scale)):
        raise TrainingError("covariance matrix has a non-positive or non-finite diagonal")
    rel = JITTER_START
    idx = np.diag_indices(n)
    while rel <= JITTER_MAX * (1 + 1e-9):
        Kj = K.copy()
        Kj[idx] += rel * scale
        try:
            L = linalg.cholesky(Kj, lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, rel * scale
        except linalg.LinAlgError:
            pass
        rel *= 10.0
    raise TrainingError(f"covariance not positive definite after jitter {JITTER_MAX:g} x mean diag")


def gls_coefs(L: np.ndarray, H: np.ndarray, y: np.ndarray) -> np.ndarray:
    if H.shape[1] == 0:
        return np.zeros(0)
    A = linalg.solve_triangular(L, H, lower=True, check_finite=False)
    b = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    return coef


def profiled_nll(K: np.ndarray, dK: np.ndarray | None, y: np.ndarray, H: np.ndarray):
    """Negative log marginal likelihood with GLS mean, and its gradient.

    ``dK`` holds the derivatives of ``K`` w.r.t. the hyperparameters
    (q, n, n).  The mean coefficients are at their optimum, so the gradient
    is the partial derivative at fixed coefficients.
    """
    n = y.size
    L, _ = factorize(K)
    coef = gls_coefs(L, H, y)
    r = y - H @ coef
    alpha = linalg.cho_solve((L, True), r, check_finite=False)
    nll = 0.5 * r @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * LOG_2PI
    if dK is None:
        return nll, None
    Kinv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    W = Kinv - np.outer(alpha, alpha)
    grad = 0.5 * (dK.reshape(dK.shape[0], -1) @ W.ravel())
    return nll, grad


_BAD_NLL = 1e25


def multistart_minimize(fun, starts: Sequence[np.ndarray], bounds, maxiter: int = 200):
    """Run L-BFGS-B from each start, return the best parameter vector.

    ``fun(theta) -> (value, grad)``.  Ties are broken towards the
    lexicographically smallest vector so the result only depends on the
    start list.
    """

    def wrapped(theta):
        try:
            v, g = fun(theta)
        except (TrainingError, linalg.LinAlgError, FloatingPointError, ValueError):
            return _BAD_NLL, np.zeros_like(theta)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return _BAD_NLL, np.zeros_like(theta)
        return v, g

    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    best = None
    for x0 in starts:
        x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
        res = optimize.minimize(wrapped, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": maxiter})
        x, v = res.x, float(res.fun)
        if not np.isfinite(v) or v >= _BAD_NLL:
            continue
        if best is None or v < best[1] or (v == best[1] and tuple(x) < tuple(best[0])):
            best = (x, v)
    if best is None:
        raise TrainingError("no restart produced a finite likelihood")
    return best


# ---------------------------------------------------------------------------
# univariate model

def constant_basis(X) -> np.ndarray:
    return np.ones((np.asarray(X).shape[0], 1))


def empty_basis(X) -> np.ndarray:
    return np.zeros((np.asarray(X).shape[0], 0))


@dataclass(frozen=True, eq=False)
class GPModel:
    """A conditioned exact GP in original output units.

    ``noise_variance`` is the observation noise; ``jitter`` is the extra
    diagonal added for a stable factorization.  The mean at ``x`` is
    ``basis(x) @ mean_coefs``.
    """

    X: np.ndarray
    Y: np.ndarray
    kernel: KernelSpec
    noise_variance: float
    mean_coefs: np.ndarray
    jitter: float = 0.0
    basis: Callable[[np.ndarray], np.ndarray] = constant_basis
    factor: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)
    theta: np.ndarray = field(default=None, repr=False)

    n_fidelities = 1

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def mean_constant(self) -> float:
        return float(self.mean_coefs[0]) if self.mean_coefs.size else 0.0

    @property
    def noise_diag(self) -> np.ndarray:
        return np.full(self.Y.size, self.noise_variance + self.jitter)

    def prior_mean(self, X) -> np.ndarray:
        X = _as_2d(X, self.dim)
        return self.basis(X) @ self.mean_coefs

    def predict(self, X, fidelity: int | None = None, full_cov: bool = False):
        """Posterior mean and variance (or covariance) of the latent function."""
        if fidelity not in (None, 1):
            raise ValueError(f"fidelity {fidelity} out of range for a single-fidelity model")
        X = _as_2d(X, self.dim)
        mean = self.prior_mean(X)
        if self.Y.size == 0:
            if full_cov:
                return mean, self.kernel.matrix(X)
            return mean, np.full(X.shape[0], self.kernel.signal_variance)
        Ks = self.kernel.matrix(self.X, X)
        mean = mean + Ks.T @ self.weights
        V = linalg.solve_triangular(self.factor, Ks, lower=True, check_finite=False)
        if full_cov:
            return mean, self.kernel.matrix(X) - V.T @ V
        var = self.kernel.signal_variance - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0)

    def joint_moments(self, X):
        """Means (n, 1) and covariances (n, 1, 1); the single-output case of the MF API."""
        mu, var = self.predict(X)
        return mu[:, None], var[:, None, None]

    def predict_joint(self, x):
        mu, var = predict_gp(self, x)
        return np.array([mu]), np.array([[var]])

    def posterior_cov(self, A, B, fidelity: int | None = None) -> np.ndarray:
        A = _as_2d(A, self.dim)
        B = _as_2d(B, self.dim)
        C = self.kernel.matrix(A, B)
        if self.Y.size == 0:
            return C
        Va = linalg.solve_triangular(self.factor, self.kernel.matrix(self.X, A), lower=True,
                                     check_finite=False)
        Vb = linalg.solve_triangular(self.factor, self.kernel.matrix(self.X, B), lower=True,
                                     check_finite=False)
        return C - Va.T @ Vb

    def observation_noise(self, fidelity: int | None = None) -> float:
        return self.noise_variance

    def condition(self, x, y, fidelity: int | None = None, refit_mean: bool = True) -> "GPModel":
        """Add one observation keeping the kernel hyperparameters fixed."""
        x = _as_2d(x, self.dim)
        X = np.vstack([self.X, x])
        Y = np.concatenate([self.Y, np.atleast_1d(np.asarray(y, dtype=float))])
        coefs = None if refit_mean else self.mean_coefs
        return build_gp(X, Y, self.kernel, self.noise_variance, basis=self.basis,
                        mean_coefs=coefs, jitter=self.jitter)


def build_gp(X, Y, kernel: KernelSpec, noise_variance: float = 0.0, *, basis=constant_basis,
             mean_coefs=None, jitter: float | None = None) -> GPModel:
    """Condition a GP with given hyperparameters on data.

    If ``mean_coefs`` is None they are estimated by GLS.  If ``jitter`` is
    None the escalation schedule picks it; otherwise exactly that much is added.
    """
    X = _as_2d(X, kernel.dim) if np.size(X) else np.zeros((0, kernel.dim))
    Y = np.asarray(Y, dtype=float).ravel()
    K = kernel.matrix(X) if Y.size else np.zeros((0, 0))
    K[np.diag_indices(Y.size)] += noise_variance
    if jitter is None:
        L, jitter = factorize(K)
    else:
        Kj = K.copy()
        Kj[np.diag_indices(Y.size)] += jitter
        try:
            L = linalg.cholesky(Kj, lower=True, check_finite=False) if Y.size else np.zeros((0, 0))
        except linalg.LinAlgError:
            L, jitter = factorize(K)
    H = basis(X)
    coefs = gls_coefs(L, H, Y) if mean_coefs is None else np.asarray(mean_coefs, dtype=float)
    r = Y - H @ coefs
    alpha = linalg.cho_solve((L, True), r, check_finite=False) if Y.size else np.zeros(0)
    return GPModel(X=X, Y=Y, kernel=kernel, noise_variance=float(noise_variance), mean_coefs=coefs,
                   jitter=float(jitter), basis=basis, factor=L, weights=alpha)


def predict_gp(m: GPModel, x) -> tuple[float, float]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (m.dim,):
        raise ValueError(f"expected a vector of length {m.dim}, got shape {x.shape}")
    mu, var = m.predict(x[None])
    return float(mu[0]), float(var[0])


def log_marginal_likelihood(m: GPModel) -> float:
    n = m.Y.size
    if n == 0:
        return 0.0
    r = m.Y - m.prior_mean(m.X)
    return float(-0.5 * r @ m.weights - np.log(np.diag(m.factor)).sum() - 0.5 * n * LOG_2PI)


def standardize(Y: np.ndarray, center: bool = True) -> tuple[float, float]:
    shift = float(np.mean(Y)) if (center and Y.size) else 0.0
    if Y.size > 1:
        scale = float(np.std(Y - shift)) if center else float(np.sqrt(np.mean(Y ** 2)))
    else:
        scale = abs(float(Y[0] - shift)) if Y.size else 1.0
    if not (scale > 1e-12 and math.isfinite(scale)):
        scale = 1.0
    return shift, scale


def dedupe(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop exact duplicate rows, keeping the first occurrence."""
    _, idx = np.unique(X, axis=0, return_index=True)
    idx = np.sort(idx)
    return X[idx], Y[idx]


def fit_gp(X, Y, domain: BoxDomain, seed: int = 0, *, noise: Optional[float] = None,
           basis: Callable = constant_basis, intercept: bool = True, n_restarts: int = 10,
           warm_start: Optional[np.ndarray] = None) -> GPModel:
    """Fit an SE-ARD GP by multistart maximum likelihood.

    Parameters
    ----------
    noise : float or None
        Observation noise variance.  ``None`` estimates it; a number fixes
        it (``0.0`` declares a noise-free problem, duplicate rows are then
        dropped).
    basis : callable
        Mean basis ``H(X) -> (n, p)``; coefficients are estimated by GLS.
    intercept : bool
        Whether column 0 of the basis is a constant (used to center the
        outputs before fitting).
    warm_start : array, optional
        Extra first start in the standardized log-parameter space, e.g. the
        ``theta`` of a previous fit on nearby data.
    """
    X = _as_2d(X, domain.dim)
    Y = np.asarray(Y, dtype=float).ravel()
    if X.shape[0] != Y.size or Y.size < 1:
        raise ValueError("fit_gp needs at least one observation and matching X, Y")
    if noise is not None and noise == 0.0:
        X, Y = dedupe(X, Y)
    H = basis(X)
    shift, scale = standardize(Y, center=intercept)
    ys = (Y - shift) / scale
    learn_noise = noise is None
    fixed_noise = 0.0 if learn_noise else float(noise) / scale ** 2
    d = domain.dim

    def nll(theta):
        k = KernelSpec.from_theta(theta[: d + 1])
        K, dK = k.gram_grads(X)
        if learn_noise:
            s2n = math.exp(theta[-1])
            K[np.diag_indices_from(K)] += s2n
            dK = np.concatenate([dK, (s2n * np.eye(Y.size))[None]], axis=0)
        else:
            K[np.diag_indices_from(K)] += fixed_noise
        return profiled_nll(K, dK, ys, H)

    bounds = kernel_bounds(domain) + ([LOG_NOISE_BOUNDS] if learn_noise else [])
    rng = np.random.default_rng(seed)
    starts = []
    if warm_start is not None and len(warm_start) == len(bounds):
        starts.append(np.asarray(warm_start, dtype=float))
    first = kernel_start(domain, None)
    starts.append(np.concatenate([first, [-8.0]]) if learn_noise else first)
    while len(starts) < max(n_restarts, 1):
        s = kernel_start(domain, rng)
        starts.append(np.concatenate([s, [rng.uniform(-12.0, -4.0)]]) if learn_noise else s)
    theta, _ = multistart_minimize(nll, starts, bounds)

    kernel = KernelSpec.from_theta(theta[: d + 1]).scaled(scale ** 2)
    noise_var = math.exp(theta[-1]) * scale ** 2 if learn_noise else float(noise)
    model = build_gp(X, Y, kernel, noise_var, basis=basis)
    return replace(model, theta=theta)
