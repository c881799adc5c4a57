"""Multi-output GPs over stacked ``(x, output)`` data.

A covariance rule maps two sets of (input, output-index) pairs to a
cross-covariance matrix.  Every rule also exposes a parameter vector
``theta`` and the derivatives of its Gram matrix, which is all the shared
maximum-likelihood engine in :mod:`mfbo.gp` needs.

Output indices are 0-based here; the public multi-fidelity API is 1-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .gp import (LOG_NOISE_BOUNDS, BoxDomain, KernelSpec, TrainingError, _as_2d, factorize,
                 gls_coefs, kernel_bounds, kernel_start, multistart_minimize, profiled_nll)

COUPLING_BOUNDS = (-10.0, 10.0)


def _pairs(t):
    return np.asarray(t, dtype=np.intp).ravel()


@dataclass(frozen=True)
class LMCRule:
    """``S(x, x') = sum_q r_q r_q^T k_q(x, x')`` with mixing matrix ``R = [r_1 .. r_Q]``.

    ``free`` marks the entries of ``R`` that are estimated; the rest stay at
    their given values.
    """

    R: np.ndarray
    kernels: tuple
    free: Optional[np.ndarray] = None

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[1] != len(self.kernels):
            raise ValueError("R needs one column per latent kernel")
        free = np.zeros(R.shape, dtype=bool) if self.free is None else np.asarray(self.free, bool)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "free", free)

    @property
    def n_outputs(self) -> int:
        return self.R.shape[0]

    def cov(self, A, ta, B, tb) -> np.ndarray:
        ta, tb = _pairs(ta), _pairs(tb)
        out = np.zeros((ta.size, tb.size))
        for q, k in enumerate(self.kernels):
            out += np.outer(self.R[ta, q], self.R[tb, q]) * k.matrix(A, B)
        return out

    def theta(self) -> np.ndarray:
        return np.concatenate([self.R[self.free]] + [k.to_theta() for k in self.kernels])

    def with_theta(self, theta) -> "LMCRule":
        nr = int(self.free.sum())
        R = self.R.copy()
        R[self.free] = theta[:nr]
        d1 = self.kernels[0].dim + 1
        ks = [KernelSpec.from_theta(theta[nr + q * d1: nr + (q + 1) * d1])
              for q in range(len(self.kernels))]
        return LMCRule(R, tuple(ks), self.free)

    def bounds(self, domain: BoxDomain):
        return [COUPLING_BOUNDS] * int(self.free.sum()) + kernel_bounds(domain) * len(self.kernels)

    def start(self, domain: BoxDomain, rng) -> np.ndarray:
        nr = int(self.free.sum())
        r0 = np.zeros(nr) if rng is None else rng.uniform(-1.0, 1.0, nr)
        ks = [kernel_start(domain, rng) for _ in self.kernels]
        return np.concatenate([r0] + ks)

    def gram_grads(self, X, t):
        t = _pairs(t)
        n = t.size
        K = np.zeros((n, n))
        grams, k_grads = [], []
        for q, k in enumerate(self.kernels):
            Kq, dKq = k.gram_grads(X)
            C = np.outer(self.R[t, q], self.R[t, q])
            K += C * Kq
            grams.append(Kq)
            k_grads.append(C[None] * dKq)
        r_grads = []
        for a, q in np.argwhere(self.free):  # row-major, same as theta()
            e = (t == a).astype(float)
            r = self.R[t, q]
            r_grads.append((np.outer(e, r) + np.outer(r, e)) * grams[q])
        return K, np.concatenate([np.array(r_grads).reshape(-1, n, n)] + k_grads, axis=0)

    def scaled(self, s2: float) -> "LMCRule":
        return LMCRule(self.R, tuple(k.scaled(s2) for k in self.kernels), self.free)


@dataclass(frozen=True)
class CoKrigingRule:
    """Two-level auto-regressive covariance.

    With ``f_2 = b f_1 + d_2`` and independent ``f_1 ~ GP(0, k1)``,
    ``d_2 ~ GP(0, k2)``::

        S = [[k1,   b k1        ],
             [b k1, b^2 k1 + k2 ]]
    """

    b: float
    k1: KernelSpec
    k2: KernelSpec
    fit_b: bool = True

    n_outputs = 2

    def _coef(self, ta, tb):
        ta, tb = _pairs(ta), _pairs(tb)
        c1 = np.where(ta[:, None] == 1, self.b, 1.0) * np.where(tb[None, :] == 1, self.b, 1.0)
        c2 = ((ta[:, None] == 1) & (tb[None, :] == 1)).astype(float)
        return c1, c2

    def cov(self, A, ta, B, tb) -> np.ndarray:
        c1, c2 = self._coef(ta, tb)
        return c1 * self.k1.matrix(A, B) + c2 * self.k2.matrix(A, B)

    def theta(self) -> np.ndarray:
        head = [self.b] if self.fit_b else []
        return np.concatenate([head, self.k1.to_theta(), self.k2.to_theta()])

    def with_theta(self, theta) -> "CoKrigingRule":
        o = 1 if self.fit_b else 0
        d1 = self.k1.dim + 1
        b = float(theta[0]) if self.fit_b else self.b
        return CoKrigingRule(b, KernelSpec.from_theta(theta[o:o + d1]),
                             KernelSpec.from_theta(theta[o + d1:o + 2 * d1]), self.fit_b)

    def bounds(self, domain):
        return ([COUPLING_BOUNDS] if self.fit_b else []) + kernel_bounds(domain) * 2

    def start(self, domain, rng):
        b0 = [1.0 if rng is None else rng.uniform(-2.0, 2.0)] if self.fit_b else []
        return np.concatenate([b0, kernel_start(domain, rng), kernel_start(domain, rng)])

    def gram_grads(self, X, t):
        c1, c2 = self._coef(t, t)
        K1, dK1 = self.k1.gram_grads(X)
        K2, dK2 = self.k2.gram_grads(X)
        K = c1 * K1 + c2 * K2
        parts = []
        if self.fit_b:
            t = _pairs(t)
            e = (t == 1).astype(int)
            p = e[:, None] + e[None, :]  # c1 = b**p
            dc1 = np.where(p > 0, p * float(self.b) ** np.maximum(p - 1, 0), 0.0)
            parts.append((dc1 * K1)[None])
        parts += [c1[None] * dK1, c2[None] * dK2]
        return K, np.concatenate(parts, axis=0)

    def scaled(self, s2):
        return CoKrigingRule(self.b, self.k1.scaled(s2), self.k2.scaled(s2), self.fit_b)


def _fid_coord(t, T):
    t = _pairs(t).astype(float)
    return t / (T - 1) if T > 1 else np.zeros_like(t)


@dataclass(frozen=True)
class ProductFidelityRule:
    """``k((t,x),(t',x')) = exp(-(tau - tau')^2 / (2 l_t^2)) * k_x(x, x')`` with tau in [0, 1]."""

    kx: KernelSpec
    lt: float
    T: int

    @property
    def n_outputs(self):
        return self.T

    def _kt(self, ta, tb):
        da = _fid_coord(ta, self.T)[:, None] - _fid_coord(tb, self.T)[None, :]
        return np.exp(-0.5 * (da / self.lt) ** 2), da ** 2 / self.lt ** 2

    def cov(self, A, ta, B, tb):
        return self._kt(ta, tb)[0] * self.kx.matrix(A, B)

    def theta(self):
        return np.concatenate([self.kx.to_theta(), [math.log(self.lt)]])

    def with_theta(self, theta):
        return ProductFidelityRule(KernelSpec.from_theta(theta[:-1]), math.exp(theta[-1]), self.T)

    def bounds(self, domain):
        return kernel_bounds(domain) + [(math.log(1e-2), math.log(1e2))]

    def start(self, domain, rng):
        return np.concatenate([kernel_start(domain, rng), [0.0 if rng is None else rng.uniform(-2, 2)]])

    def gram_grads(self, X, t):
        Kt, r2 = self._kt(t, t)
        Kx, dKx = self.kx.gram_grads(X)
        K = Kt * Kx
        return K, np.concatenate([Kt[None] * dKx, (K * r2)[None]], axis=0)

    def scaled(self, s2):
        return ProductFidelityRule(self.kx.scaled(s2), self.lt, self.T)


@dataclass(frozen=True)
class CompoundSymmetryRule:
    """Shared correlation across fidelity levels: ``k_x`` if ``t == t'``, else ``c * k_x``.

    The level variance is carried by ``k_x``'s signal variance.
    """

    kx: KernelSpec
    c: float
    T: int

    @property
    def n_outputs(self):
        return self.T

    def _ct(self, ta, tb):
        ta, tb = _pairs(ta), _pairs(tb)
        return np.where(ta[:, None] == tb[None, :], 1.0, self.c)

    def cov(self, A, ta, B, tb):
        return self._ct(ta, tb) * self.kx.matrix(A, B)

    def theta(self):
        return np.concatenate([self.kx.to_theta(), [self.c]])

    def with_theta(self, theta):
        return CompoundSymmetryRule(KernelSpec.from_theta(theta[:-1]), float(theta[-1]), self.T)

    def bounds(self, domain):
        return kernel_bounds(domain) + [(0.0, 1.0)]

    def start(self, domain, rng):
        return np.concatenate([kernel_start(domain, rng), [0.5 if rng is None else rng.uniform(0.05, 0.95)]])

    def gram_grads(self, X, t):
        C = self._ct(t, t)
        Kx, dKx = self.kx.gram_grads(X)
        return C * Kx, np.concatenate([C[None] * dKx, ((C != 1.0) * Kx)[None]], axis=0)

    def scaled(self, s2):
        return CompoundSymmetryRule(self.kx.scaled(s2), self.c, self.T)


@dataclass(frozen=True)
class KroneckerSumRule:
    """``k_x(x, x') + 1[t == t'] k_delta_t(x, x')``; the top level has no discrepancy term."""

    kx: KernelSpec
    deltas: tuple

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(self.deltas))

    @property
    def n_outputs(self):
        return len(self.deltas) + 1

    def cov(self, A, ta, B, tb):
        ta, tb = _pairs(ta), _pairs(tb)
        out = self.kx.matrix(A, B)
        for s, k in enumerate(self.deltas):
            mask = (ta[:, None] == s) & (tb[None, :] == s)
            if mask.any():
                out = out + mask * k.matrix(A, B)
        return out

    def theta(self):
        return np.concatenate([self.kx.to_theta()] + [k.to_theta() for k in self.deltas])

    def with_theta(self, theta):
        d1 = self.kx.dim + 1
        ks = [KernelSpec.from_theta(theta[(i + 1) * d1:(i + 2) * d1]) for i in range(len(self.deltas))]
        return KroneckerSumRule(KernelSpec.from_theta(theta[:d1]), tuple(ks))

    def bounds(self, domain):
        return kernel_bounds(domain) * (1 + len(self.deltas))

    def start(self, domain, rng):
        return np.concatenate([kernel_start(domain, rng) for _ in range(1 + len(self.deltas))])

    def gram_grads(self, X, t):
        t = _pairs(t)
        K, dK = self.kx.gram_grads(X)
        parts = [dK]
        K = K.copy()
        for s, k in enumerate(self.deltas):
            mask = (t[:, None] == s) & (t[None, :] == s)
            Ks, dKs = k.gram_grads(X)
            K += mask * Ks
            parts.append(mask[None] * dKs)
        return K, np.concatenate(parts, axis=0)

    def scaled(self, s2):
        return KroneckerSumRule(self.kx.scaled(s2), tuple(k.scaled(s2) for k in self.deltas))


# ---------------------------------------------------------------------------

def pair_diag(rule, X, ta, tb) -> np.ndarray:
    """``rule.cov((x_i, ta_i), (x_i, tb_i))`` for every row.

    All rules are built from stationary kernels, so ``k(x, x)`` does not
    depend on ``x`` and only the distinct output pairs need evaluating.
    """
    ta, tb = _pairs(ta), _pairs(tb)
    x0 = X[:1] if X.shape[0] else np.zeros((1, X.shape[1]))
    if ta.size and np.all(ta == ta[0]) and np.all(tb == tb[0]):
        return np.full(ta.size, rule.cov(x0, ta[:1], x0, tb[:1])[0, 0])
    pairs, inv = np.unique(np.column_stack([ta, tb]), axis=0, return_inverse=True)
    vals = np.array([rule.cov(x0, pairs[i, :1], x0, pairs[i, 1:])[0, 0] for i in range(len(pairs))])
    return vals[np.ravel(inv)]


def output_basis(t, T: int, shared: bool) -> np.ndarray:
    t = _pairs(t)
    if shared:
        return np.ones((t.size, 1))
    H = np.zeros((t.size, T))
    H[np.arange(t.size), t] = 1.0
    return H


@dataclass(frozen=True, eq=False)
class MVGPModel:
    """Conditioned multi-output GP in original units.

    ``noise_diag`` is the full diagonal added to the stacked prior
    covariance (observation noise plus jitter), one entry per row.
    """

    rule: object
    X: np.ndarray
    t: np.ndarray
    Y: np.ndarray
    noise: np.ndarray
    noise_diag: np.ndarray
    mean_coefs: np.ndarray
    shared_mean: bool = False
    factor: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)
    theta: np.ndarray = field(default=None, repr=False)

    @property
    def n_outputs(self) -> int:
        return self.rule.n_outputs

    n_fidelities = n_outputs

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def mean_constants(self) -> np.ndarray:
        if self.shared_mean:
            return np.full(self.n_outputs, self.mean_coefs[0])
        return self.mean_coefs.copy()

    def _check(self, fidelity):
        if not 1 <= int(fidelity) <= self.n_outputs:
            raise ValueError(f"fidelity {fidelity} out of range 1..{self.n_outputs}")
        return int(fidelity) - 1

    def prior_mean(self, t) -> np.ndarray:
        return output_basis(t, self.n_outputs, self.shared_mean) @ self.mean_coefs

    def _solve(self, A, ta):
        C = self.rule.cov(self.X, self.t, A, ta)
        return C, linalg.solve_triangular(self.factor, C, lower=True, check_finite=False)

    def predict(self, X, fidelity: int | None = None, full_cov: bool = False):
        s = self._check(self.n_outputs if fidelity is None else fidelity)
        X = _as_2d(X, self.dim)
        ts = np.full(X.shape[0], s)
        mean = self.prior_mean(ts)
        C, V = self._solve(X, ts)
        mean = mean + C.T @ self.weights
        if full_cov:
            return mean, self.rule.cov(X, ts, X, ts) - V.T @ V
        prior = pair_diag(self.rule, X, ts, ts)
        return mean, np.maximum(prior - np.einsum("ij,ij->j", V, V), 0.0)

    def predict_joint(self, x):
        """Posterior mean vector and covariance over all outputs at one input."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        T = self.n_outputs
        Xr = np.repeat(x[None], T, axis=0)
        ts = np.arange(T)
        C, V = self._solve(Xr, ts)
        mean = self.prior_mean(ts) + C.T @ self.weights
        cov = self.rule.cov(Xr, ts, Xr, ts) - V.T @ V
        return mean, 0.5 * (cov + cov.T)

    def joint_moments(self, X):
        """Posterior means (n, T) and per-input covariances over outputs (n, T, T)."""
        X = _as_2d(X, self.dim)
        n, T = X.shape[0], self.n_outputs
        means = np.empty((n, T))
        Vs = []
        for s in range(T):
            ts = np.full(n, s)
            C, V = self._solve(X, ts)
            means[:, s] = self.prior_mean(ts) + C.T @ self.weights
            Vs.append(V)
        cov = np.empty((n, T, T))
        for s in range(T):
            for u in range(s, T):
                prior = pair_diag(self.rule, X, np.full(n, s), np.full(n, u))
                c = prior - np.einsum("ij,ij->j", Vs[s], Vs[u])
                cov[:, s, u] = cov[:, u, s] = c
        return means, cov

    def posterior_cov(self, A, B, fidelity: int | None = None):
        s = self._check(self.n_outputs if fidelity is None else fidelity)
        A = _as_2d(A, self.dim)
        B = _as_2d(B, self.dim)
        ta, tb = np.full(A.shape[0], s), np.full(B.shape[0], s)
        _, Va = self._solve(A, ta)
        _, Vb = self._solve(B, tb)
        return self.rule.cov(A, ta, B, tb) - Va.T @ Vb

    def observation_noise(self, fidelity: int | None = None) -> float:
        s = self._check(self.n_outputs if fidelity is None else fidelity)
        return float(self.noise[s])

    def stacked_cov(self) -> np.ndarray:
        """Prior covariance of the stacked training data, noise excluded."""
        return self.rule.cov(self.X, self.t, self.X, self.t)

    def condition(self, x, y, fidelity: int | None = None, refit_mean: bool = True):
        s = self._check(self.n_outputs if fidelity is None else fidelity)
        x = _as_2d(x, self.dim)
        X = np.vstack([self.X, x])
        t = np.concatenate([self.t, np.full(x.shape[0], s)])
        Y = np.concatenate([self.Y, np.atleast_1d(np.asarray(y, dtype=float))])
        jit = self.noise_diag - self.noise[self.t]
        nd = np.concatenate([self.noise_diag, self.noise[s] + np.full(x.shape[0], jit.max(initial=0.0))])
        return build_mvgp(self.rule, X, t, Y, self.noise, noise_diag=nd, shared_mean=self.shared_mean,
                          mean_coefs=None if refit_mean else self.mean_coefs)


def build_mvgp(rule, X, t, Y, noise, *, noise_diag=None, shared_mean=False, mean_coefs=None,
               theta=None) -> MVGPModel:
    """Condition a multi-output GP with fixed covariance rule on stacked data."""
    X = np.asarray(X, dtype=float)
    t = _pairs(t)
    Y = np.asarray(Y, dtype=float).ravel()
    T = rule.n_outputs
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (T,)).copy()
    K = rule.cov(X, t, X, t)
    base = noise[t]
    if noise_diag is None:
        L, jit = factorize(K + np.diag(base))
        noise_diag = base + jit
    else:
        try:
            L = linalg.cholesky(K + np.diag(noise_diag), lower=True, check_finite=False)
        except linalg.LinAlgError:
            L, jit = factorize(K + np.diag(noise_diag))
            noise_diag = noise_diag + jit
    H = output_basis(t, T, shared_mean)
    coefs = gls_coefs(L, H, Y) if mean_coefs is None else np.asarray(mean_coefs, dtype=float)
    alpha = linalg.cho_solve((L, True), Y - H @ coefs, check_finite=False)
    return MVGPModel(rule=rule, X=X, t=t, Y=Y, noise=noise, noise_diag=np.asarray(noise_diag, float),
                     mean_coefs=coefs, shared_mean=shared_mean, factor=L, weights=alpha, theta=theta)


def predict_mvgp(m: MVGPModel, x):
    return m.predict_joint(x)


def fit_mvgp(X, t, Y, template, domain: BoxDomain, seed: int = 0, *, noise=0.0,
             shared_mean: bool = False, n_restarts: int = 10, warm_start=None,
             scale_output: Optional[int] = None) -> MVGPModel:
    """Joint maximum-likelihood fit of a covariance rule on stacked data.

    ``template`` fixes the structure (which entries are free, kernel count);
    its values are not used as a start.  ``noise`` is a scalar or per-output
    vector of fixed noise variances, or None to estimate one per output.
    Outputs are scaled by a single factor so that couplings keep their
    meaning; the scale comes from output ``scale_output`` (default: the
    last, i.e. highest fidelity) when it has at least two distinct values.
    """
    X = _as_2d(X, domain.dim)
    t = _pairs(t)
    Y = np.asarray(Y, dtype=float).ravel()
    T = template.n_outputs
    if not (X.shape[0] == t.size == Y.size) or Y.size == 0:
        raise ValueError("X, t, Y must be non-empty and of equal length")
    if t.min() < 0 or t.max() >= T:
        raise ValueError("output index out of range")
    so = T - 1 if scale_output is None else scale_output
    ys = Y[t == so]
    scale = float(np.std(ys)) if ys.size > 1 else 0.0
    if not scale > 1e-12:
        scale = float(np.std(Y)) if Y.size > 1 else 0.0
    if not scale > 1e-12:
        scale = 1.0
    shift = float(np.mean(Y))
    yst = (Y - shift) / scale
    H = output_basis(t, T, shared_mean)
    learn = noise is None
    fixed = None if learn else np.broadcast_to(np.asarray(noise, dtype=float), (T,)) / scale ** 2
    nk = template.theta().size
    onehot = [(t == s).astype(float) for s in range(T)]

    def nll(theta):
        rule = template.with_theta(theta[:nk])
        K, dK = rule.gram_grads(X, t)
        if learn:
            nv = np.exp(theta[nk:])
            K[np.diag_indices_from(K)] += nv[t]
            dK = np.concatenate([dK, np.array([np.diag(nv[s] * onehot[s]) for s in range(T)])], axis=0)
        else:
            K[np.diag_indices_from(K)] += fixed[t]
        return profiled_nll(K, dK, yst, H)

    bounds = template.bounds(domain) + ([LOG_NOISE_BOUNDS] * T if learn else [])
    rng = np.random.default_rng(seed)
    starts = []
    if warm_start is not None and len(warm_start) == len(bounds):
        starts.append(np.asarray(warm_start, dtype=float))
    tail = lambda r: (np.full(T, -8.0) if r is None else r.uniform(-12.0, -4.0, T)) if learn else np.zeros(0)
    starts.append(np.concatenate([template.start(domain, None), tail(None)]))
    while len(starts) < max(n_restarts, 1):
        starts.append(np.concatenate([template.start(domain, rng), tail(rng)]))
    theta, _ = multistart_minimize(nll, starts, bounds)
    rule = template.with_theta(theta[:nk]).scaled(scale ** 2)
    nvar = np.exp(theta[nk:]) * scale ** 2 if learn else fixed * scale ** 2
    return build_mvgp(rule, X, t, Y, nvar, shared_mean=shared_mean, theta=theta)
