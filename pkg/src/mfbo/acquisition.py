"""Acquisition functions for minimization.

All functions take an :class:`AcquisitionState` and either one input vector
(returning a float) or a batch ``(n, d)`` (returning an array).  Larger is
better.  Predictions are taken at the highest fidelity of the surrogate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm, qmc

from .gp import GPModel, _as_2d

SIGMA_FLOOR = 1e-12


def beta_schedule(k: int, delta: float = 0.1) -> float:
    """Logarithmic confidence schedule ``2 log((k+1)^2 pi^2 / (6 delta))``."""
    return 2.0 * math.log((k + 1) ** 2 * math.pi ** 2 / (6.0 * delta))


@dataclass(eq=False)
class AcquisitionState:
    """Everything an acquisition function needs at one iteration.

    Parameters
    ----------
    model : surrogate
        A :class:`GPModel` or a multi-fidelity model.
    f_min : float
        Incumbent (best highest-fidelity value observed so far).
    k : int
        Iteration counter, drives the default LCB schedule.
    tau : float
        PI target margin.
    w : float
        WEI weight in [0, 1].
    beta : float, optional
        LCB constant; ``None`` uses :func:`beta_schedule`.
    n_mc : int
        Fantasy count for the knowledge gradient.
    seed : int
        Seed for every Monte-Carlo quantity derived from this state.
    costs : array, optional
        Per-fidelity costs, needed by the fidelity-aware functions.
    domain : BoxDomain, optional
        Needed by the knowledge gradient's candidate grid.
    """

    model: object
    f_min: float
    k: int = 0
    tau: float = 0.0
    w: float = 0.5
    beta: Optional[float] = None
    n_mc: int = 128
    seed: int = 0
    costs: Optional[np.ndarray] = None
    domain: object = None
    n_features: int = 2000
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def top(self) -> int:
        return getattr(self.model, "n_fidelities", 1)

    @property
    def beta_k(self) -> float:
        return beta_schedule(self.k) if self.beta is None else float(self.beta)


def _batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return _as_2d(x[None] if single else x, d), single


def _out(v, single):
    return float(v[0]) if single else v


def _top_fid(s):
    return None if isinstance(s.model, GPModel) else s.top


def posterior(s: AcquisitionState, X):
    """Highest-fidelity posterior mean and standard deviation at a batch."""
    mu, var = s.model.predict(X, _top_fid(s))
    return mu, np.sqrt(np.maximum(var, 0.0))


def _ei_terms(f_min, mu, sd):
    """The exploitation and exploration terms of EI, with the zero-variance limit."""
    imp = f_min - mu
    ok = sd >= SIGMA_FLOOR
    z = np.where(ok, imp / np.where(ok, sd, 1.0), 0.0)
    t1 = np.where(ok, imp * norm.cdf(z), np.maximum(imp, 0.0))
    t2 = np.where(ok, sd * norm.pdf(z), 0.0)
    return t1, t2


def pi_value(f_min, mu, sd, tau=0.0):
    mu, sd = np.asarray(mu, float), np.asarray(sd, float)
    gap = f_min - mu - tau
    ok = sd >= SIGMA_FLOOR
    return np.where(ok, norm.cdf(gap / np.where(ok, sd, 1.0)), (gap > 0).astype(float))


def ei_value(f_min, mu, sd):
    t1, t2 = _ei_terms(f_min, np.asarray(mu, float), np.asarray(sd, float))
    return np.maximum(t1 + t2, 0.0)


def wei_value(f_min, mu, sd, w):
    if not 0.0 <= w <= 1.0:
        raise ValueError("WEI weight must lie in [0, 1]")
    t1, t2 = _ei_terms(f_min, np.asarray(mu, float), np.asarray(sd, float))
    return np.maximum(w * t1 + (1.0 - w) * t2, 0.0)


def acq_pi(s: AcquisitionState, x):
    X, single = _batch(x, s.model.dim)
    mu, sd = posterior(s, X)
    return _out(pi_value(s.f_min, mu, sd, s.tau), single)


def acq_ei(s: AcquisitionState, x):
    X, single = _batch(x, s.model.dim)
    mu, sd = posterior(s, X)
    return _out(ei_value(s.f_min, mu, sd), single)


def acq_wei(s: AcquisitionState, x):
    X, single = _batch(x, s.model.dim)
    mu, sd = posterior(s, X)
    return _out(wei_value(s.f_min, mu, sd, s.w), single)


def acq_lcb(s: AcquisitionState, x):
    X, single = _batch(x, s.model.dim)
    mu, sd = posterior(s, X)
    beta = s.beta_k
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return _out(-(mu - math.sqrt(beta) * sd), single)


# ---------------------------------------------------------------------------
# knowledge gradient

def kg_grid(s: AcquisitionState) -> np.ndarray:
    """Candidate set for the inner minimum: 512*d Sobol points plus the training inputs."""
    if "kg_grid" not in s._cache:
        if s.domain is None:
            raise ValueError("the knowledge gradient needs AcquisitionState.domain")
        d = s.domain.dim
        sob = qmc.Sobol(d, scramble=True, seed=np.random.default_rng([s.seed, 11]))
        G = s.domain.lower + sob.random(512 * d) * s.domain.span
        Xobs = getattr(s.model, "X", np.zeros((0, d)))
        if hasattr(s.model, "t"):
            Xobs = Xobs[s.model.t == s.top - 1]
        elif hasattr(s.model, "nodes"):
            Xobs = s.model.nodes[-1].gp.X
        G = np.vstack([G, Xobs])
        s._cache["kg_grid"] = G
        mu, var = s.model.predict(G, _top_fid(s))
        s._cache["kg_mu"] = mu
        s._cache["kg_scale"] = max(float(var.max()), SIGMA_FLOOR)
    return s._cache["kg_grid"]


def kg_draws(s: AcquisitionState, x, n_mc: Optional[int] = None, seed: Optional[int] = None):
    """Per-fantasy improvement samples of the knowledge gradient at one input."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    M = s.n_mc if n_mc is None else n_mc
    if M < 1:
        raise ValueError("the knowledge gradient needs at least one fantasy")
    G = kg_grid(s)
    mu_g = s._cache["kg_mu"]
    fid = _top_fid(s)
    mu_x, var_x = s.model.predict(x[None], fid)
    noise = s.model.observation_noise(fid)
    total = float(var_x[0]) + noise
    best_now = min(float(mu_g.min()), float(mu_x[0]))
    # a (numerically) noise-free training point: the fantasy changes nothing
    if total <= 1e-8 * s._cache["kg_scale"]:
        return np.zeros(M)
    cross = s.model.posterior_cov(G, x[None], fid)[:, 0]
    a = np.append(mu_g, mu_x[0])
    b = np.append(cross, var_x[0]) / math.sqrt(total)
    rng = np.random.default_rng([s.seed if seed is None else seed, 17])
    Z = rng.standard_normal(M)
    mins = np.empty(M)
    for i in range(0, M, 1024):
        z = Z[i:i + 1024]
        mins[i:i + z.size] = (a[:, None] + b[:, None] * z[None, :]).min(axis=0)
    return best_now - mins


def acq_kg(s: AcquisitionState, x):
    """Monte-Carlo knowledge gradient with fantasies ``y ~ N(mu(x), sigma^2(x) + noise)``.

    Hyperparameters stay fixed, so the updated posterior mean on the
    candidate grid is linear in the fantasy value.  The same normal draws
    are used at every ``x`` which keeps the surface deterministic.
    """
    X, single = _batch(x, s.model.dim)
    vals = np.array([max(float(kg_draws(s, xi).mean()), 0.0) for xi in X])
    return _out(vals, single)


# ---------------------------------------------------------------------------
# constrained EI

def feasibility_probability(constraint_models: Sequence, X) -> np.ndarray:
    """``prod_i Phi(-mu_i / sigma_i)`` with the ``g <= 0`` feasible convention."""
    pf = np.ones(X.shape[0])
    for cm in constraint_models:
        mu, var = cm.predict(X)
        sd = np.sqrt(np.maximum(var, 0.0))
        ok = sd >= SIGMA_FLOOR
        pf = pf * np.where(ok, norm.cdf(-mu / np.where(ok, sd, 1.0)), (mu <= 0).astype(float))
    return pf


def acq_cei(s: AcquisitionState, x, constraint_models: Sequence = ()):
    """EI times the probability of feasibility.

    With no feasible observation yet (``f_min`` infinite) only the
    feasibility probability is returned.
    """
    X, single = _batch(x, s.model.dim)
    pf = feasibility_probability(constraint_models, X)
    if not math.isfinite(s.f_min):
        return _out(pf, single)
    mu, sd = posterior(s, X)
    return _out(ei_value(s.f_min, mu, sd) * pf, single)


# ---------------------------------------------------------------------------
# Thompson sampling

@dataclass(frozen=True, eq=False)
class TSPath:
    """One posterior sample path, fixed once drawn.

    ``f(x) = m(x) + phi(x) @ w + k(x, X) @ v`` where ``phi`` are random
    Fourier features of the SE kernel, ``w`` the prior weights and ``v``
    the pathwise correction that conditions the prior draw on the data.
    """

    omega: np.ndarray
    phase: np.ndarray
    weights: np.ndarray
    amp: float
    model: GPModel
    update: np.ndarray

    @property
    def n_features(self) -> int:
        return self.phase.size

    def features(self, X) -> np.ndarray:
        return self.amp * np.cos(X @ self.omega.T + self.phase)

    def prior(self, X) -> np.ndarray:
        return self.features(X) @ self.weights

    def __call__(self, x):
        X, single = _batch(x, self.model.dim)
        v = self.model.prior_mean(X) + self.prior(X)
        if self.update.size:
            v = v + self.model.kernel.matrix(X, self.model.X) @ self.update
        return _out(v, single)


def ts_sample_model(model: GPModel, seed: int, n_features: int = 2000) -> TSPath:
    """Draw a sample path from an SE-kernel GP posterior."""
    if not isinstance(model, GPModel):
        raise TypeError("Thompson sampling paths need a single-output SE-kernel GPModel")
    rng = np.random.default_rng([seed, 23])
    d = model.dim
    k = model.kernel
    omega = rng.standard_normal((n_features, d)) / k.lengthscales
    phase = rng.uniform(0.0, 2.0 * math.pi, n_features)
    w = rng.standard_normal(n_features)
    amp = math.sqrt(2.0 * k.signal_variance / n_features)
    path = TSPath(omega, phase, w, amp, model, np.zeros(0))
    if model.Y.size == 0:
        return path
    eps = rng.standard_normal(model.Y.size) * np.sqrt(model.noise_diag)
    resid = model.Y - model.prior_mean(model.X) - path.prior(model.X) - eps
    from scipy.linalg import cho_solve
    v = cho_solve((model.factor, True), resid, check_finite=False)
    return TSPath(omega, phase, w, amp, model, v)


def ts_sample(s: AcquisitionState) -> TSPath:
    return ts_sample_model(s.model, s.seed, s.n_features)


# ---------------------------------------------------------------------------
# multi-fidelity

def fidelity_correlation(model, X, t: int) -> np.ndarray:
    """Posterior correlation between ``f_t(x)`` and ``f_T(x)`` at each input."""
    T = getattr(model, "n_fidelities", 1)
    if not 1 <= t <= T:
        raise ValueError(f"fidelity {t} out of range 1..{T}")
    if t == T:
        return np.ones(X.shape[0])
    _, C = model.joint_moments(X)
    vt, vT, c = C[:, t - 1, t - 1], C[:, T - 1, T - 1], C[:, t - 1, T - 1]
    den = np.sqrt(np.maximum(vt, 0.0) * np.maximum(vT, 0.0))
    ok = den >= SIGMA_FLOOR
    return np.where(ok, np.clip(c / np.where(ok, den, 1.0), -1.0, 1.0), 0.0)


def acq_mf_heuristic(s: AcquisitionState, x, t: int):
    """``EI(x) * alpha_1(x, t) * alpha_2(t)``.

    ``alpha_1`` is the posterior correlation of fidelity ``t`` with the top
    fidelity at ``x`` and ``alpha_2 = c(T) / c(t)``.
    """
    if s.costs is None:
        raise ValueError("the multi-fidelity heuristic needs per-fidelity costs")
    X, single = _batch(x, s.model.dim)
    T = s.top
    a1 = fidelity_correlation(s.model, X, t)
    a2 = float(s.costs[T - 1] / s.costs[t - 1])
    return _out(acq_ei(s, X) * a1 * a2, single)


def fidelity_query_scores(s: AcquisitionState, x_new, n_fantasy: int = 10) -> np.ndarray:
    """The fidelity-query values ``gamma(x_new, t)`` for t = 1..T.

    For each fidelity, ``n_fantasy`` fictitious observations drawn from the
    fidelity's predictive distribution are added one at a time (kernel
    hyperparameters frozen) and the top-fidelity standard deviation at
    ``x_new`` is averaged.  Gamma is the ratio of the resulting reduction to
    the reduction from a top-fidelity fantasy, times ``c(T) / c(t)``.
    """
    if n_fantasy < 1:
        raise ValueError("n_fantasy must be >= 1")
    if s.costs is None:
        raise ValueError("the fidelity query needs per-fidelity costs")
    x_new = np.atleast_1d(np.asarray(x_new, dtype=float))
    m = s.model
    T = s.top
    rng = np.random.default_rng([s.seed, 29])
    sd_now = math.sqrt(max(m.predict(x_new[None], T)[1][0], 0.0))
    sbar = np.empty(T)
    for t in range(1, T + 1):
        mu_t, var_t = m.predict(x_new[None], t)
        sd_pred = math.sqrt(max(var_t[0], 0.0) + m.observation_noise(t))
        acc = 0.0
        for _ in range(n_fantasy):
            y = mu_t[0] + sd_pred * rng.standard_normal()
            m2 = m.condition(x_new, y, t)
            acc += math.sqrt(max(m2.predict(x_new[None], T)[1][0], 0.0))
        sbar[t - 1] = acc / n_fantasy
    den = sd_now - sbar[T - 1]
    if den < SIGMA_FLOOR:
        out = np.zeros(T)
        out[T - 1] = 1.0
        return out
    return (sd_now - sbar) / den * (s.costs[T - 1] / np.asarray(s.costs, float))


def fidelity_query(s: AcquisitionState, x_new, n_fantasy: int = 10) -> int:
    """Fidelity maximizing the uncertainty reduction per unit cost; ties go to the highest."""
    g = fidelity_query_scores(s, x_new, n_fantasy)
    best = np.flatnonzero(g == g.max())
    return int(best.max()) + 1


ACQUISITIONS = {"pi": acq_pi, "ei": acq_ei, "wei": acq_wei, "lcb": acq_lcb, "kg": acq_kg}


def get_acquisition(name: str):
    try:
        return ACQUISITIONS[name]
    except KeyError:
        raise ValueError(f"unknown acquisition {name!r}; expected one of {sorted(ACQUISITIONS)}") from None
