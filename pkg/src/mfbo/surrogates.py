"""Multi-fidelity surrogate models.

Every model answers the same questions at a 1-based fidelity ``t``:

``predict(X, t)``
    posterior mean and variance of ``f_t``;
``predict_joint(x)``
    mean vector and covariance over all fidelities at one input;
``posterior_cov(A, B, t)``
    posterior cross-covariance of ``f_t``;
``condition(x, y, t)``
    the same model with one more observation, hyperparameters frozen.

Fidelity ``T`` (the last one) is the highest.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .gp import BoxDomain, GPModel, KernelSpec, build_gp, constant_basis, fit_gp, _as_2d
from .mvgp import (CompoundSymmetryRule, CoKrigingRule, KroneckerSumRule, LMCRule, MVGPModel,
                   ProductFidelityRule, build_mvgp, fit_mvgp)


@dataclass(frozen=True, eq=False)
class FidelityDataset:
    """Per-fidelity designs ``X[t-1]`` and observations ``F[t-1]`` plus costs.

    ``noise`` is the observation noise variance shared by all fidelities
    (``0.0`` for deterministic simulators, ``None`` to estimate it).
    """

    domain: BoxDomain
    X: tuple
    F: tuple
    costs: np.ndarray
    noise: Optional[float] = 0.0

    def __post_init__(self):
        d = self.domain.dim
        X = tuple(np.asarray(x, dtype=float).reshape(-1, d) for x in self.X)
        F = tuple(np.asarray(f, dtype=float).ravel() for f in self.F)
        costs = np.asarray(self.costs, dtype=float).ravel()
        if len(X) < 1 or len(X) != len(F) or costs.size != len(X):
            raise ValueError("need matching X, F and costs for T >= 1 fidelities")
        if np.any(costs <= 0):
            raise ValueError("costs must be positive")
        for t, (x, f) in enumerate(zip(X, F), start=1):
            if x.shape[0] != f.size:
                raise ValueError(f"fidelity {t}: {x.shape[0]} inputs but {f.size} outputs")
            if x.size and (np.any(x < self.domain.lower) or np.any(x > self.domain.upper)):
                raise ValueError(f"fidelity {t}: inputs outside the domain")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "costs", costs)

    @property
    def T(self) -> int:
        return len(self.X)

    def cost(self, t: int) -> float:
        return float(self.costs[t - 1])

    def add(self, x, f, t: int) -> "FidelityDataset":
        X = list(self.X)
        F = list(self.F)
        X[t - 1] = np.vstack([X[t - 1], np.atleast_2d(x)])
        F[t - 1] = np.append(F[t - 1], f)
        return replace(self, X=tuple(X), F=tuple(F))

    def stacked(self):
        X = np.vstack(self.X)
        t = np.concatenate([np.full(len(f), s) for s, f in enumerate(self.F)])
        return X, t, np.concatenate(self.F)

    def best_top(self) -> float:
        f = self.F[-1]
        return float(f.min()) if f.size else np.inf


def _check_fidelity(t, T):
    if not (isinstance(t, (int, np.integer)) and 1 <= t <= T):
        raise ValueError(f"fidelity {t} out of range 1..{T}")
    return int(t)


# ---------------------------------------------------------------------------
# stacked (joint likelihood) models

def fit_cokriging(data: FidelityDataset, seed: int = 0, *, b: Optional[float] = None,
                  n_restarts: int = 10, warm_start: Optional[MVGPModel] = None) -> MVGPModel:
    """Two-level auto-regressive model, joint ML over the stacked LF+HF data.

    Passing ``b`` fixes the scaling.  With ``b=0`` the likelihood splits into
    two independent GP fits, which are done separately (so the HF block is
    identical to :func:`fit_gp` on the HF data).
    """
    if data.T != 2:
        raise ValueError("coKriging is defined for exactly two fidelities")
    if min(len(f) for f in data.F) < 2:
        raise ValueError("coKriging needs at least two points per fidelity")
    d = data.domain.dim
    if b is not None and b == 0.0:
        m1 = fit_gp(data.X[0], data.F[0], data.domain, seed, noise=data.noise, n_restarts=n_restarts)
        m2 = fit_gp(data.X[1], data.F[1], data.domain, seed, noise=data.noise, n_restarts=n_restarts)
        rule = CoKrigingRule(0.0, m1.kernel, m2.kernel, fit_b=False)
        return _assemble_blocks(rule, [m1, m2])
    template = CoKrigingRule(1.0 if b is None else float(b), KernelSpec(np.ones(d)),
                             KernelSpec(np.ones(d)), fit_b=b is None)
    X, t, Y = data.stacked()
    warm = warm_start.theta if isinstance(warm_start, MVGPModel) else None
    return fit_mvgp(X, t, Y, template, data.domain, seed, noise=data.noise,
                    n_restarts=n_restarts, warm_start=warm)


def _assemble_blocks(rule, models: Sequence[GPModel]) -> MVGPModel:
    """Stack independently fitted GPs into one block-diagonal multi-output model."""
    X = np.vstack([m.X for m in models])
    t = np.concatenate([np.full(m.Y.size, s) for s, m in enumerate(models)])
    Y = np.concatenate([m.Y for m in models])
    nd = np.concatenate([m.noise_diag for m in models])
    noise = np.array([m.noise_variance for m in models])
    coefs = np.array([m.mean_constant for m in models])
    return build_mvgp(rule, X, t, Y, noise, noise_diag=nd, mean_coefs=coefs)


def fit_lmc(data: FidelityDataset, seed: int = 0, *, coupled: bool = True, n_restarts: int = 10,
            warm_start: Optional[MVGPModel] = None) -> MVGPModel:
    """Linear model of coregionalization with T latent SE kernels.

    The mixing matrix is unit lower-triangular (the free entries are the
    ones below the diagonal), which contains the coKriging structure as the
    T=2 case.  ``coupled=False`` fixes ``R = I``: the outputs decouple and
    each block is fitted on its own.
    """
    T, d = data.T, data.domain.dim
    if T == 1 or not coupled:
        models = [fit_gp(x, f, data.domain, seed, noise=data.noise, n_restarts=n_restarts)
                  for x, f in zip(data.X, data.F)]
        return _assemble_blocks(LMCRule(np.eye(T), tuple(m.kernel for m in models)), models)
    free = np.tril(np.ones((T, T), dtype=bool), -1)
    template = LMCRule(np.eye(T), tuple(KernelSpec(np.ones(d)) for _ in range(T)), free)
    X, t, Y = data.stacked()
    warm = warm_start.theta if isinstance(warm_start, MVGPModel) else None
    return fit_mvgp(X, t, Y, template, data.domain, seed, noise=data.noise,
                    n_restarts=n_restarts, warm_start=warm)


AUGMENTED_KERNELS = ("continuous", "compound", "kronecker")


def fit_augmented(data: FidelityDataset, kernel_choice: str = "continuous", seed: int = 0, *,
                  n_restarts: int = 10, warm_start: Optional[MVGPModel] = None) -> MVGPModel:
    """Single GP over ``(t, x)`` with a shared constant mean.

    ``kernel_choice`` is ``"continuous"`` (SE over the fidelity index mapped
    to [0, 1], times the design kernel), ``"compound"`` (one common
    correlation between distinct levels) or ``"kronecker"`` (design kernel
    plus a per-level discrepancy kernel that acts only within a level).
    """
    if kernel_choice not in AUGMENTED_KERNELS:
        raise ValueError(f"unknown fidelity kernel {kernel_choice!r}; expected one of {AUGMENTED_KERNELS}")
    T, d = data.T, data.domain.dim
    if T == 1:
        m = fit_gp(data.X[0], data.F[0], data.domain, seed, noise=data.noise, n_restarts=n_restarts)
        return build_mvgp(augmented_rule(kernel_choice, m.kernel, T), m.X, np.zeros(m.Y.size, int),
                          m.Y, [m.noise_variance], noise_diag=m.noise_diag, shared_mean=True,
                          mean_coefs=m.mean_coefs)
    template = augmented_rule(kernel_choice, KernelSpec(np.ones(d)), T)
    X, t, Y = data.stacked()
    warm = warm_start.theta if isinstance(warm_start, MVGPModel) else None
    return fit_mvgp(X, t, Y, template, data.domain, seed, noise=data.noise, shared_mean=True,
                    n_restarts=n_restarts, warm_start=warm)


def augmented_rule(kernel_choice: str, kx: KernelSpec, T: int, *, lt: float = 1.0, c: float = 1.0,
                   deltas=None):
    """Fidelity-augmented covariance rule with design kernel ``kx``."""
    if kernel_choice == "continuous":
        return ProductFidelityRule(kx, lt, T)
    if kernel_choice == "compound":
        return CompoundSymmetryRule(kx, c, T)
    if kernel_choice == "kronecker":
        if deltas is None:
            deltas = tuple(KernelSpec(kx.lengthscales, kx.signal_variance) for _ in range(T - 1))
        return KroneckerSumRule(kx, tuple(deltas))
    raise ValueError(f"unknown fidelity kernel {kernel_choice!r}; expected one of {AUGMENTED_KERNELS}")


# ---------------------------------------------------------------------------
# recursive models over a fidelity DAG

@dataclass(frozen=True)
class FidelityDAG:
    """Fidelity graph on nodes 1..T; an edge ``(p, t)`` makes ``p`` a parent of ``t``.

    Edges must point from a lower to a higher index, which makes the graph
    acyclic and 1..T a topological order.
    """

    T: int
    edges: tuple

    def __post_init__(self):
        edges = tuple(sorted({(int(p), int(c)) for p, c in self.edges}))
        if self.T < 1:
            raise ValueError("a fidelity graph needs at least one node")
        for p, c in edges:
            if not (1 <= p <= self.T and 1 <= c <= self.T):
                raise ValueError(f"edge {(p, c)} references a node outside 1..{self.T}")
            if p >= c:
                raise ValueError(f"edge {(p, c)} breaks the ordering p < t (cyclic or reversed graph)")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def chain(cls, T: int) -> "FidelityDAG":
        return cls(T, tuple((t, t + 1) for t in range(1, T)))

    def parents(self, t: int) -> tuple:
        return tuple(p for p, c in self.edges if c == t)

    def children(self, t: int) -> tuple:
        return tuple(c for p, c in self.edges if p == t)

    @property
    def sources(self) -> tuple:
        return tuple(t for t in range(1, self.T + 1) if not self.parents(t))


class _ParentBasis:
    """Mean basis ``[1?, zeta(x) * mu_p(x) for each parent p]``."""

    def __init__(self, parents, linear: bool, intercept: bool):
        self.parents = tuple(parents)
        self.linear = linear
        self.intercept = intercept

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        cols = [np.ones((X.shape[0], 1))] if self.intercept else []
        for p in self.parents:
            mu = p.mean(X)[:, None]
            cols.append(mu)
            if self.linear:
                cols.append(mu * X)
        return np.hstack(cols) if cols else np.zeros((X.shape[0], 0))


@dataclass(frozen=True, eq=False)
class _Node:
    gp: GPModel
    parents: tuple
    propagate: bool  # add parent variance (recursive) or not (hierarchical Kriging)

    def rho(self, X) -> list:
        """Scaling of each parent's mean at ``X``."""
        basis = self.gp.basis
        if not isinstance(basis, _ParentBasis):
            return []
        c = self.gp.mean_coefs
        o = 1 if basis.intercept else 0
        w = 1 + X.shape[1] if basis.linear else 1
        out = []
        for i in range(len(self.parents)):
            blk = c[o + i * w: o + (i + 1) * w]
            out.append(blk[0] + (X @ blk[1:] if basis.linear else 0.0) * np.ones(X.shape[0]))
        return out

    def mean(self, X):
        return self.gp.predict(X)[0]

    def predict(self, X):
        mu, var = self.gp.predict(X)
        if self.propagate:
            for r, p in zip(self.rho(X), self.parents):
                var = var + r ** 2 * p.predict(X)[1]
        return mu, var

    def posterior_cov(self, A, B):
        C = self.gp.posterior_cov(A, B)
        if self.propagate:
            for ra, rb, p in zip(self.rho(A), self.rho(B), self.parents):
                C = C + np.outer(ra, rb) * p.posterior_cov(A, B)
        return C


@dataclass(frozen=True, eq=False)
class RecursiveMF:
    """Per-node GPs fitted in topological order, each regressing on its parents' posterior means.

    ``kind`` is ``"recursive"`` (chain or general DAG, parent variance
    propagated) or ``"hierarchical"`` (parent mean as the prior trend, no
    intercept, only the node's own variance).
    """

    dag: FidelityDAG
    nodes: tuple
    kind: str = "recursive"
    linear_rho: bool = False
    couple: bool = True

    @property
    def n_fidelities(self) -> int:
        return self.dag.T

    @property
    def dim(self) -> int:
        return self.nodes[0].gp.dim

    @property
    def levels(self) -> tuple:
        return tuple(n.gp for n in self.nodes)

    def scaling(self, t: int, X) -> list:
        """Fitted parent coefficients (rho or b) of node ``t`` evaluated at ``X``."""
        return self.nodes[_check_fidelity(t, self.dag.T) - 1].rho(_as_2d(X, self.dim))

    def predict(self, X, fidelity: Optional[int] = None):
        t = _check_fidelity(self.dag.T if fidelity is None else fidelity, self.dag.T)
        return self.nodes[t - 1].predict(_as_2d(X, self.dim))

    def posterior_cov(self, A, B, fidelity: Optional[int] = None):
        t = _check_fidelity(self.dag.T if fidelity is None else fidelity, self.dag.T)
        return self.nodes[t - 1].posterior_cov(_as_2d(A, self.dim), _as_2d(B, self.dim))

    def joint_moments(self, X):
        """Means (n, T) and covariances (n, T, T) over all nodes.

        Cross-covariances follow the linear propagation
        ``cov(f_t, f_s) = sum_p rho_p cov(f_p, f_s)`` over the parents of ``t``.
        """
        X = _as_2d(X, self.dim)
        n, T = X.shape[0], self.dag.T
        means = np.empty((n, T))
        C = np.zeros((n, T, T))
        for i, node in enumerate(self.nodes):
            means[:, i], C[:, i, i] = node.predict(X)
            pidx = [self.nodes.index(p) for p in node.parents]
            rho = node.rho(X)
            for s in range(i):
                c = np.zeros(n)
                for r, j in zip(rho, pidx):
                    c += r * C[:, j, s]
                C[:, i, s] = C[:, s, i] = c
        return means, C

    def predict_joint(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        m, C = self.joint_moments(x[None])
        return m[0], C[0]

    def observation_noise(self, fidelity: Optional[int] = None) -> float:
        t = _check_fidelity(self.dag.T if fidelity is None else fidelity, self.dag.T)
        return self.nodes[t - 1].gp.noise_variance

    def condition(self, x, y, fidelity: Optional[int] = None, refit_mean: bool = True):
        """Add one observation to node ``t``; descendants are re-conditioned on the new parent means."""
        t = _check_fidelity(self.dag.T if fidelity is None else fidelity, self.dag.T)
        new = []
        changed = set()
        for i, node in enumerate(self.nodes, start=1):
            pidx = [self.nodes.index(p) for p in node.parents]
            if i != t and not any(j + 1 in changed for j in pidx):
                new.append(node)
                continue
            parents = tuple(new[j] for j in pidx)
            gp = node.gp
            X, Y = gp.X, gp.Y
            if i == t:
                X = np.vstack([X, _as_2d(x, self.dim)])
                Y = np.append(Y, y)
            basis = gp.basis
            if isinstance(basis, _ParentBasis):
                basis = _ParentBasis(parents, basis.linear, basis.intercept)
            gp = build_gp(X, Y, gp.kernel, gp.noise_variance, basis=basis, jitter=gp.jitter,
                          mean_coefs=None if refit_mean else gp.mean_coefs)
            new.append(_Node(gp, parents, node.propagate))
            changed.add(i)
        return replace(self, nodes=tuple(new))


def fit_gmgp_recursive(data: FidelityDataset, dag: FidelityDAG, seed: int = 0, *,
                       linear_rho: bool = False, couple: bool = True, n_restarts: int = 10,
                       warm_start: Optional[RecursiveMF] = None, _kind: str = "recursive") -> RecursiveMF:
    """Fit each node in topological order on its own data.

    A non-source node's mean is ``beta_0 + sum_p rho_p(x) mu_p(x)`` where
    ``mu_p`` is the frozen posterior mean of parent ``p``; coefficients are
    estimated by GLS jointly with the node's discrepancy kernel.
    ``couple=False`` forces all parent coefficients to zero.
    """
    if dag.T != data.T:
        raise ValueError(f"graph has {dag.T} nodes but the data has {data.T} fidelities")
    hk = _kind == "hierarchical"
    nodes = []
    for t in range(1, dag.T + 1):
        x, f = data.X[t - 1], data.F[t - 1]
        if len(f) < 1:
            raise ValueError(f"fidelity {t} has no data")
        parents = tuple(nodes[p - 1] for p in dag.parents(t)) if couple else ()
        if parents:
            basis = _ParentBasis(parents, linear_rho, intercept=not hk)
        else:
            basis = constant_basis
        warm = None
        if warm_start is not None and len(warm_start.nodes) == dag.T:
            warm = warm_start.nodes[t - 1].gp.theta
        try:
            gp = fit_gp(x, f, data.domain, seed, noise=data.noise, basis=basis,
                        intercept=not (hk and parents), n_restarts=n_restarts, warm_start=warm)
        except Exception as exc:
            raise type(exc)(f"level {t}: {exc}") from exc
        nodes.append(_Node(gp, parents, propagate=not hk))
    return RecursiveMF(dag, tuple(nodes), _kind, linear_rho, couple)


def fit_recursive(data: FidelityDataset, seed: int = 0, *, linear_rho: bool = False,
                  couple: bool = True, n_restarts: int = 10, warm_start=None) -> RecursiveMF:
    """Recursive chain model ``f_t = rho_{t-1}(x) mu_{t-1}(x) + delta_t(x)``."""
    return fit_gmgp_recursive(data, FidelityDAG.chain(data.T), seed, linear_rho=linear_rho,
                              couple=couple, n_restarts=n_restarts, warm_start=warm_start)


def fit_hierarchical_kriging(data: FidelityDataset, seed: int = 0, *, couple: bool = True,
                             n_restarts: int = 10, warm_start=None) -> RecursiveMF:
    """Hierarchical Kriging: level t has prior mean ``b_{t-1} mu_{t-1}(x)``.

    Level 1 is a constant-mean GP.  ``couple=False`` forces every ``b`` to 0,
    and each level then falls back to the level-1 (constant-mean) form.
    """
    return fit_gmgp_recursive(data, FidelityDAG.chain(data.T), seed, couple=couple,
                              n_restarts=n_restarts, warm_start=warm_start, _kind="hierarchical")


# ---------------------------------------------------------------------------

def mf_predict(model, x, t: int) -> tuple[float, float]:
    T = getattr(model, "n_fidelities", 1)
    t = _check_fidelity(t, T)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.dim,):
        raise ValueError(f"expected a vector of length {model.dim}, got shape {x.shape}")
    mu, var = model.predict(x[None], t if T > 1 else None)
    return float(mu[0]), float(max(var[0], 0.0))


SURROGATES = ("gp", "cokriging", "recursive", "hierarchical", "lmc", "gmgp",
              "augmented-continuous", "augmented-compound", "augmented-kronecker")


def fit_surrogate(name: str, data: FidelityDataset, seed: int = 0, *, dag: Optional[FidelityDAG] = None,
                  n_restarts: int = 10, warm_start=None, **options):
    """Fit a surrogate by name.

    ``"gp"`` fits a single GP on the highest-fidelity data only and returns
    a :class:`GPModel`; the other names return multi-fidelity models.
    """
    kw = dict(n_restarts=n_restarts, warm_start=warm_start)
    if name == "gp":
        warm = warm_start.theta if isinstance(warm_start, GPModel) else None
        return fit_gp(data.X[-1], data.F[-1], data.domain, seed, noise=data.noise,
                      n_restarts=n_restarts, warm_start=warm)
    if name == "cokriging":
        return fit_cokriging(data, seed, **kw, **options)
    if name == "recursive":
        return fit_recursive(data, seed, **kw, **options)
    if name == "hierarchical":
        return fit_hierarchical_kriging(data, seed, **kw, **options)
    if name == "lmc":
        return fit_lmc(data, seed, **kw, **options)
    if name == "gmgp":
        return fit_gmgp_recursive(data, dag or FidelityDAG.chain(data.T), seed, **kw, **options)
    if name.startswith("augmented-"):
        return fit_augmented(data, name.split("-", 1)[1], seed, **kw)
    raise ValueError(f"unknown surrogate {name!r}; expected one of {SURROGATES}")
