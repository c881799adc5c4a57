"""Acquisition maximization and the optimization loops.

Every loop returns a :class:`RunTrace`: one record per objective evaluation
(initial design first, tagged iteration 0) carrying the running best
highest-fidelity value and the cumulative evaluation cost.

Randomness is derived from ``(seed, purpose, *keys)`` through
:class:`numpy.random.SeedSequence`, so each step of a run draws from its own
stream and results do not depend on evaluation order or worker count.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .acquisition import (AcquisitionState, acq_cei, acq_mf_heuristic, fidelity_query,
                          get_acquisition, ts_sample_model)
from .benchmarks.external import EvaluationError
from .benchmarks.functions import BenchmarkProblem
from .gp import BoxDomain, GPModel, TrainingError, fit_gp
from .surrogates import SURROGATES, FidelityDataset, fit_surrogate

# stream purposes
INIT, MAX, FIT, ACQ, GUARD, TS = 1, 2, 3, 4, 5, 6


def subseed(seed: int, purpose: int, *keys: int) -> int:
    """A 32-bit integer seed for one (purpose, keys) stream of a run."""
    return int(np.random.SeedSequence([int(seed), purpose, *map(int, keys)]).generate_state(1)[0])


def stream(seed: int, purpose: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), purpose, *map(int, keys)])


class AcquisitionError(RuntimeError):
    """The acquisition function could not be maximized."""


# ---------------------------------------------------------------------------
# maximization

@dataclass(frozen=True)
class MaximizerConfig:
    """Multistart settings for :func:`maximize_acquisition`.

    Parameters
    ----------
    restarts : int
        Uniform random starting points.
    steps : int
        Projected forward-difference ascent steps per start.
    tol : float
        Stop a start once its projected gradient norm (unit-cube scale)
        falls below this.
    polish : int
        Best candidates refined further with L-BFGS-B.
    fd_step : float
        Finite-difference step in unit-cube coordinates.
    seed : int
    """

    restarts: int = 1000
    steps: int = 30
    tol: float = 1e-12
    polish: int = 5
    fd_step: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.steps < 0 or self.polish < 0:
            raise ValueError("steps and polish must be nonnegative")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")


def _lexbest(X, vals):
    """Index of the largest value; exact ties go to the lexicographically smallest row."""
    best = vals.max()
    idx = np.flatnonzero(vals == best)
    if idx.size == 1:
        return int(idx[0])
    sub = X[idx]
    order = np.lexsort(sub.T[::-1])
    return int(idx[order[0]])


def maximize_acquisition(alpha: Callable, domain: BoxDomain, cfg: MaximizerConfig = MaximizerConfig()):
    """Multistart maximization of a batched function over a box.

    ``alpha`` maps an ``(n, d)`` array to ``n`` values.  All starts climb
    together by projected forward-difference gradient ascent with a per-start
    adaptive step; the best few are then polished with L-BFGS-B.

    Returns
    -------
    x : ndarray
    value : float
    """
    d = domain.dim
    lo, span = domain.lower, domain.span

    def f(U):
        v = np.asarray(alpha(lo + U * span), dtype=float).reshape(-1)
        return np.where(np.isfinite(v), v, -np.inf)

    rng = stream(cfg.seed, MAX)
    U = rng.random((cfg.restarts, d))
    vals = f(U)
    if not np.isfinite(vals).any():
        raise AcquisitionError("acquisition is non-finite at every starting point")
    step = np.full(cfg.restarts, 0.1)
    active = np.isfinite(vals)
    h = cfg.fd_step
    eye = np.eye(d)
    for _ in range(cfg.steps):
        ids = np.flatnonzero(active)
        if ids.size == 0:
            break
        Ua = U[ids]
        # forward differences, stepping backwards at the upper face
        hs = np.where(Ua + h <= 1.0, h, -h)
        Up = Ua[:, None, :] + hs[:, :, None] * eye
        fv = f(Up.reshape(-1, d)).reshape(ids.size, d)
        g = (fv - vals[ids, None]) / hs
        g[~np.isfinite(g)] = 0.0
        # drop components pushing out of the box
        g[(Ua <= 0.0) & (g < 0)] = 0.0
        g[(Ua >= 1.0) & (g > 0)] = 0.0
        gn = np.linalg.norm(g, axis=1)
        done = gn <= cfg.tol
        active[ids[done]] = False
        keep = ~done
        ids, Ua, g, gn = ids[keep], Ua[keep], g[keep], gn[keep]
        if ids.size == 0:
            break
        cand = np.clip(Ua + step[ids, None] * g / gn[:, None], 0.0, 1.0)
        fc = f(cand)
        up = fc > vals[ids]
        U[ids[up]] = cand[up]
        vals[ids[up]] = fc[up]
        step[ids[up]] *= 1.5
        step[ids[~up]] *= 0.5
        active[ids[step[ids] < 1e-10]] = False

    if cfg.polish:
        order = np.argsort(-vals, kind="stable")[: cfg.polish]
        for i in order:
            if np.isfinite(vals[i]):
                u, v = _polish(f, U[i], cfg)
                if v > vals[i]:
                    U[i], vals[i] = u, v
    X = lo + U * span
    i = _lexbest(X, vals)
    return domain.clip(X[i]), float(vals[i])


def _polish(f, u0, cfg: MaximizerConfig):
    """L-BFGS-B on ``-f`` in the unit cube with one batched central-difference gradient per step."""
    d = u0.size
    h = max(cfg.fd_step, 1e-8)
    eye = np.eye(d)

    def fun(u):
        up = np.clip(u + h * eye, 0.0, 1.0)
        um = np.clip(u - h * eye, 0.0, 1.0)
        v = f(np.vstack([u[None], up, um]))
        if not np.isfinite(v[0]):
            return 1e300, np.zeros(d)
        g = (v[1:d + 1] - v[d + 1:]) / np.diag(up - um)
        return -v[0], -np.where(np.isfinite(g), g, 0.0)

    res = minimize(fun, u0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * d,
                   options={"ftol": cfg.tol, "gtol": cfg.tol, "maxiter": 100})
    u = np.clip(res.x, 0.0, 1.0)
    return u, float(f(u[None])[0])


# ---------------------------------------------------------------------------
# traces

@dataclass(frozen=True)
class TraceRecord:
    trial: int
    iteration: int
    fidelity: int
    x: tuple
    f: float
    best_f: float
    cum_cost: float


def trace_header(d: int) -> str:
    return ",".join(["trial", "iteration", "fidelity"] + [f"x_{j}" for j in range(1, d + 1)]
                    + ["f", "best_f", "cum_cost"])


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class RunTrace:
    """Evaluation records of one run plus the final incumbent.

    ``status`` is ``"ok"``, ``"stalled"`` (augmented Lagrangian early stop)
    or a ``"<stage> failed: <message>"`` diagnostic for an aborted run.
    """

    dim: int
    records: list = field(default_factory=list)
    x_min: Optional[np.ndarray] = None
    f_min: float = math.inf
    status: str = "ok"
    al_state: Optional["ALState"] = None

    @property
    def ok(self) -> bool:
        return not self.status.endswith("failed") and "failed:" not in self.status

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(trace_header(self.dim) + "\n")
        for r in self.records:
            row = [str(r.trial), str(r.iteration), str(r.fidelity)] + [_fmt(v) for v in r.x]
            row += [_fmt(r.f), _fmt(r.best_f), _fmt(r.cum_cost)]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


# ---------------------------------------------------------------------------
# acquisition settings

@dataclass(frozen=True)
class AcquisitionSpec:
    """Acquisition choice and its parameters.

    ``maximizer`` overrides the run's :class:`MaximizerConfig` (its seed is
    replaced per iteration).
    """

    name: str = "ei"
    tau: float = 0.0
    w: float = 0.5
    beta: Optional[float] = None
    n_mc: int = 128
    n_fantasy: int = 10
    n_features: int = 2000
    maximizer: Optional[MaximizerConfig] = None

    def __post_init__(self):
        if self.name != "cei":
            get_acquisition(self.name)
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")


def _state(spec: AcquisitionSpec, model, f_min, k, seed, data) -> AcquisitionState:
    return AcquisitionState(model, f_min, k=k - 1, tau=spec.tau, w=spec.w, beta=spec.beta,
                            n_mc=spec.n_mc, seed=subseed(seed, ACQ, k), costs=data.costs,
                            domain=data.domain, n_features=spec.n_features)


# ---------------------------------------------------------------------------
# run bookkeeping

class _Abort(Exception):
    pass


class _Run:
    """Datasets, trace and incumbent of one run.

    ``fids`` maps the run's fidelity indices to the problem's (a single
    fidelity view of a multi-fidelity problem records the true index).
    """

    def __init__(self, problem: BenchmarkProblem, seed: int, trial: int, fids=None,
                 constrained: bool = False, feas_tol: float = 0.0, noise=0.0):
        self.problem = problem
        self.seed = seed
        self.trial = trial
        self.fids = list(fids) if fids is not None else list(range(1, problem.T + 1))
        self.T = len(self.fids)
        d = problem.dim
        self.data = FidelityDataset(problem.domain, [np.zeros((0, d))] * self.T, [np.zeros(0)] * self.T,
                                    problem.costs[np.array(self.fids) - 1], noise=noise)
        self.trace = RunTrace(d)
        self.cost = 0.0
        self.constrained = constrained
        self.feas_tol = feas_tol
        self.G = np.zeros((0, len(problem.constraints)))
        self.iteration = 0

    def evaluate(self, x, t: int):
        """Evaluate run fidelity ``t`` at ``x`` and record it."""
        x = self.problem.domain.clip(np.asarray(x, dtype=float))
        try:
            f = self.problem.evaluate(x, self.fids[t - 1])
        except EvaluationError as exc:
            raise _Abort(f"evaluation failed: {exc}") from None
        if not math.isfinite(f):
            raise _Abort(f"evaluation failed: non-finite value at x={x.tolist()}")
        self.cost += float(self.data.costs[t - 1])
        self.data = self.data.add(x, f, t)
        tr = self.trace
        if t == self.T:
            ok = True
            if self.constrained:
                g = self.problem.evaluate_constraints(x)
                self.G = np.vstack([self.G, g])
                ok = bool(np.all(g <= self.feas_tol))
            if ok and f < tr.f_min:
                tr.f_min, tr.x_min = f, x.copy()
        tr.records.append(TraceRecord(self.trial, self.iteration, self.fids[t - 1], tuple(x), f,
                                      tr.f_min, self.cost))
        return f

    def initial(self, sizes, design: str = "random"):
        """Initial design: the highest fidelity first, then the lower ones."""
        if len(sizes) != self.T:
            raise ValueError(f"need {self.T} initial sizes, got {len(sizes)}")
        if sizes[-1] < 1:
            raise ValueError("the highest fidelity needs at least one initial point")
        for t in [self.T] + list(range(1, self.T)):
            n = int(sizes[t - 1])
            if n < 0:
                raise ValueError("initial sizes must be nonnegative")
            if n == 0:
                continue
            key = 0 if t == self.T else 1000 + t
            rng = stream(self.seed, INIT, key)
            U = initial_design(rng, n, self.problem.dim, design)
            for u in U:
                self.evaluate(self.problem.domain.lower + u * self.problem.domain.span, t)

    def guard(self, x, k: int):
        """Nudge ``x`` away from existing samples (within 1e-9) to keep refits well posed."""
        Xall = np.vstack(self.data.X)
        if Xall.shape[0] == 0 or np.min(np.abs(Xall - x).max(axis=1)) > 1e-9:
            return x
        dom = self.problem.domain
        delta = stream(self.seed, GUARD, k).uniform(-1.0, 1.0, dom.dim) * 1e-6 * dom.span
        y = x + delta
        out = (y < dom.lower) | (y > dom.upper)
        y[out] = x[out] - delta[out]
        return dom.clip(y)


def initial_design(rng: np.random.Generator, n: int, d: int, design: str = "random") -> np.ndarray:
    """``n`` points in the unit cube: uniform (``"random"``) or Latin hypercube (``"lhs"``)."""
    if design == "random":
        return rng.random((n, d))
    if design == "lhs":
        return qmc.LatinHypercube(d, seed=rng).random(n)
    raise ValueError(f"unknown initial design {design!r}; expected 'random' or 'lhs'")


def _fit(run: _Run, surrogate: str, k: int, n_restarts: int, warm, **options):
    seed = subseed(run.seed, FIT, k)
    try:
        return fit_surrogate(surrogate, run.data, seed, n_restarts=n_restarts, warm_start=warm, **options)
    except (TrainingError, np.linalg.LinAlgError):
        pass
    # second attempt from scratch with more starts; the factorization already escalates jitter
    try:
        return fit_surrogate(surrogate, run.data, seed, n_restarts=2 * n_restarts, warm_start=None, **options)
    except (TrainingError, np.linalg.LinAlgError) as exc:
        raise _Abort(f"training failed: {exc}") from None


def _maximize(alpha, run: _Run, cfg: MaximizerConfig, k: int, *keys):
    try:
        return maximize_acquisition(alpha, run.problem.domain, replace(cfg, seed=subseed(run.seed, MAX, k, *keys)))
    except AcquisitionError as exc:
        raise _Abort(f"acquisition failed: {exc}") from None


def _finish(run: _Run, status: str = "ok") -> RunTrace:
    run.trace.status = status
    return run.trace


DEFAULT_MAXIMIZER = MaximizerConfig()
KG_MAXIMIZER = MaximizerConfig(restarts=32, steps=10, polish=2)


def _max_cfg(spec: AcquisitionSpec, maximizer: Optional[MaximizerConfig]):
    if spec.maximizer is not None:
        return spec.maximizer
    if maximizer is not None:
        return maximizer
    return KG_MAXIMIZER if spec.name == "kg" else DEFAULT_MAXIMIZER


def _check_budget(K):
    if K < 0:
        raise ValueError("K must be nonnegative")


def _surrogate_for(run: _Run, surrogate: str) -> str:
    if surrogate not in SURROGATES:
        raise ValueError(f"unknown surrogate {surrogate!r}; expected one of {SURROGATES}")
    # with one fidelity every multi-fidelity model reduces to the plain GP
    return "gp" if run.T == 1 else surrogate


def _constraint_models(run: _Run, k: int, n_restarts: int):
    Xh = run.data.X[-1]
    models = []
    for i in range(run.G.shape[1]):
        models.append(fit_gp(Xh, run.G[:, i], run.problem.domain, subseed(run.seed, FIT, k, 100 + i),
                             noise=run.data.noise, n_restarts=n_restarts))
    return models


# ---------------------------------------------------------------------------
# drivers

def run_mf_no_fidelity(problem: BenchmarkProblem, acq: AcquisitionSpec, K: int, sizes: Sequence[int],
                       seed: int = 0, *, surrogate: str = "cokriging", trial: int = 0,
                       maximizer: Optional[MaximizerConfig] = None, n_restarts: int = 10,
                       design: str = "random", warm_start: bool = True, fids=None,
                       surrogate_options: Optional[dict] = None) -> RunTrace:
    """Evaluate every fidelity at each acquisition maximizer.

    Each iteration adds ``T`` records (highest fidelity first); the incumbent
    is the best highest-fidelity observation.  With ``acq.name == "cei"``
    and constraints on the problem the objective EI is multiplied by the
    probability of feasibility from one GP per constraint.
    """
    _check_budget(K)
    constrained = acq.name == "cei"
    if constrained and not problem.constraints:
        raise ValueError("constrained EI needs a problem with constraints")
    run = _Run(problem, seed, trial, fids, constrained=constrained)
    surrogate = _surrogate_for(run, surrogate)
    cfg = _max_cfg(acq, maximizer)
    opts = surrogate_options or {}
    try:
        run.initial(sizes, design)
        model = None
        for k in range(1, K + 1):
            run.iteration = k
            model = _fit(run, surrogate, k, n_restarts, model if warm_start else None, **opts)
            s = _state(acq, model, run.trace.f_min, k, seed, run.data)
            if constrained:
                cms = _constraint_models(run, k, n_restarts)
                x, _ = _maximize(lambda X: acq_cei(s, X, cms), run, cfg, k)
            else:
                fn = get_acquisition(acq.name)
                x, _ = _maximize(lambda X: fn(s, X), run, cfg, k)
            x = run.guard(x, k)
            for t in [run.T] + list(range(1, run.T)):
                run.evaluate(x, t)
    except _Abort as exc:
        return _finish(run, str(exc))
    return _finish(run)


def run_generic_bo(problem: BenchmarkProblem, acq: AcquisitionSpec, K: int, N: int, seed: int = 0, *,
                   trial: int = 0, maximizer: Optional[MaximizerConfig] = None, n_restarts: int = 10,
                   design: str = "random", warm_start: bool = True) -> RunTrace:
    """Single-fidelity BO on the highest fidelity of ``problem`` with ``N`` initial points."""
    return run_mf_no_fidelity(problem, acq, K, (N,), seed, surrogate="gp", trial=trial,
                              maximizer=maximizer, n_restarts=n_restarts, design=design,
                              warm_start=warm_start, fids=(problem.T,))


def ts_constrained_select(f_values, g_values, candidates=None):
    """Pick among candidates scored by sample paths.

    Parameters
    ----------
    f_values : (q,) objective path values
    g_values : (q, I) constraint path values, ``<= 0`` feasible
    candidates : (q, d) array, optional

    Returns the chosen index, or the chosen row when ``candidates`` is given.
    The feasible candidate with the lowest objective wins; with none
    feasible, the one with the smallest total violation.
    """
    f = np.asarray(f_values, dtype=float).ravel()
    g = np.asarray(g_values, dtype=float).reshape(f.size, -1)
    if f.size < 1:
        raise ValueError("need at least one candidate")
    feas = np.all(g <= 0.0, axis=1)
    if feas.any():
        idx = np.flatnonzero(feas)
        i = int(idx[np.argmin(f[idx])])
    else:
        i = int(np.argmin(np.maximum(g, 0.0).sum(axis=1)))
    return i if candidates is None else np.asarray(candidates)[i]


def run_ts(problem: BenchmarkProblem, K: int, N: int, seed: int = 0, *, trial: int = 0,
           maximizer: Optional[MaximizerConfig] = None, n_restarts: int = 10, n_features: int = 2000,
           n_candidates: int = 1000, design: str = "random", warm_start: bool = True) -> RunTrace:
    """Sequential Thompson sampling on the highest fidelity.

    Each iteration draws one posterior sample path and evaluates its
    minimizer.  When the problem has constraints, a path is drawn for every
    constraint too and the next point is chosen by :func:`ts_constrained_select`
    among random candidates plus the objective path's minimizer.
    """
    _check_budget(K)
    constrained = bool(problem.constraints)
    run = _Run(problem, seed, trial, (problem.T,), constrained=constrained)
    cfg = maximizer or DEFAULT_MAXIMIZER
    try:
        run.initial((N,), design)
        model = None
        for k in range(1, K + 1):
            run.iteration = k
            model = _fit(run, "gp", k, n_restarts, model if warm_start else None)
            path = ts_sample_model(model, subseed(seed, TS, k), n_features)
            x, _ = _maximize(lambda X: -path(X), run, cfg, k)
            if constrained:
                cms = _constraint_models(run, k, n_restarts)
                gpaths = [ts_sample_model(cm, subseed(seed, TS, k, 1 + i), n_features)
                          for i, cm in enumerate(cms)]
                dom = problem.domain
                C = np.vstack([x, dom.lower + stream(seed, TS, k, 0).random((n_candidates, dom.dim)) * dom.span])
                G = np.column_stack([gp(C) for gp in gpaths])
                x = ts_constrained_select(path(C), G, C)
            x = run.guard(x, k)
            run.evaluate(x, 1)
    except _Abort as exc:
        return _finish(run, str(exc))
    return _finish(run)


def run_mf_heuristic(problem: BenchmarkProblem, K: int, sizes: Sequence[int], seed: int = 0, *,
                     surrogate: str = "cokriging", acq: AcquisitionSpec = AcquisitionSpec("ei"),
                     trial: int = 0, maximizer: Optional[MaximizerConfig] = None, n_restarts: int = 10,
                     design: str = "random", warm_start: bool = True,
                     surrogate_options: Optional[dict] = None) -> RunTrace:
    """Maximize ``EI(x) * corr_t(x) * c(T)/c(t)`` for each fidelity and evaluate the best pair.

    Ties between fidelities go to the higher one.
    """
    _check_budget(K)
    run = _Run(problem, seed, trial)
    surrogate = _surrogate_for(run, surrogate)
    cfg = _max_cfg(acq, maximizer)
    opts = surrogate_options or {}
    try:
        run.initial(sizes, design)
        model = None
        for k in range(1, K + 1):
            run.iteration = k
            model = _fit(run, surrogate, k, n_restarts, model if warm_start else None, **opts)
            s = _state(acq, model, run.trace.f_min, k, seed, run.data)
            best = None
            for t in range(run.T, 0, -1):
                keys = () if t == run.T else (t,)
                x, v = _maximize(lambda X: acq_mf_heuristic(s, X, t), run, cfg, k, *keys)
                if best is None or v > best[1]:
                    best = (x, v, t)
            x, _, t = best
            run.evaluate(run.guard(x, k), t)
    except _Abort as exc:
        return _finish(run, str(exc))
    return _finish(run)


def run_mf_sequential(problem: BenchmarkProblem, acq: AcquisitionSpec, K: int, sizes: Sequence[int],
                      seed: int = 0, *, surrogate: str = "cokriging", trial: int = 0,
                      maximizer: Optional[MaximizerConfig] = None, n_restarts: int = 10,
                      design: str = "random", warm_start: bool = True,
                      surrogate_options: Optional[dict] = None) -> RunTrace:
    """Maximize a fidelity-free acquisition, then let the fidelity query pick where to evaluate."""
    _check_budget(K)
    run = _Run(problem, seed, trial)
    surrogate = _surrogate_for(run, surrogate)
    cfg = _max_cfg(acq, maximizer)
    fn = get_acquisition(acq.name)
    opts = surrogate_options or {}
    try:
        run.initial(sizes, design)
        model = None
        for k in range(1, K + 1):
            run.iteration = k
            model = _fit(run, surrogate, k, n_restarts, model if warm_start else None, **opts)
            s = _state(acq, model, run.trace.f_min, k, seed, run.data)
            x, _ = _maximize(lambda X: fn(s, X), run, cfg, k)
            x = run.guard(x, k)
            t = 1 if run.T == 1 else fidelity_query(s, x, acq.n_fantasy)
            run.evaluate(x, t)
    except _Abort as exc:
        return _finish(run, str(exc))
    return _finish(run)


# ---------------------------------------------------------------------------
# augmented Lagrangian

@dataclass
class ALState:
    """Multipliers, penalty parameter and tolerances of the augmented Lagrangian.

    ``eta1`` bounds the constraint violation ``||max(0, g)||`` accepted as
    feasible; ``eta2`` is the smallest decrease of the best feasible value
    that counts as progress for the stall counter.
    """

    lam: np.ndarray
    rho: float = 1.0
    eta1: float = 1e-3
    eta2: float = 1e-9

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float).ravel().copy()
        if np.any(self.lam < 0):
            raise ValueError("multipliers must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ValueError("tolerances must be positive")

    def lagrangian(self, f, G) -> np.ndarray:
        """``f + lam . g + sum(max(0, g)^2) / (2 rho)`` row by row."""
        f = np.asarray(f, dtype=float)
        G = np.asarray(G, dtype=float).reshape(f.size, -1)
        return f + G @ self.lam + (np.maximum(G, 0.0) ** 2).sum(axis=1) / (2.0 * self.rho)

    def violation(self, G) -> np.ndarray:
        return np.linalg.norm(np.maximum(np.atleast_2d(G), 0.0), axis=1)


def run_augmented_lagrangian(problem: BenchmarkProblem, K: int, N: int, seed: int = 0, *,
                             state: Optional[ALState] = None, inner_steps: int = 1,
                             acq: AcquisitionSpec = AcquisitionSpec("ei"), stall: int = 5,
                             trial: int = 0, maximizer: Optional[MaximizerConfig] = None,
                             n_restarts: int = 10, design: str = "random") -> RunTrace:
    """Minimize the augmented Lagrangian by BO in an outer multiplier loop.

    Each outer iteration fits a GP to the Lagrangian values of all samples
    (recomputed with the current multipliers), runs ``inner_steps``
    acquisition steps, takes the best sample as the iterate ``x^k``, sets
    ``lam = max(0, g(x^k) / rho)`` and halves ``rho`` if ``x^k`` is
    infeasible.  The run stops after ``K`` outer iterations, or earlier
    once the iterate is feasible (within ``eta1``) and the best feasible
    value has not improved for ``stall`` outer iterations.

    The incumbent is the best objective value among samples whose violation
    is at most ``eta1``.
    """
    if not problem.constraints:
        raise ValueError("the augmented Lagrangian needs a constrained problem")
    if inner_steps < 1:
        raise ValueError("inner_steps must be >= 1")
    _check_budget(K)
    I = len(problem.constraints)
    st = ALState(np.zeros(I)) if state is None else ALState(state.lam, state.rho, state.eta1, state.eta2)
    if st.lam.size != I:
        raise ValueError(f"need {I} multipliers, got {st.lam.size}")
    run = _Run(problem, seed, trial, (problem.T,), constrained=True)
    cfg = _max_cfg(acq, maximizer)
    fn = get_acquisition(acq.name)
    status = "ok"
    try:
        _al_initial(run, (N,), design, st)
        warm = None
        best_seen = run.trace.f_min
        quiet = 0
        step = 0
        for k in range(1, K + 1):
            for _ in range(inner_steps):
                step += 1
                run.iteration = k
                Xh, fh = run.data.X[0], run.data.F[0]
                W = warp_values(st.lagrangian(fh, run.G))
                warm = _fit_values(run, Xh, W, step, n_restarts, warm)
                s = AcquisitionState(warm, float(W.min()), k=step - 1, tau=acq.tau, w=acq.w, beta=acq.beta,
                                     n_mc=acq.n_mc, seed=subseed(seed, ACQ, step), domain=run.problem.domain)
                x, _ = _maximize(lambda X: fn(s, X), run, cfg, step)
                _al_evaluate(run, run.guard(x, step), st)
            L = st.lagrangian(run.data.F[0], run.G)
            i = _argmin_lex(run.data.X[0], L)
            g = run.G[i]
            st.lam = np.maximum(0.0, g / st.rho)
            feasible = st.violation(g)[0] <= st.eta1
            if not np.all(g <= 0.0):
                st.rho *= 0.5
            if run.trace.f_min < best_seen - st.eta2:
                best_seen = run.trace.f_min
                quiet = 0
            elif feasible:
                quiet += 1
            if stall and feasible and quiet >= stall:
                status = "stalled"
                break
    except _Abort as exc:
        run.trace.al_state = st
        return _finish(run, str(exc))
    run.trace.al_state = st
    return _finish(run, status)


def warp_values(v) -> np.ndarray:
    """Monotone ``asinh`` squashing of ``v`` around its median.

    The unit is the gap between the median and the minimum, so the better
    half of the data keeps an (almost) linear scale while a steep penalty
    wall is compressed logarithmically and a stationary GP can resolve the
    region around the minimum.  The ordering, hence every argmin, is
    unchanged.
    """
    v = np.asarray(v, dtype=float)
    med = float(np.median(v))
    scale = med - float(v.min())
    if not scale > 0:
        scale = float(np.abs(v - med).max())
    if not scale > 0:
        scale = 1.0
    return np.arcsinh((v - med) / scale)


def _argmin_lex(X, v):
    return _lexbest(X, -np.asarray(v))


def _fit_values(run, X, y, step, n_restarts, warm):
    seed = subseed(run.seed, FIT, step)
    ws = warm.theta if isinstance(warm, GPModel) else None
    try:
        return fit_gp(X, y, run.problem.domain, seed, noise=run.data.noise, n_restarts=n_restarts, warm_start=ws)
    except (TrainingError, np.linalg.LinAlgError) as exc:
        raise _Abort(f"training failed: {exc}") from None


def _al_evaluate(run: _Run, x, st: ALState):
    # incumbent: best f among samples with violation <= eta1
    f = run.evaluate(x, 1)
    g = run.G[-1]
    tr = run.trace
    ok = st.violation(g)[0] <= st.eta1
    rec = tr.records[-1]
    if ok and f < tr.f_min:
        tr.f_min, tr.x_min = f, np.asarray(rec.x)
    tr.records[-1] = replace(rec, best_f=tr.f_min)


def _al_initial(run: _Run, sizes, design, st):
    rng = stream(run.seed, INIT, 0)
    dom = run.problem.domain
    for u in initial_design(rng, int(sizes[0]), dom.dim, design):
        _al_evaluate(run, dom.lower + u * dom.span, st)
