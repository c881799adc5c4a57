"""Analytic multi-fidelity test problems and small toy problems."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..gp import BoxDomain


@dataclass(frozen=True, eq=False)
class BenchmarkProblem:
    """A box-constrained problem with one evaluator per fidelity (last = highest).

    ``constraints`` are callables ``g_i(x)`` with ``g_i <= 0`` feasible and
    apply to the highest fidelity only.
    """

    name: str
    domain: BoxDomain
    evaluators: tuple
    costs: np.ndarray
    x_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None
    noise: Optional[float] = 0.0
    constraints: tuple = ()

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float).ravel()
        if costs.size != len(self.evaluators) or np.any(costs <= 0):
            raise ValueError("need one positive cost per fidelity")
        object.__setattr__(self, "evaluators", tuple(self.evaluators))
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def T(self) -> int:
        return len(self.evaluators)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def _check(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise ValueError(f"{self.name}: expected {self.dim} inputs, got {x.size}")
        if not self.domain.contains(x, tol=1e-12):
            raise ValueError(f"{self.name}: x={x.tolist()} lies outside the domain")
        return x

    def evaluate(self, x, fidelity: Optional[int] = None) -> float:
        t = self.T if fidelity is None else int(fidelity)
        if not 1 <= t <= self.T:
            raise ValueError(f"{self.name}: fidelity {t} out of range 1..{self.T}")
        return float(self.evaluators[t - 1](self._check(x)))

    def evaluate_constraints(self, x) -> np.ndarray:
        x = self._check(x)
        return np.array([float(g(x)) for g in self.constraints])

    def single_fidelity(self) -> "BenchmarkProblem":
        return BenchmarkProblem(self.name, self.domain, self.evaluators[-1:], self.costs[-1:],
                                self.x_star, self.f_star, self.noise, self.constraints)


# ---------------------------------------------------------------------------
# Levy (2d)

def levy2d_hf(x) -> float:
    x1, x2 = float(x[0]), float(x[1])
    return (math.sin(3 * math.pi * x1) ** 2
            + (x1 - 1) ** 2 * (1 + math.sin(3 * math.pi * x2) ** 2)
            + (x2 - 1) ** 2 * (1 + math.sin(2 * math.pi * x2) ** 2))


def levy2d_lf(x) -> float:
    fh = levy2d_hf(x)
    return math.exp(0.1 * math.sqrt(fh)) + 0.1 * math.sqrt(1 + fh * fh)


LEVY_DOMAIN = BoxDomain([-10.0, -10.0], [10.0, 10.0])


def levy2d(x, fidelity: int = 2) -> float:
    """Levy function on [-10, 10]^2; fidelity 2 is the exact function, 1 the cheap surrogate."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != 2 or not LEVY_DOMAIN.contains(x):
        raise ValueError(f"levy2d needs x in [-10, 10]^2, got {x.tolist()}")
    if fidelity == 2:
        return levy2d_hf(x)
    if fidelity == 1:
        return levy2d_lf(x)
    raise ValueError(f"levy2d has fidelities 1 and 2, got {fidelity}")


# ---------------------------------------------------------------------------
# Hartmann (6d), rescaled

HARTMANN_A = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_M = np.array([
    [10, 3, 17, 3.5, 1.7, 8],
    [0.05, 10, 17, 0.1, 8, 14],
    [3, 3.5, 1.7, 10, 17, 8],
    [17, 8, 0.05, 10, 0.1, 14],
])
HARTMANN_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN_X_STAR = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311625, 0.6573])
# minimum of the classical (unscaled) six-dimensional Hartmann function; the
# rescaled version implemented here has its minimum at -(2.58 + 3.32237) / 1.94
HARTMANN_UNSCALED_MIN = -3.32237
HARTMANN_F_STAR = -(2.58 + 3.32237) / 1.94
HARTMANN_DOMAIN = BoxDomain(np.zeros(6), np.ones(6))


def hartmann_terms(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return HARTMANN_A * np.exp(-(HARTMANN_M * (x - HARTMANN_P) ** 2).sum(axis=1))


def hartmann6_hf(x) -> float:
    return float(-(2.58 + hartmann_terms(x).sum()) / 1.94)


def hartmann6_lf(x) -> float:
    return float(-(2.58 + hartmann_terms(x)[:3].sum()) / 1.94)


def hartmann6(x, fidelity: int = 2) -> float:
    """Rescaled Hartmann function on [0, 1]^6; fidelity 1 drops the fourth term."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != 6 or not HARTMANN_DOMAIN.contains(x):
        raise ValueError(f"hartmann6 needs x in [0, 1]^6, got {x.tolist()}")
    if fidelity == 2:
        return hartmann6_hf(x)
    if fidelity == 1:
        return hartmann6_lf(x)
    raise ValueError(f"hartmann6 has fidelities 1 and 2, got {fidelity}")


def levy_problem(costs=(1.0, 10.0)) -> BenchmarkProblem:
    return BenchmarkProblem("levy2d", LEVY_DOMAIN, (levy2d_lf, levy2d_hf), costs,
                            x_star=np.array([1.0, 1.0]), f_star=0.0)


def hartmann_problem(costs=(1.0, 10.0)) -> BenchmarkProblem:
    return BenchmarkProblem("hartmann6", HARTMANN_DOMAIN, (hartmann6_lf, hartmann6_hf), costs,
                            x_star=HARTMANN_X_STAR.copy(), f_star=HARTMANN_F_STAR)


# ---------------------------------------------------------------------------
# toys used by the tests and the examples in the README

def _quad(x):
    return float((x[0] - 0.5) ** 2)


def quadratic_problem() -> BenchmarkProblem:
    """``(x - 0.5)^2`` on [0, 1]."""
    return BenchmarkProblem("quadratic1d", BoxDomain([0.0], [1.0]), (_quad,), [1.0],
                            x_star=np.array([0.5]), f_star=0.0)


def _linear_lf(x):
    return float(np.sin(8.0 * x[0]))


def _linear_hf(x):
    return float(2.0 * np.sin(8.0 * x[0]) + 0.3 * x[0])


_LINEAR_X_STAR = (2.0 * np.pi - np.arccos(-0.3 / 16.0)) / 8.0


def linear_mf_problem(costs=(1.0, 4.0)) -> BenchmarkProblem:
    """Two fidelities on [0, 1] with ``f_H = 2 f_L + 0.3 x`` and ``f_L = sin(8x)``."""
    return BenchmarkProblem("linear-mf", BoxDomain([0.0], [1.0]), (_linear_lf, _linear_hf), costs,
                            x_star=np.array([_LINEAR_X_STAR]), f_star=_linear_hf([_LINEAR_X_STAR]))


def _ident(x):
    return float(x[0])


def _one_minus(x):
    return float(1.0 - x[0])


def _sum(x):
    return float(x[0] + x[1])


def _half_minus(x):
    return float(0.5 - x[0])


def _minus_one(x):
    return -1.0


def al_toy_problem() -> BenchmarkProblem:
    """min x on [0, 2] subject to 1 - x <= 0."""
    return BenchmarkProblem("al-toy", BoxDomain([0.0], [2.0]), (_ident,), [1.0],
                            x_star=np.array([1.0]), f_star=1.0, constraints=(_one_minus,))


def cei_toy_problem() -> BenchmarkProblem:
    """min x1 + x2 on [0, 1]^2 subject to 0.5 - x1 <= 0."""
    return BenchmarkProblem("cei-toy", BoxDomain([0.0, 0.0], [1.0, 1.0]), (_sum,), [1.0],
                            x_star=np.array([0.5, 0.0]), f_star=0.5, constraints=(_half_minus,))


def feasible_toy_problem() -> BenchmarkProblem:
    """The quadratic toy with a constraint that is satisfied everywhere."""
    return BenchmarkProblem("feasible-toy", BoxDomain([0.0], [1.0]), (_quad,), [1.0],
                            x_star=np.array([0.5]), f_star=0.0, constraints=(_minus_one,))
