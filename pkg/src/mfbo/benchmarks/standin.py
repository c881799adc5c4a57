"""Analytic stand-in for a multi-point airfoil objective.

This is NOT aerodynamics.  It maps a few geometric features (camber,
camber position, thickness) to a smooth pseudo lift-to-drag score per
operating condition so that the airfoil optimization pipeline runs without
a flow solver.  For real studies plug a solver in through
:mod:`mfbo.benchmarks.external`.
"""
from __future__ import annotations

import math

import numpy as np

from .airfoils import NACA_DOMAIN, PARSEC_DOMAIN, Naca4Params
from .functions import BenchmarkProblem

# (Mach number, angle of attack in degrees, weight)
CONDITIONS = ((0.5, 2.0, 0.4), (0.55, 2.2, 0.2), (0.5, 2.5, 0.2), (0.55, 2.0, 0.2))
WEIGHTS = np.array([c[2] for c in CONDITIONS])


def _softplus(z):
    return math.log1p(math.exp(-abs(z))) + max(z, 0.0)


def airfoil_features(params, kind: str = "naca4"):
    """(camber, camber position, thickness) straight from the parameters."""
    v = np.asarray(params, dtype=float).ravel()
    if kind == "naca4":
        if v.size != 3:
            raise ValueError(f"NACA parameter vectors have 3 entries, got {v.size}")
        Naca4Params.from_vector(v)  # bounds and camber checks
        return float(v[0]), float(v[1]), float(v[2])
    if kind == "parsec":
        if v.size != 10 or not PARSEC_DOMAIN.contains(v, 1e-12):
            raise ValueError("PARSEC parameters outside their bounds")
        r_le, x_up, y_up, k_up, x_lo, y_lo, k_lo, y_te, a_te, b_te = v
        camber = 0.5 * (y_up + y_lo) - 0.01 * math.radians(a_te)
        return float(camber), float(0.5 * (x_up + x_lo)), float(y_up - y_lo)
    raise ValueError(f"unknown airfoil kind {kind!r}")


def condition_score(camber, pos, thick, mach, alpha_deg):
    """Pseudo lift-to-drag ratio at one operating condition (smooth in all inputs)."""
    beta = math.sqrt(1.0 - mach ** 2)
    # thin-airfoil-like lift, camber effect fading as its position moves aft
    cl = 2 * math.pi / beta * (math.radians(alpha_deg) + 2.0 * camber * (1.2 - 0.5 * pos))
    # friction + form drag + induced-like penalty away from a design lift
    cd = 0.006 + 0.08 * thick ** 2 + 0.01 * (cl - 0.6) ** 2
    # compressibility: smooth rise once a thickness-dependent critical Mach is crossed
    mcrit = 0.78 - 0.9 * thick - 0.6 * camber
    cd += 0.02 * _softplus(25.0 * (mach - mcrit)) / 25.0
    return cl / cd


def condition_scores(params, kind: str = "naca4") -> np.ndarray:
    c, p, t = airfoil_features(params, kind)
    return np.array([condition_score(c, p, t, m, a) for m, a, _ in CONDITIONS])


def multipoint_combine(scores, weights=WEIGHTS) -> float:
    """Weighted negative score; with equal scores ``s`` this is ``-s``."""
    return float(-np.dot(weights, scores))


def multipoint_standin_objective(params, fidelity: int = 2, kind: str = "naca4") -> float:
    """Fidelity 2: weighted sum over the four conditions; fidelity 1: first condition only."""
    s = condition_scores(params, kind)
    if fidelity == 2:
        return multipoint_combine(s)
    if fidelity == 1:
        return float(-s[0])
    raise ValueError(f"the stand-in objective has fidelities 1 and 2, got {fidelity}")


def _naca_lf(x):
    return multipoint_standin_objective(x, 1, "naca4")


def _naca_hf(x):
    return multipoint_standin_objective(x, 2, "naca4")


def _parsec_lf(x):
    return multipoint_standin_objective(x, 1, "parsec")


def _parsec_hf(x):
    return multipoint_standin_objective(x, 2, "parsec")


def naca_standin_problem(costs=(1.0, 4.0)) -> BenchmarkProblem:
    return BenchmarkProblem("naca4-standin", NACA_DOMAIN, (_naca_lf, _naca_hf), costs)


def parsec_standin_problem(costs=(1.0, 4.0)) -> BenchmarkProblem:
    return BenchmarkProblem("parsec-standin", PARSEC_DOMAIN, (_parsec_lf, _parsec_hf), costs)
