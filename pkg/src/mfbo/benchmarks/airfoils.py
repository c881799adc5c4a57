"""NACA 4-digit and PARSEC airfoil geometry.

Coordinates are in chord units.  Surfaces are sampled at cosine-spaced
chord stations ``x_a = (1 - cos(beta)) / 2``, which cluster points at both
edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ..gp import BoxDomain

# thickness polynomial, canonical signs
NACA_THICKNESS = (0.2969, -0.1260, -0.3516, 0.2843, -0.1015)
NACA_A4_CLOSED = -0.1036

NACA_NAMES = ("c_max", "x_max", "t_max")
NACA_LOWER = np.array([0.0, 0.0, 0.1])
NACA_UPPER = np.array([0.08, 0.8, 0.25])
NACA_DOMAIN = BoxDomain(NACA_LOWER, NACA_UPPER)

PARSEC_NAMES = ("r_le", "x_up", "y_up", "k_up", "x_lo", "y_lo", "k_lo", "y_te", "dy_te",
                "alpha_te", "beta_te")
# (lower, upper); angles in degrees; the trailing-edge direction bounds are
# stored sorted
PARSEC_BOUNDS = {
    "r_le": (0.005, 0.06), "x_up": (0.25, 0.5), "y_up": (0.05, 0.15), "k_up": (-1.0, -0.4),
    "x_lo": (0.35, 0.5), "y_lo": (-0.12, -0.04), "k_lo": (0.3, 1.0), "y_te": (-0.02, 0.02),
    "dy_te": (0.0, 0.0), "alpha_te": (-8.0, -3.0), "beta_te": (4.0, 8.0),
}
# design variables exclude the fixed trailing-edge thickness
PARSEC_DESIGN_NAMES = tuple(n for n in PARSEC_NAMES if n != "dy_te")
PARSEC_DOMAIN = BoxDomain([PARSEC_BOUNDS[n][0] for n in PARSEC_DESIGN_NAMES],
                          [PARSEC_BOUNDS[n][1] for n in PARSEC_DESIGN_NAMES])


class GeometryError(ValueError):
    """Invalid airfoil parameters."""


def _check_bounds(values: dict, bounds: dict, tol=1e-12):
    for name, v in values.items():
        lo, hi = bounds[name]
        if not (lo - tol <= v <= hi + tol) or not math.isfinite(v):
            raise GeometryError(f"{name}={v!r} outside its bounds [{lo}, {hi}]")


@dataclass(frozen=True)
class Naca4Params:
    c_max: float
    x_max: float
    t_max: float

    def __post_init__(self):
        _check_bounds({n: getattr(self, n) for n in NACA_NAMES},
                      dict(zip(NACA_NAMES, zip(NACA_LOWER, NACA_UPPER))))
        if self.c_max > 0 and self.x_max <= 0:
            raise GeometryError("x_max must be positive when c_max > 0 (camber line undefined)")

    @classmethod
    def from_vector(cls, v):
        return cls(*map(float, v))

    def to_vector(self):
        return np.array([self.c_max, self.x_max, self.t_max])


@dataclass(frozen=True)
class ParsecParams:
    r_le: float
    x_up: float
    y_up: float
    k_up: float
    x_lo: float
    y_lo: float
    k_lo: float
    y_te: float
    dy_te: float = 0.0
    alpha_te: float = -5.5
    beta_te: float = 6.0

    def __post_init__(self):
        _check_bounds({f.name: getattr(self, f.name) for f in fields(self)}, PARSEC_BOUNDS)

    @classmethod
    def from_design(cls, v):
        """From the 10 design variables (trailing-edge thickness fixed at 0)."""
        v = [float(a) for a in v]
        if len(v) != 10:
            raise GeometryError(f"PARSEC design vectors have 10 entries, got {len(v)}")
        return cls(*v[:8], 0.0, *v[8:])

    @classmethod
    def midpoint(cls):
        return cls(**{n: 0.5 * (lo + hi) for n, (lo, hi) in PARSEC_BOUNDS.items()})

    def to_design(self):
        return np.array([getattr(self, n) for n in PARSEC_DESIGN_NAMES])


@dataclass(frozen=True, eq=False)
class AirfoilGeometry:
    """Upper and lower surfaces, each an (n, 2) array ordered from the leading edge."""

    upper: np.ndarray
    lower: np.ndarray
    stations: np.ndarray

    @property
    def n_points(self) -> int:
        return self.stations.size

    def selig(self) -> np.ndarray:
        """Coordinates ordered upper TE -> LE -> lower TE with the LE listed once."""
        return np.vstack([self.upper[::-1], self.lower[1:]])


def cosine_stations(n_points: int) -> np.ndarray:
    beta = np.linspace(0.0, math.pi, n_points)
    x = 0.5 * (1.0 - np.cos(beta))
    x[0], x[-1] = 0.0, 1.0
    return x


def naca4_camber(p: Naca4Params, x):
    """Mean camber line and its slope at chord stations ``x``."""
    x = np.asarray(x, dtype=float)
    m, pos = p.c_max, p.x_max
    if m == 0.0:
        return np.zeros_like(x), np.zeros_like(x)
    front = x < pos
    # same polynomials written around the crest, so both give exactly m at x = pos
    yc = np.where(front, m * (1 - ((x - pos) / pos) ** 2), m * (1 - ((x - pos) / (1 - pos)) ** 2))
    dyc = np.where(front, 2 * m / pos ** 2 * (pos - x), 2 * m / (1 - pos) ** 2 * (pos - x))
    return yc, dyc


def naca4_thickness(p: Naca4Params, x, closed_te: bool = False):
    a0, a1, a2, a3, a4 = NACA_THICKNESS
    if closed_te:
        a4 = NACA_A4_CLOSED
    x = np.asarray(x, dtype=float)
    return p.t_max / 0.2 * (a0 * np.sqrt(x) + a1 * x + a2 * x ** 2 + a3 * x ** 3 + a4 * x ** 4)


def naca4_geometry(p: Naca4Params, n_points: int = 100, closed_te: bool = False) -> AirfoilGeometry:
    """Thickness laid perpendicular to the mean camber line."""
    if n_points < 10:
        raise GeometryError("n_points must be at least 10")
    x = cosine_stations(n_points)
    yc, dyc = naca4_camber(p, x)
    yt = naca4_thickness(p, x, closed_te)
    th = np.arctan(dyc)
    upper = np.column_stack([x - yt * np.sin(th), yc + yt * np.cos(th)])
    lower = np.column_stack([x + yt * np.sin(th), yc - yt * np.cos(th)])
    return AirfoilGeometry(upper, lower, x)


def _parsec_system(xc: float, crest_y: float, crest_k: float, te_y: float, te_slope: float,
                   a1: float):
    e = np.arange(6) + 0.5  # exponents i - 1/2
    C = np.array([
        np.ones(6),
        xc ** e,
        e,
        e * xc ** (e - 1),
        e * (e - 1) * xc ** (e - 2),
        np.eye(6)[0],
    ])
    b = np.array([te_y, crest_y, te_slope, 0.0, crest_k, a1])
    return C, b


def parsec_systems(p: ParsecParams):
    """The upper and lower 6x6 systems ``C a = b``."""
    a_te = math.radians(p.alpha_te)
    b_te = math.radians(p.beta_te)
    root = math.sqrt(2.0 * p.r_le)
    up = _parsec_system(p.x_up, p.y_up, p.k_up, p.y_te + p.dy_te / 2, math.tan(a_te - b_te / 2), root)
    lo = _parsec_system(p.x_lo, p.y_lo, p.k_lo, p.y_te - p.dy_te / 2, math.tan(a_te + b_te / 2), -root)
    return up, lo


def _solve(C, b, which):
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > 1e14:
        raise GeometryError(f"{which} PARSEC system is singular (condition number {cond:.3g})")
    return np.linalg.solve(C, b)


def parsec_coefficients(p: ParsecParams):
    """Coefficient vectors ``(a_u, a_l)`` and the max-norm residuals of both solves."""
    (Cu, bu), (Cl, bl) = parsec_systems(p)
    au = _solve(Cu, bu, "upper")
    al = _solve(Cl, bl, "lower")
    res = max(np.abs(Cu @ au - bu).max(), np.abs(Cl @ al - bl).max())
    return au, al, float(res)


def parsec_surface(a, x):
    e = np.arange(6) + 0.5
    return (np.asarray(x, dtype=float)[:, None] ** e) @ a


def parsec_geometry(p: ParsecParams, n_points: int = 100) -> AirfoilGeometry:
    if n_points < 10:
        raise GeometryError("n_points must be at least 10")
    au, al, _ = parsec_coefficients(p)
    x = cosine_stations(n_points)
    return AirfoilGeometry(np.column_stack([x, parsec_surface(au, x)]),
                           np.column_stack([x, parsec_surface(al, x)]), x)


def format_selig(geom: AirfoilGeometry, name: str | None = None) -> str:
    lines = [name] if name else []
    lines += [f"{x:.8f} {y:.8f}" for x, y in geom.selig()]
    return "\n".join(lines) + "\n"
