"""Rescaling a candidate map onto the constraint surface ||g(tv, tDv)||_p = 1."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densities import DensityG
from .discretization import GridField, linf_norm, lp_mean_norm


class NormalizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NormalizationResult:
    t_p: float
    residual: float
    bracket: tuple[float, float]
    iterations: int
    method: str = "bisection"


def constraint_field(g: DensityG, u: GridField) -> np.ndarray:
    return g.eval(u.values, u.Du)


def rho(g: DensityG, v: GridField, p: float, t: float) -> float:
    """Norm ||g(tv, tDv)||_p (rescaled mean for finite p, max for p = inf)."""
    if v.is_zero():
        raise NormalizationError("candidate field is identically zero")
    if t < 0:
        raise ValueError("t must be nonnegative")
    field = g.eval(t * v.values, t * v.Du)
    if math.isinf(p):
        return linf_norm(field)
    return lp_mean_norm(field, p, v.disc.weights).value


def normalize(g: DensityG, v: GridField, p: float, tol: float = 1e-10,
              use_homogeneity: bool = True) -> NormalizationResult:
    """Find t_p > 0 with ||g(t_p v, t_p Dv)||_p = 1.

    Bisects the strictly increasing map t -> rho(t) on a bracket grown by
    doubling/halving from t = 1; ``tol`` is relative in t. For a k-homogeneous
    g the closed form t_p = ||g(v, Dv)||_p^(-1/k) is used instead.
    """
    if v.is_zero():
        raise NormalizationError("candidate field is identically zero")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if use_homogeneity and g.degree is not None:
        base = rho(g, v, p, 1.0)
        if not base > 0:
            raise NormalizationError("constraint field vanishes identically on the candidate")
        t = base ** (-1.0 / g.degree)
        return NormalizationResult(t, abs(rho(g, v, p, t) - 1.0), (t, t), 0, "homogeneous")

    lo, hi = 1.0, 1.0
    its = 0
    if rho(g, v, p, 1.0) < 1.0:
        while rho(g, v, p, hi) < 1.0:
            lo, hi = hi, 2.0 * hi
            its += 1
            if its > 200:
                raise NormalizationError("no bracket within 200 doublings (g not coercive or v ~ 0)")
    else:
        while rho(g, v, p, lo) >= 1.0:
            hi, lo = lo, 0.5 * lo
            its += 1
            if its > 200:
                raise NormalizationError("no bracket within 200 halvings")
    bracket = (lo, hi)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if rho(g, v, p, mid) < 1.0:
            lo = mid
        else:
            hi = mid
        its += 1
    r_lo, r_hi = abs(rho(g, v, p, lo) - 1.0), abs(rho(g, v, p, hi) - 1.0)
    t = lo if r_lo <= r_hi else hi
    return NormalizationResult(t, min(r_lo, r_hi), bracket, its)


def normalized(g: DensityG, v: GridField, p: float, tol: float = 1e-10) -> GridField:
    return v.scaled(normalize(g, v, p, tol).t_p)
