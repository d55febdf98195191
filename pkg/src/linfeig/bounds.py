"""A-priori eigenvalue bounds and the mollifier constants they depend on.

The lower bound needs the gradient suprema of g over {g <= 1}, the domain
diameter and a Poincare constant. The upper bound needs a C^2 boundary
(only the disc here), the sublevel radius function R of g, curvature data
and two universal constants (c, C) from the standard mollifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .densities import (DensityF, DensityG, LowerBoundUnavailable, NonCoerciveError,
                        constraint_radius_R, sublevel_sup_gradients)
from .discretization import BCMode
from .geometry import GeometryDescriptors, UpperBoundUnavailable


class BoundsViolation(RuntimeError):
    pass


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(1.0 / (r[inside] ** 2 - 1.0))
    return out


def _bump_slope(r):
    """|d/dr exp(1/(r^2-1))| = 2r/(1-r^2)^2 exp(1/(r^2-1))."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1
    ri = r[inside]
    out[inside] = 2 * ri / (1 - ri * ri) ** 2 * np.exp(1.0 / (ri * ri - 1.0))
    return out


def _radial_integral(fn, n: int, nodes: int) -> float:
    """Integral of a radial function over the unit ball by Gauss-Legendre in r."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * (x + 1)
    w = 0.5 * w
    surface = n * unit_ball_volume(n)  # |S^{n-1}|; equals 2 for n = 1
    return float(surface * np.sum(w * fn(r) * r ** (n - 1)))


@dataclass(frozen=True)
class MollifierConstants:
    """Constants of the normalised standard bump eta on the unit ball of R^n.

    c: minimum of eta on the closed ball of radius 1/2 (attained at |x| = 1/2).
    C: sup |D eta|, the constant in ||D eta^eps * mu||_inf <= C eps^(-n-1) |mu|.
    grad_l1: ||D eta||_{L^1}, reported for audit only.
    """

    n: int
    normaliser: float
    c: float
    C: float
    grad_l1: float


@lru_cache(maxsize=None)
def mollifier_constants(n: int, nodes: int = 400) -> MollifierConstants:
    if n not in (1, 2):
        raise ValueError("mollifier constants are provided for n in {1, 2}")
    mass = _radial_integral(_bump, n, nodes)
    K = 1.0 / mass
    c = K * math.exp(-4.0 / 3.0)
    # d/dr log slope = 0 reduces to 3 r^4 = 1
    r_star = 3.0 ** -0.25
    C = K * float(_bump_slope(np.array([r_star]))[0])
    grad_l1 = K * _radial_integral(_bump_slope, n, nodes)
    return MollifierConstants(n, K, c, C, grad_l1)


@dataclass
class BoundsReport:
    lower: float
    upper: float | None
    upper_reason: str = ""
    lower_reason: str = ""
    ingredients: dict = field(default_factory=dict)

    @property
    def upper_available(self) -> bool:
        return self.upper is not None

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper if self.upper is not None else "unavailable",
                "upper_reason": self.upper_reason, "lower_reason": self.lower_reason,
                "ingredients": dict(self.ingredients)}


def lower_bound_formula(C3, C4, alpha, diam, poincare, sup_eta, sup_P) -> float:
    denom = diam ** alpha * (poincare * sup_eta + sup_P) ** alpha
    if denom == 0:
        return math.inf
    return max(C4 / denom - C3, 0.0)


def lower_bound(f: DensityF, g: DensityG, geo: GeometryDescriptors, bc: BCMode | str,
                N: int = 1) -> tuple[float, dict]:
    """Lower bound and its ingredients; raises LowerBoundUnavailable."""
    bc = BCMode(bc)
    sup_eta, sup_P = sublevel_sup_gradients(g, 1.0, N, geo.dim)
    poincare = geo.poincare_const_clamped if bc is BCMode.CLAMPED else geo.poincare_wirtinger_const
    value = lower_bound_formula(f.C3, f.C4, f.alpha, geo.diameter, poincare, sup_eta, sup_P)
    return value, {"C3": f.C3, "C4": f.C4, "alpha": f.alpha, "diameter": geo.diameter,
                   "poincare_const": poincare, "sup_grad_eta_g": sup_eta, "sup_grad_P_g": sup_P}


def upper_bound_formula(C5, C6, alpha, n, c, C, sup_R, kappa_max, eps0, perimeter,
                        curvature_quotient) -> float:
    omega = unit_ball_volume(n)
    head = C5 * 2 ** (5 * alpha) / (c * omega) ** alpha
    radius_term = (1 + sup_R) ** alpha
    curv_term = (2 ** (3 * n) + kappa_max ** n) ** alpha
    brace = (1 + (1 + C / eps0 ** (n + 1)) * perimeter + curvature_quotient) ** alpha
    return C6 + head * radius_term * curv_term * brace


def sup_R_on_unit(g: DensityG, N: int = 1, n: int = 1, grid: int = 101) -> tuple[float, float]:
    """(sup over a t-grid of R(t) on [0, 1], R(1)); R is nondecreasing so both agree."""
    ts = np.linspace(0.0, 1.0, grid)
    vals = [constraint_radius_R(g, float(t), N, n) for t in ts]
    return max(vals), vals[-1]


def upper_bound(f: DensityF, g: DensityG, geo: GeometryDescriptors,
                N: int = 1) -> tuple[float, dict]:
    """Upper bound for C^2 domains; raises UpperBoundUnavailable otherwise."""
    if geo.dim < 2:
        raise UpperBoundUnavailable("upper bound skipped for one-dimensional domains")
    kappas = geo.curvature_sup_norms()  # raises for non-C^2 geometry
    try:
        sup_R, R1 = sup_R_on_unit(g, N, geo.dim)
    except NonCoerciveError as exc:
        raise UpperBoundUnavailable(f"upper bound unavailable: {exc}") from exc
    mc = mollifier_constants(geo.dim)
    kmax = max(kappas) if kappas else 0.0
    quotient = geo.curvature_quotient_sup()
    value = upper_bound_formula(f.C5, f.C6, f.alpha, geo.dim, mc.c, mc.C, sup_R, kmax,
                                geo.eps0, geo.perimeter, quotient)
    return value, {"C5": f.C5, "C6": f.C6, "alpha": f.alpha, "c": mc.c, "C": mc.C,
                   "omega_n": unit_ball_volume(geo.dim), "sup_R": sup_R, "R_at_1": R1,
                   "kappa_sup_norms": list(kappas), "eps0": geo.eps0,
                   "perimeter": geo.perimeter, "curvature_quotient_sup": quotient}


def bounds_report(f: DensityF, g: DensityG, geo: GeometryDescriptors, bc: BCMode | str,
                  N: int = 1) -> BoundsReport:
    ing: dict = {"C3": f.C3, "C4": f.C4, "C5": f.C5, "C6": f.C6, "alpha": f.alpha,
                 "beta": f.beta, "diameter": geo.diameter, "perimeter": geo.perimeter,
                 "eps0": geo.eps0, "omega_n": unit_ball_volume(geo.dim)}
    lower_reason = upper_reason = ""
    try:
        lower, li = lower_bound(f, g, geo, bc, N)
        ing.update(li)
    except (LowerBoundUnavailable, NonCoerciveError) as exc:
        lower, lower_reason = 0.0, str(exc)
    try:
        upper, ui = upper_bound(f, g, geo, N)
        ing.update(ui)
    except UpperBoundUnavailable as exc:
        upper, upper_reason = None, str(exc)
    return BoundsReport(lower, upper, upper_reason, lower_reason, ing)


@dataclass
class SandwichVerdict:
    ok: bool
    messages: list = field(default_factory=list)


def sandwich_check(report: BoundsReport, Lambda_final: float, Lambda_inf: float | None = None,
                   slack: float = 0.0, strict: bool = False) -> SandwichVerdict:
    """lower <= Lambda_final (1 + slack), Lambda > 0, and Lambda_inf <= upper when available."""
    msgs = []
    if not (Lambda_final > 0 and math.isfinite(Lambda_final)):
        msgs.append(f"eigenvalue must be positive and finite, got {Lambda_final}")
    elif report.lower > Lambda_final * (1 + slack):
        msgs.append(f"lower bound {report.lower:.6g} exceeds Lambda {Lambda_final:.6g}")
    if report.upper is not None:
        target = Lambda_inf if Lambda_inf is not None else Lambda_final
        if not target <= report.upper:
            msgs.append(f"Lambda_inf {target:.6g} exceeds upper bound {report.upper:.6g}")
        if report.lower > report.upper:
            msgs.append("lower bound exceeds upper bound")
    verdict = SandwichVerdict(not msgs, msgs)
    if strict and not verdict.ok:
        raise BoundsViolation("; ".join(msgs))
    return verdict
