"""Finite-p measures M_p, nu_p: assembly, mass bounds and pairing checks.

At finite p both measures are absolutely continuous with respect to the
normalised Lebesgue measure, so they are stored as node densities against the
grid quadrature weights:

    nu_p = g(u_p, Du_p)^(p-1)                       (scalar)
    M_p  = (f(D^2 u_p) / Lambda_p)^(p-1) df(D^2 u_p)  (symmetric tensor)

with masses taken as ``sum w_i |density_i| / |Omega|``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .densities import DensityF, DensityG
from .discretization import Discretization
from .psolver import PRunResult


class MeasureError(ValueError):
    pass


class MeasureKind(str, enum.Enum):
    SCALAR = "scalar"
    TENSOR = "tensor"


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Node densities against ``cell_volumes / volume``."""

    kind: MeasureKind
    density: np.ndarray
    cell_volumes: np.ndarray
    volume: float
    p: float = math.nan

    def __post_init__(self):
        if self.kind is MeasureKind.SCALAR and np.any(self.density < 0):
            raise MeasureError("scalar measure with negative weight")

    @property
    def node_norm(self) -> np.ndarray:
        """|density| per node (Frobenius for tensors)."""
        if self.kind is MeasureKind.SCALAR:
            return np.abs(self.density)
        d = self.density.reshape(self.density.shape[0], -1)
        return np.sqrt(np.sum(d * d, axis=1))

    @property
    def weights(self) -> np.ndarray:
        """Per-node masses (scalar) or per-node tensor masses."""
        scale = self.cell_volumes / self.volume
        if self.kind is MeasureKind.SCALAR:
            return self.density * scale
        return self.density * scale.reshape((-1,) + (1,) * (self.density.ndim - 1))

    @property
    def total_variation(self) -> float:
        return float(np.dot(self.cell_volumes, self.node_norm)) / self.volume

    def pair(self, phi: np.ndarray) -> float:
        """Integral of a node test field; tensor measures pair with phi*I per component."""
        phi = np.asarray(phi, dtype=float)
        w = self.cell_volumes / self.volume
        if self.kind is MeasureKind.SCALAR:
            return float(np.dot(w, phi * self.density))
        tr = np.trace(self.density, axis1=-2, axis2=-1).sum(axis=-1)
        return float(np.dot(w, phi * tr))


def _scalar(values, disc: Discretization, p: float) -> DiscreteMeasure:
    return DiscreteMeasure(MeasureKind.SCALAR, values, disc.weights, disc.volume, p)


def _relative_power(values: np.ndarray, base: float, p: float) -> np.ndarray:
    # (values / base)^(p-1) in log space: base ~ Lambda_p keeps the ratio O(1)
    return _accel.log_power_weights(values, base, p)


def assemble_measures(f: DensityF, g: DensityG, result: PRunResult,
                      Lambda: float | None = None) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """(M_p, nu_p) for a solved step; ``Lambda`` overrides the stored Lambda_p."""
    lam = result.Lambda_p if Lambda is None else float(Lambda)
    if not lam > 0 or not math.isfinite(lam):
        raise MeasureError(f"Lambda_p must be positive and finite, got {lam}")
    u, p = result.u, result.p
    disc = u.disc
    X = u.D2u
    fx = f.eval(X)
    gv = g.eval(u.values, u.Du)
    with np.errstate(over="ignore"):
        rf = _relative_power(fx, lam, p)
    M = DiscreteMeasure(MeasureKind.TENSOR, rf[:, None, None, None] * f.grad(X),
                        disc.weights, disc.volume, p)
    nu = _scalar(_relative_power(gv, 1.0, p), disc, p)
    return M, nu


@dataclass
class MassReport:
    nu_mass: float
    M_mass: float
    M_bound: float
    nu_margin: float
    M_margin: float
    ok: bool
    messages: list = field(default_factory=list)


def mass_bound_M(f: DensityF, g: DensityG, p: float, Lambda: float) -> float:
    """(C8/C1)^(1-1/p) (C5 (Lambda + 1)^beta + C6)."""
    return (g.C8 / f.C1) ** (1 - 1 / p) * (f.C5 * (Lambda + 1) ** f.beta + f.C6)


def mass_bounds_report(M: DiscreteMeasure, nu: DiscreteMeasure, result: PRunResult,
                       f: DensityF, g: DensityG, slack: float | None = None,
                       nu_tol: float = 1e-8) -> MassReport:
    """Check nu_p mass <= 1 and the tensor mass against its a-priori bound."""
    if slack is None:
        slack = 10 * result.el_residual if math.isfinite(result.el_residual) else 0.0
    nu_mass = nu.total_variation
    M_mass = M.total_variation
    bound = mass_bound_M(f, g, result.p, result.Lambda_p)
    msgs = []
    nu_ok = nu_mass <= 1 + nu_tol
    M_ok = M_mass <= bound * (1 + slack)
    if not nu_ok:
        msgs.append(f"nu mass {nu_mass:.12g} exceeds 1")
    if not M_ok:
        msgs.append(f"|M| mass {M_mass:.6g} exceeds bound {bound:.6g}")
    return MassReport(nu_mass, M_mass, bound, 1 - nu_mass, bound - M_mass,
                      nu_ok and M_ok, msgs)


def pairing_sides(M: DiscreteMeasure, nu: DiscreteMeasure, f: DensityF, g: DensityG,
                  result: PRunResult, phi: np.ndarray, Lambda: float | None = None):
    """(lhs, rhs, scale) of  int D^2phi : dM = Lambda int (d_eta g.phi + d_P g:Dphi) dnu."""
    lam = result.Lambda_p if Lambda is None else float(Lambda)
    u = result.u
    disc = u.disc
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    w = disc.weights / disc.volume
    D2phi = disc.hessian(phi)
    Dphi = disc.gradient(phi)
    lhs = float(np.dot(w, np.sum(M.density * D2phi, axis=(1, 2, 3))))
    integrand = (np.sum(g.grad_eta(u.values, u.Du) * phi, axis=1)
                 + np.sum(g.grad_P(u.values, u.Du) * Dphi, axis=(1, 2)))
    rhs = lam * float(np.dot(w, nu.density * integrand))
    scale = math.sqrt(float(np.dot(w, np.sum(M.density ** 2, axis=(1, 2, 3))))) * \
        math.sqrt(float(np.dot(w, np.sum(D2phi ** 2, axis=(1, 2, 3)))))
    return lhs, rhs, scale


def pairing_residual(M: DiscreteMeasure, nu: DiscreteMeasure, f: DensityF, g: DensityG,
                     result: PRunResult, test_basis: list[np.ndarray],
                     Lambda: float | None = None) -> float:
    """Max relative gap of the measure pairing system over the test fields."""
    worst = 0.0
    for phi in test_basis:
        lhs, rhs, scale = pairing_sides(M, nu, f, g, result, phi, Lambda)
        if scale > 0:
            worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def concentration_fraction(nu: DiscreteMeasure, gv: np.ndarray, level: float = 0.95) -> float:
    """Share of nu mass on the nodes where g >= level * max g."""
    total = nu.total_variation
    if total == 0:
        return 0.0
    mask = gv >= level * np.max(gv)
    w = nu.cell_volumes / nu.volume
    return float(np.dot(w[mask], nu.density[mask])) / total


@dataclass
class WeakStarTable:
    """Pairing sequences across p for fixed test fields, with Cauchy differences."""

    ps: list
    nu_pairings: np.ndarray   # (tests, steps)
    M_pairings: np.ndarray    # (tests, steps)

    @staticmethod
    def _diffs(a):
        return np.abs(np.diff(a, axis=1))

    @property
    def nu_differences(self) -> np.ndarray:
        return self._diffs(self.nu_pairings)

    @property
    def M_differences(self) -> np.ndarray:
        return self._diffs(self.M_pairings)

    def cauchy(self) -> np.ndarray:
        """Per test field: last difference <= first difference (for nu and M)."""
        nd, md = self.nu_differences, self.M_differences
        return (nd[:, -1] <= nd[:, 0]) & (md[:, -1] <= md[:, 0])


def weakstar_trace(measures: list[tuple[DiscreteMeasure, DiscreteMeasure]],
                   test_fields: list[np.ndarray]) -> WeakStarTable:
    """Tabulate <phi, nu_p> and <phi I, M_p> along a continuation."""
    if len(measures) < 3:
        raise MeasureError("weak-* trace needs at least three steps")
    nu_tab = np.array([[nu.pair(phi) for _, nu in measures] for phi in test_fields])
    M_tab = np.array([[M.pair(phi) for M, _ in measures] for phi in test_fields])
    return WeakStarTable([nu.p for _, nu in measures], nu_tab, M_tab)
