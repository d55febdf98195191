"""Finite-p constrained minimisation and Lagrange multiplier extraction.

The solver minimises ``log ||f(D^2 u)||_p`` subject to ``log ||g(u, Du)||_p = 0``
with an augmented Lagrangian whose inner problems are solved by L-BFGS in
preconditioned coordinates (``u = (-Delta_h)^{-1} z`` on interior nodes).
The multiplier ``mu`` of the log-formulation relates to the multiplier of
``mean g^p = 1`` against ``mean f^p`` by ``lambda_p = mu * L_p^p``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _accel
from .densities import DensityF, DensityG
from .discretization import Discretization, GridField
from .normalization import normalize

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    outer_iterations: int = 40
    inner_iterations: int = 3000
    penalty_growth: float = 10.0
    initial_penalty: float = 10.0
    gradient_tolerance: float = 1e-6
    constraint_tolerance: float = 1e-10
    memory: int = 30
    seed: int = 0

    def __post_init__(self):
        for name in ("outer_iterations", "inner_iterations", "penalty_growth",
                     "initial_penalty", "gradient_tolerance", "constraint_tolerance", "memory"):
            if not getattr(self, name) > 0:
                raise ValueError(f"solver setting {name} must be positive")


@dataclass(frozen=True)
class FactoredPower:
    """mean h^p represented as ``scale**p * scaled_mean`` with its gradient.

    ``grad`` is the gradient of ``log mean h^p / p`` (the log of the rescaled
    norm) with respect to the node values; the gradient of the power mean
    itself is ``p * value * grad``.
    """

    p: float
    scale: float
    scaled_mean: float
    grad: np.ndarray

    @property
    def log_value(self) -> float:
        if self.scale == 0.0:
            return -math.inf
        return self.p * math.log(self.scale) + math.log(self.scaled_mean)

    @property
    def value(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.float64(self.scale) ** self.p * self.scaled_mean)

    @property
    def norm(self) -> float:
        return self.scale * self.scaled_mean ** (1.0 / self.p) if self.scale else 0.0

    @property
    def log_norm(self) -> float:
        return self.log_value / self.p

    @property
    def power_grad(self) -> np.ndarray:
        """Gradient of mean h^p (may overflow for large p)."""
        with np.errstate(over="ignore"):
            return self.p * self.value * self.grad


def _factored(values, disc, p):
    m, s, coeff = _accel.factored_power(values, disc.weights, p)
    return m, s / disc.volume, coeff


def objective_and_gradient(f: DensityF, u: GridField, p: float) -> FactoredPower:
    """mean f(D^2u)^p and the gradient of its log-norm over node values."""
    if math.isinf(p):
        raise ValueError("objective needs finite p")
    disc = u.disc
    X = u.D2u
    fx = f.eval(X)
    m, s, coeff = _factored(fx, disc, p)
    if m == 0.0:
        return FactoredPower(p, 0.0, 0.0, np.zeros_like(u.values))
    # d/du (1/p) log sum w f^p = sum w f^(p-1) df : D^2(.) / sum w f^p
    K = coeff / (m * s * disc.volume)
    T = K[:, None, None, None] * f.grad(X)
    grad = disc.hessian_adjoint(T)
    grad[disc.boundary_idx] = 0.0
    return FactoredPower(p, m, s, grad)


def constraint_and_gradient(g: DensityG, u: GridField, p: float) -> FactoredPower:
    """mean g(u, Du)^p and the gradient of its log-norm over node values."""
    if math.isinf(p):
        raise ValueError("constraint needs finite p")
    disc = u.disc
    eta, P = u.values, u.Du
    gv = g.eval(eta, P)
    m, s, coeff = _factored(gv, disc, p)
    if m == 0.0:
        return FactoredPower(p, 0.0, 0.0, np.zeros_like(u.values))
    K = coeff / (m * s * disc.volume)
    grad = K[:, None] * g.grad_eta(eta, P) + disc.gradient_adjoint(K[:, None, None] * g.grad_P(eta, P))
    grad[disc.boundary_idx] = 0.0
    return FactoredPower(p, m, s, grad)


@dataclass
class PRunResult:
    p: float
    u: GridField
    multiplier: float
    L_p: float
    log_lambda_p: float
    constraint_residual: float
    el_residual: float = math.nan
    inner_iterations: int = 0
    outer_iterations: int = 0
    penalty: float = 0.0
    converged: bool = False
    message: str = ""
    merit_history: list = field(default_factory=list, repr=False)

    @property
    def Lambda_p(self) -> float:
        return math.exp(self.log_lambda_p / self.p)

    @property
    def lambda_p(self) -> float:
        """lambda_p = Lambda_p^p; ``inf`` when it exceeds double range."""
        with np.errstate(over="ignore"):
            return float(np.exp(np.float64(self.log_lambda_p)))

    @property
    def log10_lambda_p(self) -> float:
        return self.log_lambda_p / math.log(10.0)


def initial_bubble(disc: Discretization, N: int = 1, seed: int = 0) -> GridField:
    """Polynomial bubble vanishing on the boundary (squared for clamped mode)."""
    from .geometry import DomainKind
    grid = disc.grid
    x = grid.coords
    b = grid.domain.bounds
    kind = grid.domain.kind
    if kind is DomainKind.INTERVAL:
        bub = (x[:, 0] - b[0]) * (b[1] - x[:, 0])
    elif kind is DomainKind.RECTANGLE:
        bub = (x[:, 0] - b[0]) * (b[1] - x[:, 0]) * (x[:, 1] - b[2]) * (b[3] - x[:, 1])
    else:
        bub = np.maximum(b[2] ** 2 - (x[:, 0] - b[0]) ** 2 - (x[:, 1] - b[1]) ** 2, 0.0)
    if disc.bc.value == "clamped":
        bub = bub * bub
    bub = bub / np.max(np.abs(bub))
    if N == 1:
        return GridField(disc, bub[:, None])
    rng = np.random.default_rng(seed)
    coef = rng.uniform(0.5, 1.5, size=N)
    return GridField(disc, bub[:, None] * coef[None, :])


class _Problem:
    """Objective/constraint in preconditioned interior coordinates."""

    def __init__(self, f, g, disc, p, N):
        self.f, self.g, self.disc, self.p, self.N = f, g, disc, p, N
        self.nint = len(disc.interior_idx)

    def field(self, z):
        Z = z.reshape(self.nint, self.N)
        return GridField(self.disc, self.disc.embed(self.disc.precondition(Z)))

    def to_z(self, u: GridField):
        return self.disc.unprecondition(self.disc.restrict(u.values)).ravel()

    def evaluate(self, z):
        u = self.field(z)
        F = objective_and_gradient(self.f, u, self.p)
        G = constraint_and_gradient(self.g, u, self.p)
        pre = self.disc.precondition
        gF = pre(self.disc.restrict(F.grad)).ravel()
        gG = pre(self.disc.restrict(G.grad)).ravel()
        return F, G, gF, gG


def solve_p(f: DensityF, g: DensityG, init: GridField, p: float,
            settings: SolverSettings = SolverSettings(), multiplier: float | None = None,
            penalty: float | None = None) -> PRunResult:
    """Augmented-Lagrangian solve of min ||f(D^2u)||_p s.t. ||g(u, Du)||_p = 1."""
    disc = init.disc
    N = init.N
    t = normalize(g, init, p).t_p
    start = init.scaled(t)
    prob = _Problem(f, g, disc, p, N)
    z = prob.to_z(start)

    mu = 1.0 if multiplier is None else float(multiplier)
    rho = settings.initial_penalty if penalty is None else float(penalty)
    history: list[float] = []
    total_inner = 0
    c_prev = math.inf
    converged = False
    message = "outer iteration budget exhausted"
    outer = 0
    last_kkt = math.inf

    for outer in range(1, settings.outer_iterations + 1):
        def merit(zz):
            F, G, gF, gG = prob.evaluate(zz)
            if F.scale == 0.0 or G.scale == 0.0:
                return 1e300, np.zeros_like(zz)
            c = G.log_norm
            val = F.log_norm - mu * c + 0.5 * rho * c * c
            return val, gF + (rho * c - mu) * gG

        res = minimize(merit, z, jac=True, method="L-BFGS-B",
                       callback=lambda xk: history.append(float(merit(xk)[0])),
                       options={"maxiter": settings.inner_iterations,
                                "maxcor": settings.memory, "ftol": 1e-16,
                                "gtol": settings.gradient_tolerance * 1e-4,
                                "maxls": 50})
        stalled = res.nit <= 1 and outer > 1
        if stalled:
            # the merit no longer resolves the constraint at double precision;
            # an update from an unmoved point would only inject noise into mu
            converged = bool(last_kkt <= 10 * settings.gradient_tolerance)
            message = "stalled" + ("" if converged else " above KKT tolerance")
            break
        z = res.x
        total_inner += int(res.nit)
        F, G, gF, gG = prob.evaluate(z)
        c = G.log_norm
        mu_new = mu - rho * c
        kkt = np.max(np.abs(gF - mu_new * gG)) / max(np.max(np.abs(gF)), 1e-300)
        log.debug("p=%g outer=%d c=%.3e mu=%.12g kkt=%.3e rho=%.1e nit=%d",
                  p, outer, c, mu_new, kkt, rho, res.nit)
        mu = mu_new
        last_kkt = kkt
        if abs(c) <= settings.constraint_tolerance and kkt <= settings.gradient_tolerance:
            converged = True
            message = "converged"
            break
        if abs(c) > settings.constraint_tolerance and abs(c) > 0.25 * c_prev:
            rho *= settings.penalty_growth
        c_prev = abs(c)

    u = prob.field(z)
    # land exactly on the constraint surface; the rescale is O(constraint residual)
    nr = normalize(g, u, p)
    u = u.scaled(nr.t_p)
    F = objective_and_gradient(f, u, p)
    G = constraint_and_gradient(g, u, p)
    L_p = F.norm
    result = PRunResult(p=p, u=u, multiplier=mu, L_p=L_p,
                        log_lambda_p=(math.log(mu) if mu > 0 else math.nan) + p * math.log(L_p),
                        constraint_residual=abs(G.norm - 1.0),
                        inner_iterations=total_inner, outer_iterations=outer,
                        penalty=rho, converged=converged, message=message,
                        merit_history=history)
    if mu <= 0:
        result.converged = False
        result.message = "nonpositive multiplier rejected (lambda_p must be > 0)"
    result.el_residual = el_residual(f, g, result)
    return result


# -- Euler-Lagrange residuals ----------------------------------------------

def bump_basis(disc: Discretization, count: int, N: int = 1) -> list[np.ndarray]:
    """Smooth compactly supported interior test fields, spread over components."""
    grid = disc.grid
    x = grid.coords
    interior = x[grid.interior]
    lo, hi = interior.min(axis=0), interior.max(axis=0)
    per = max(1, int(math.ceil(count / N)))
    if grid.dim == 1:
        centres = np.linspace(lo[0], hi[0], per + 2)[1:-1][:, None]
        radius = 1.5 * (hi[0] - lo[0]) / (per + 1)
    else:
        k = int(math.ceil(math.sqrt(per)))
        cx = np.linspace(lo[0], hi[0], k + 2)[1:-1]
        cy = np.linspace(lo[1], hi[1], k + 2)[1:-1]
        C = np.array([(a, b) for a in cx for b in cy])
        C = C[grid.domain.contains(C)]
        centres = C[:per]
        radius = 1.5 * (hi[0] - lo[0]) / (k + 1)
    margin = 3.5 * max(grid.spacing)
    out = []
    for comp in range(N):
        for c in centres:
            r2 = np.sum((x - c) ** 2, axis=1) / radius**2
            phi = np.clip(1 - r2, 0, None) ** 3
            # keep supports off the boundary stencils
            phi[_distance_to_boundary_nodes(disc) < margin] = 0.0
            if not phi.any():
                continue
            v = np.zeros((grid.num_nodes, N))
            v[:, comp] = phi
            out.append(v)
            if len(out) == count:
                return out
    return out


def _distance_to_boundary_nodes(disc):
    cached = getattr(disc, "_bdist", None)
    if cached is None:
        from scipy.spatial import cKDTree
        tree = cKDTree(disc.grid.coords[disc.boundary_idx])
        cached = tree.query(disc.grid.coords)[0]
        disc._bdist = cached
    return cached


@dataclass(frozen=True)
class WeakForm:
    """Factored integrands of both sides of the weak Euler-Lagrange system."""

    F_tilde: np.ndarray      # (f/m_f)^(p-1) df, nodes x N x n x n
    geta_tilde: np.ndarray   # (g/m_g)^(p-1) d_eta g
    gP_tilde: np.ndarray     # (g/m_g)^(p-1) d_P g
    coupling: float          # lambda_p * m_g^(p-1) / m_f^(p-1)


def weak_form(f: DensityF, g: DensityG, result: PRunResult) -> WeakForm:
    u, p = result.u, result.p
    fx = f.eval(u.D2u)
    gv = g.eval(u.values, u.Du)
    mf, mg = float(np.max(fx)), float(np.max(gv))
    rf = _accel.log_power_weights(fx, mf, p)
    rg = _accel.log_power_weights(gv, mg, p)
    log_coupling = result.log_lambda_p + (p - 1) * (math.log(mg) - math.log(mf))
    return WeakForm(rf[:, None, None, None] * f.grad(u.D2u),
                    rg[:, None] * g.grad_eta(u.values, u.Du),
                    rg[:, None, None] * g.grad_P(u.values, u.Du),
                    math.exp(log_coupling) if log_coupling < 700 else math.inf)


def weak_sides(disc: Discretization, wf: WeakForm, phi: np.ndarray) -> tuple[float, float, float]:
    """(lhs, rhs, scale) of the factored weak form for one test field."""
    w = disc.weights / disc.volume
    D2phi = disc.hessian(phi)
    Dphi = disc.gradient(phi)
    lhs = float(np.dot(w, np.sum(wf.F_tilde * D2phi, axis=(1, 2, 3))))
    rhs_int = (np.sum(wf.geta_tilde * phi, axis=1)
               + np.sum(wf.gP_tilde * Dphi, axis=(1, 2)))
    rhs = wf.coupling * float(np.dot(w, rhs_int))
    scale = math.sqrt(float(np.dot(w, np.sum(wf.F_tilde**2, axis=(1, 2, 3))))) * \
        math.sqrt(float(np.dot(w, np.sum(D2phi**2, axis=(1, 2, 3)))))
    return lhs, rhs, scale


def el_residual(f: DensityF, g: DensityG, result: PRunResult, test_basis_size: int = 20,
                basis: list[np.ndarray] | None = None) -> float:
    """Max relative defect of the weak Euler-Lagrange system over bump test fields."""
    disc = result.u.disc
    if basis is None:
        basis = bump_basis(disc, test_basis_size, result.u.N)
    wf = weak_form(f, g, result)
    worst = 0.0
    for phi in basis:
        lhs, rhs, scale = weak_sides(disc, wf, phi)
        if scale > 0:
            worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def euler_identity_sides(f: DensityF, g: DensityG, result: PRunResult) -> tuple[float, float, float]:
    """Weak form tested with phi = u_p (the identity behind the multiplier sandwich)."""
    wf = weak_form(f, g, result)
    return weak_sides(result.u.disc, wf, np.asarray(result.u.values))


def sandwich_values(f: DensityF, g: DensityG, p: float, L_p: float, Lambda_p: float,
                    slack: float) -> tuple[float, float, float, bool]:
    """(lower, Lambda_p, upper, ok) for (C1/C8)^(1/p) L_p <= Lambda_p <= (C2/C7)^(1/p) L_p."""
    lower = (f.C1 / g.C8) ** (1 / p) * L_p
    upper = (f.C2 / g.C7) ** (1 / p) * L_p
    ok = lower <= Lambda_p * (1 + slack) and Lambda_p <= upper * (1 + slack)
    return lower, Lambda_p, upper, ok


def sandwich(f: DensityF, g: DensityG, result: PRunResult, slack: float | None = None):
    """Multiplier sandwich for a solved step; default slack is 10 * el_residual."""
    if slack is None:
        slack = 10 * result.el_residual
    return sandwich_values(f, g, result.p, result.L_p, result.Lambda_p, slack)
