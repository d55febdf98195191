"""Hessian integrands f and constraint densities g with their derivatives.

All densities act on stacked arrays: ``X`` has shape ``(..., N, n, n)``,
``eta`` shape ``(..., N)`` and ``P`` shape ``(..., N, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class AssumptionError(ValueError):
    pass


class LowerBoundUnavailable(ValueError):
    pass


class NonCoerciveError(ValueError):
    pass


def _sq(X, axes):
    return np.sum(X * X, axis=axes)


@dataclass(frozen=True)
class DensityF:
    """Integrand on symmetric Hessian tensors with its declared constants."""

    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    C1: float
    C2: float
    C3: float
    C4: float
    C5: float
    C6: float
    alpha: float
    beta: float
    degree: float | None = None
    params: dict = field(default_factory=dict)

    @property
    def constants(self) -> dict:
        return dict(C1=self.C1, C2=self.C2, C3=self.C3, C4=self.C4, C5=self.C5,
                    C6=self.C6, alpha=self.alpha, beta=self.beta)

    def __call__(self, X):
        return self.eval(X)


@dataclass(frozen=True)
class DensityG:
    """Constraint density on (value, gradient) pairs.

    ``coercive_in`` records which variables the density blows up in:
    ``"both"``, ``"eta"`` or ``"P"``. ``sublevel_sup`` and ``radius`` are
    optional closed forms for ``sublevel_sup_gradients`` and
    ``constraint_radius_R``.
    """

    name: str
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_eta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_P: Callable[[np.ndarray, np.ndarray], np.ndarray]
    C7: float
    C8: float
    degree: float | None = None
    coercive_in: str = "both"
    sublevel_sup: Callable[[float], tuple[float, float]] | None = None
    radius: Callable[[float], float] | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, eta, P):
        return self.eval(eta, P)


# -- catalogue: f ---------------------------------------------------------

def power_f(alpha: float = 2.0) -> DensityF:
    """f(X) = |X|^alpha, alpha in {2, 4}."""
    if alpha not in (2, 4):
        raise ValueError("catalogue power density supports alpha in {2, 4}")
    a = float(alpha)

    def ev(X):
        return _sq(X, (-3, -2, -1)) ** (a / 2)

    def gr(X):
        s = _sq(X, (-3, -2, -1))
        return (a * s ** (a / 2 - 1))[..., None, None, None] * X

    # |df| = a |X|^(a-1) = a f^((a-1)/a)
    return DensityF(f"|X|^{alpha:g}", ev, gr, C1=a, C2=a, C3=0.0, C4=1.0,
                    C5=a, C6=0.0, alpha=a, beta=(a - 1) / a, degree=a,
                    params={"alpha": a})


def regularized_power_f(alpha: float = 4.0, mu: float = 1.0) -> DensityF:
    """f(X) = (mu + |X|^2)^(alpha/2) - mu^(alpha/2), alpha in {2, 4}, mu > 0."""
    if alpha not in (2, 4):
        raise ValueError("regularized density supports alpha in {2, 4}")
    if mu <= 0:
        raise ValueError("mu must be positive")
    a = float(alpha)
    half = a / 2

    def ev(X):
        s = _sq(X, (-3, -2, -1))
        if half == 1:
            return s
        return s * (s + 2 * mu)

    def gr(X):
        s = _sq(X, (-3, -2, -1))
        return (a * (mu + s) ** (half - 1))[..., None, None, None] * X

    if half == 1:
        consts = dict(C1=2.0, C2=2.0, C3=0.0, C4=1.0, C5=2.0, C6=0.0, beta=0.5)
        degree = 2.0
    else:
        # f = s^2 + 2 mu s;  df:X = 4 s^2 + 4 mu s;  ratio in [2, 4].
        # |df| = 4 (mu + s) sqrt(s) <= 4 f + 27/64 + mu/2; f <= 4|X|^4 + mu^2/3.
        c6 = max(27.0 / 64.0 + mu / 2, mu * mu / 3)
        consts = dict(C1=2.0, C2=4.0, C3=0.0, C4=1.0, C5=4.0, C6=c6, beta=1.0)
        degree = None
    return DensityF(f"(mu+|X|^2)^{half:g}-mu^{half:g}", ev, gr, alpha=a,
                    degree=degree, params={"alpha": a, "mu": mu}, **consts)


# -- catalogue: g ---------------------------------------------------------

def eta_power_g(gamma: float = 2.0) -> DensityG:
    """g(eta, P) = |eta|^gamma."""
    if gamma not in (2, 4):
        raise ValueError("gamma must be 2 or 4")
    c = float(gamma)

    def ev(eta, P):
        return _sq(eta, -1) ** (c / 2)

    def ge(eta, P):
        return (c * _sq(eta, -1) ** (c / 2 - 1))[..., None] * eta

    def gp(eta, P):
        return np.zeros_like(P)

    def sup(t):
        r = t ** (1 / c)
        return c * r ** (c - 1), 0.0

    return DensityG(f"|eta|^{gamma:g}", ev, ge, gp, C7=c, C8=c, degree=c,
                    coercive_in="eta", sublevel_sup=sup,
                    radius=lambda t: max(t, 0.0) ** (1 / c),
                    params={"gamma": c})


def grad_power_g(gamma: float = 2.0) -> DensityG:
    """g(eta, P) = |P|^gamma."""
    if gamma not in (2, 4):
        raise ValueError("gamma must be 2 or 4")
    c = float(gamma)

    def ev(eta, P):
        return _sq(P, (-2, -1)) ** (c / 2)

    def ge(eta, P):
        return np.zeros_like(eta)

    def gp(eta, P):
        return (c * _sq(P, (-2, -1)) ** (c / 2 - 1))[..., None, None] * P

    def sup(t):
        r = t ** (1 / c)
        return 0.0, c * r ** (c - 1)

    return DensityG(f"|P|^{gamma:g}", ev, ge, gp, C7=c, C8=c, degree=c,
                    coercive_in="P", sublevel_sup=sup, radius=None,
                    params={"gamma": c})


def quadratic_g() -> DensityG:
    """g(eta, P) = |eta|^2 + |P|^2."""

    def ev(eta, P):
        return _sq(eta, -1) + _sq(P, (-2, -1))

    def sup(t):
        r = math.sqrt(t)
        return 2 * r, 2 * r

    return DensityG("|eta|^2+|P|^2", ev, lambda e, P: 2 * e, lambda e, P: 2 * P,
                    C7=2.0, C8=2.0, degree=2.0, sublevel_sup=sup,
                    radius=lambda t: math.sqrt(max(t, 0.0)))


def quartic_eta_g() -> DensityG:
    """g(eta, P) = |eta|^2 + |eta|^4."""

    def ev(eta, P):
        s = _sq(eta, -1)
        return s + s * s

    def ge(eta, P):
        s = _sq(eta, -1)
        return (2 + 4 * s)[..., None] * eta

    def radius(t):
        t = max(t, 0.0)
        # r^2 = (-1 + sqrt(1 + 4t)) / 2, written to avoid cancellation
        return math.sqrt(2 * t / (1 + math.sqrt(1 + 4 * t)))

    def sup(t):
        r = radius(t)
        return 2 * r + 4 * r**3, 0.0

    # eta-derivative pairing 2s + 4s^2 lies in [2, 4] * (s + s^2)
    return DensityG("|eta|^2+|eta|^4", ev, ge, lambda e, P: np.zeros_like(P),
                    C7=2.0, C8=4.0, degree=None, coercive_in="eta",
                    sublevel_sup=sup, radius=radius)


F_CATALOGUE = {"power": power_f, "regularized_power": regularized_power_f}
G_CATALOGUE = {"eta_power": eta_power_g, "grad_power": grad_power_g,
               "quadratic": quadratic_g, "quartic_eta": quartic_eta_g}


def make_f(name: str, **params) -> DensityF:
    try:
        return F_CATALOGUE[name](**params)
    except KeyError:
        raise ValueError(f"unknown f density {name!r}; choose from {sorted(F_CATALOGUE)}")


def make_g(name: str, **params) -> DensityG:
    try:
        return G_CATALOGUE[name](**params)
    except KeyError:
        raise ValueError(f"unknown g density {name!r}; choose from {sorted(G_CATALOGUE)}")


def with_constants(f: DensityF, **changes) -> DensityF:
    """Copy of ``f`` with some declared constants replaced."""
    from dataclasses import replace
    return replace(f, **changes)


def scaled_f(f: DensityF, c: float) -> DensityF:
    """The integrand c*f (Euler constants unchanged, growth constants scaled)."""
    from dataclasses import replace
    return replace(f, name=f"{c:g}*{f.name}", eval=lambda X: c * f.eval(X),
                   grad=lambda X: c * f.grad(X), C4=c * f.C4, C3=c * f.C3,
                   C5=max(c, c ** (1 - f.beta)) * f.C5, C6=c * f.C6)


# -- numerical checks -----------------------------------------------------

def sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + np.swapaxes(X, -1, -2))


@dataclass
class AssumptionReport:
    passed: bool
    margins: dict
    failures: list = field(default_factory=list)
    coercivity: str = "both"

    def raise_on_failure(self):
        if not self.passed:
            name, witness = self.failures[0]
            raise AssumptionError(f"assumption {name} violated at {witness}")


def _log_spread(rng, count, shape, lo=-3, hi=3):
    base = rng.standard_normal((count,) + shape)
    scale = 10.0 ** rng.uniform(lo, hi, size=count)
    return base * scale.reshape((count,) + (1,) * len(shape))


def check_assumptions(f: DensityF, g: DensityG, N: int = 1, n: int = 1,
                      samples: int = 1000, seed: int = 0,
                      rtol: float = 1e-9) -> AssumptionReport:
    """Sample the Euler sandwiches, growth bounds, rank-one convexity and coercivity.

    Margins are the worst slack of each inequality relative to the larger side;
    a negative margin beyond ``rtol`` is a failure, reported with its witness.
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    rng = np.random.default_rng(seed)
    X = sym(_log_spread(rng, samples, (N, n, n)))
    fx = f.eval(X)
    dfx = f.grad(X)
    radial = np.sum(dfx * X, axis=(-3, -2, -1))
    norm = np.sqrt(_sq(X, (-3, -2, -1)))
    dnorm = np.sqrt(_sq(dfx, (-3, -2, -1)))

    checks = {
        "f_positive": (fx, np.zeros_like(fx)),
        "f_euler_lower": (radial, f.C1 * fx),
        "f_euler_upper": (f.C2 * fx, radial),
        "f_growth_lower": (fx, -f.C3 + f.C4 * norm**f.alpha),
        "f_growth_upper": (f.C5 * norm**f.alpha + f.C6, fx),
        "f_gradient_growth": (f.C5 * fx**f.beta + f.C6, dnorm),
    }
    witnesses = {k: X for k in checks}

    eta = _log_spread(rng, samples, (N,))
    P = _log_spread(rng, samples, (N, n))
    # half of the samples degenerate in one variable to probe partial densities
    half = samples // 2
    if g.coercive_in == "eta":
        P[:half] = 0.0
    elif g.coercive_in == "P":
        eta[:half] = 0.0
    gv = g.eval(eta, P)
    gr = np.sum(g.grad_eta(eta, P) * eta, axis=-1) + np.sum(g.grad_P(eta, P) * P, axis=(-2, -1))
    nz = gv > 0
    checks["g_euler_lower"] = (gr[nz], g.C7 * gv[nz])
    checks["g_euler_upper"] = (g.C8 * gv[nz], gr[nz])
    checks["g_nonnegative"] = (gv, np.zeros_like(gv))
    gw = list(zip(eta[nz], P[nz]))
    witnesses.update(g_euler_lower=gw, g_euler_upper=gw,
                     g_nonnegative=list(zip(eta, P)))

    margins, failures = {}, []
    for name, (big, small) in checks.items():
        scale = np.maximum(np.maximum(np.abs(big), np.abs(small)), 1e-300)
        rel = (big - small) / scale
        if rel.size == 0:
            margins[name] = float("inf")
            continue
        k = int(np.argmin(rel))
        margins[name] = float(rel[k])
        if rel[k] < -rtol:
            failures.append((name, witnesses[name][k]))

    # rank-one convexity of t -> f(X + t a (x) b) (necessary for quasiconvexity)
    worst = np.inf
    for i in range(min(samples, 200)):
        a = rng.standard_normal(N)
        b = rng.standard_normal(n)
        D = np.einsum("k,i,j->kij", a, b, b)
        ts = np.linspace(-1, 1, 9)[:, None, None, None]
        vals = f.eval(X[i] + ts * D)
        second = vals[:-2] - 2 * vals[1:-1] + vals[2:]
        rel = second / max(np.max(np.abs(vals)), 1e-300)
        worst = min(worst, float(rel.min()))
        if rel.min() < -1e-9:
            failures.append(("f_rank_one_convexity", X[i]))
            break
    margins["f_rank_one_convexity"] = worst

    # coercivity along unit directions at radii 10^k
    dirs_eta = rng.standard_normal((64, N))
    dirs_P = rng.standard_normal((64, N, n))
    if g.coercive_in == "eta":
        dirs_P[:] = 0.0
    elif g.coercive_in == "P":
        dirs_eta[:] = 0.0
    nrm = np.sqrt(_sq(dirs_eta, -1) + _sq(dirs_P, (-2, -1)))
    dirs_eta /= nrm[:, None]
    dirs_P /= nrm[:, None, None]
    mins = [float(np.min(g.eval(r * dirs_eta, r * dirs_P))) for r in (1, 10, 100, 1000)]
    margins["g_coercivity"] = mins[-1]
    if not all(a < b for a, b in zip(mins, mins[1:])):
        failures.append(("g_coercivity", mins))

    return AssumptionReport(not failures, margins, failures, g.coercive_in)


def radial_monotone_f(f: DensityF, X: np.ndarray, s: float, t: float) -> bool:
    return bool(np.all(f.eval(s * X) < f.eval(t * X)))


# -- sublevel geometry of g ----------------------------------------------

SUBLEVEL_SAFETY = 1.05


def _sobol_ball(count, dim, seed):
    from scipy.stats import qmc
    pts = qmc.Sobol(dim, seed=seed).random(count)
    gauss = np.sqrt(2) * _erfinv(2 * np.clip(pts, 1e-12, 1 - 1e-12) - 1)
    return gauss


def _erfinv(x):
    from scipy.special import erfinv
    return erfinv(x)


def sublevel_sup_gradients(g: DensityG, t: float, N: int = 1, n: int = 1,
                           samples: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """(sup |d_eta g|, sup |d_P g|) over the sublevel set {g <= t}.

    Uses the density's closed form when present; otherwise samples a
    quasi-random cover of the set (requires bounded sublevel sets) and
    inflates by ``SUBLEVEL_SAFETY``.
    """
    if t <= 0:
        raise ValueError("level must be positive")
    if g.sublevel_sup is not None:
        return tuple(float(v) for v in g.sublevel_sup(t))
    if g.coercive_in != "both":
        raise LowerBoundUnavailable(
            "lower bound unavailable: sublevel set unbounded and no closed form")
    # radial bisection for the boundary of {g <= t} along each sampled direction
    z = _sobol_ball(samples, N + N * n, seed)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    eta_d, P_d = z[:, :N], z[:, N:].reshape(-1, N, n)
    lo = np.zeros(samples)
    hi = np.ones(samples)
    for _ in range(200):
        grow = g.eval(hi[:, None] * eta_d, hi[:, None, None] * P_d) <= t
        if not grow.any():
            break
        hi[grow] *= 2
    else:
        raise NonCoerciveError("sublevel set not bounded")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = g.eval(mid[:, None] * eta_d, mid[:, None, None] * P_d) <= t
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    # sample the filled set: boundary points and scaled interior shells
    best_e = best_p = 0.0
    for frac in np.linspace(0.0, 1.0, 21):
        r = frac * lo
        e = r[:, None] * eta_d
        Pp = r[:, None, None] * P_d
        best_e = max(best_e, float(np.max(np.sqrt(_sq(g.grad_eta(e, Pp), -1)))))
        best_p = max(best_p, float(np.max(np.sqrt(_sq(g.grad_P(e, Pp), (-2, -1))))))
    return SUBLEVEL_SAFETY * best_e, SUBLEVEL_SAFETY * best_p


def _min_over_P(g: DensityG, eta: np.ndarray, N: int, n: int, rng) -> float:
    from scipy.optimize import minimize
    P0 = np.zeros((N, n))
    best = float(g.eval(eta, P0))
    for trial in range(3):
        start = P0 if trial == 0 else rng.standard_normal((N, n))

        def obj(pv):
            Pm = pv.reshape(N, n)
            val = float(g.eval(eta, Pm))
            grad = g.grad_P(eta, Pm).ravel()
            return val, grad

        res = minimize(obj, start.ravel(), jac=True, method="L-BFGS-B")
        best = min(best, float(res.fun))
    return best


def constraint_radius_R(g: DensityG, t: float, N: int = 1, n: int = 1,
                        directions: int = 64, seed: int = 0, tol: float = 1e-12) -> float:
    """Smallest R with {g <= t} inside the cylinder B^N_R x R^{N x n}."""
    if t < 0:
        raise ValueError("level must be nonnegative")
    if t == 0:
        return 0.0
    if g.coercive_in == "P":
        raise NonCoerciveError("g is not coercive in eta; R(t) is infinite")
    if g.radius is not None:
        return float(g.radius(t))
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((directions, N))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def lowest(R):
        return min(_min_over_P(g, R * d, N, n, rng) for d in dirs)

    hi = 1.0
    for _ in range(200):
        if lowest(hi) > t:
            break
        hi *= 2
    else:
        raise NonCoerciveError("constraint density is not coercive in eta")
    lo = 0.0
    while hi - lo > tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if lowest(mid) <= t:
            lo = mid
        else:
            hi = mid
    return hi


def rho_function(g: DensityG, t: float, N: int = 1, n: int = 1, grid: int = 101) -> float:
    """t + sup_{0 <= s <= t} R(s), with the sup sampled on ``grid`` points."""
    if t <= 0:
        return 0.0
    ss = np.linspace(0.0, t, grid)
    return t + max(constraint_radius_R(g, float(s), N, n) for s in ss)
