"""p-continuation with warm starts, convergence proxies, extrapolation and checkpoints."""

from __future__ import annotations

import hashlib
import io
import logging
import math
import os
import tempfile
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .densities import DensityF, DensityG
from .discretization import Discretization, GridField, linf_norm, lp_mean_norm
from .measures import assemble_measures, concentration_fraction
from .normalization import NormalizationError
from .psolver import (PRunResult, SolverError, SolverSettings, bump_basis, initial_bubble,
                      solve_p)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class ContinuationError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


def default_p0(n: int, alpha: float) -> float:
    return float(max(4, math.ceil(n / alpha) + 2))


def schedule(p0: float, factor: float, p_max: float) -> list[float]:
    if not p0 > 0 or not factor > 1 or p_max < p0:
        raise ValueError("schedule needs p0 > 0, factor > 1 and p_max >= p0")
    ps = [float(p0)]
    while ps[-1] * factor <= p_max * (1 + 1e-12):
        ps.append(ps[-1] * factor)
    return ps


@dataclass(frozen=True)
class ContinuationSettings:
    p0: float = 4.0
    factor: float = 2.0
    p_max: float = 512.0
    tol_lambda: float = 0.0
    solver: SolverSettings = field(default_factory=SolverSettings)
    seed: int = 0
    test_fields: int = 20

    def __post_init__(self):
        schedule(self.p0, self.factor, self.p_max)
        if self.tol_lambda < 0:
            raise ValueError("tol_lambda must be nonnegative")


@dataclass
class StepDiagnostics:
    p: float
    c0_diff: float = math.nan
    c1_diff: float = math.nan
    hessian_pairings: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nu_mass: float = math.nan
    M_mass: float = math.nan
    concentration: float = math.nan
    sup_constraint: float = math.nan


@dataclass
class ExtrapolationResult:
    value: float
    slope: float
    residual: float
    warning: str = ""
    ps: tuple = ()


@dataclass
class ContinuationTrace:
    results: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    termination: str = ""
    extrapolation: ExtrapolationResult | None = None
    seed: int = 0
    failed: bool = False

    @property
    def ps(self) -> list[float]:
        return [r.p for r in self.results]

    @property
    def Lambdas(self) -> list[float]:
        return [r.Lambda_p for r in self.results]

    @property
    def Ls(self) -> list[float]:
        return [r.L_p for r in self.results]

    @property
    def Lambda_inf(self) -> float | None:
        return None if self.extrapolation is None else self.extrapolation.value

    @property
    def last(self) -> PRunResult:
        return self.results[-1]


def extrapolate_lambda(ps, lambdas, noise: float = 1e-9) -> ExtrapolationResult:
    """Least-squares fit Lambda_p = Lambda_inf + a/p over the last three points.

    A tail whose successive differences change sign by more than ``noise``
    (relative) is not modelled; the last value is returned with a warning.
    """
    ps = np.asarray(ps, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    if len(ps) < 3:
        raise ContinuationError("extrapolation needs at least three steps")
    x, y = ps[-3:], lam[-3:]
    d = np.diff(y)
    tiny = noise * np.max(np.abs(y))
    if np.all(np.abs(d) <= tiny):
        return ExtrapolationResult(float(y[-1]), 0.0, float(np.max(np.abs(d))), "", tuple(x))
    if np.any(d > tiny) and np.any(d < -tiny):
        return ExtrapolationResult(float(y[-1]), math.nan, math.nan,
                                   "non-monotone tail; returning last value", tuple(x))
    A = np.column_stack([np.ones(3), 1.0 / x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.max(np.abs(A @ coef - y)))
    return ExtrapolationResult(float(coef[0]), float(coef[1]), resid, "", tuple(x))


def _hessian_pairings(u: GridField, tests: list[np.ndarray]) -> np.ndarray:
    """Mean of phi * D^2u entries for each fixed scalar test field."""
    w = u.disc.weights / u.disc.volume
    H = u.D2u.reshape(u.D2u.shape[0], -1)
    return np.array([w @ (phi[:, None] * H) for phi in tests]).ravel()


def step_diagnostics(f: DensityF, g: DensityG, result: PRunResult,
                     previous: PRunResult | None, tests: list[np.ndarray]) -> StepDiagnostics:
    u = result.u
    diag = StepDiagnostics(result.p)
    if previous is not None:
        diag.c0_diff = linf_norm(u.values - previous.u.values)
        diag.c1_diff = linf_norm(u.Du - previous.u.Du)
    diag.hessian_pairings = _hessian_pairings(u, tests)
    gv = g.eval(u.values, u.Du)
    diag.sup_constraint = linf_norm(gv)
    if result.Lambda_p > 0 and math.isfinite(result.Lambda_p):
        M, nu = assemble_measures(f, g, result)
        diag.nu_mass = nu.total_variation
        diag.M_mass = M.total_variation
        diag.concentration = concentration_fraction(nu, gv)
    return diag


def scalar_test_fields(disc: Discretization, count: int) -> list[np.ndarray]:
    return [b[:, 0] for b in bump_basis(disc, count, 1)]


def run_continuation(f: DensityF, g: DensityG, disc: Discretization, N: int = 1,
                     settings: ContinuationSettings = ContinuationSettings(),
                     init: GridField | None = None, checkpoint: str | None = None,
                     config_hash: str = "", resume: "Checkpoint | None" = None,
                     stop_after: float | None = None) -> ContinuationTrace:
    """Solve along p0, factor*p0, ... <= p_max with warm starts.

    Stops when the relative change of Lambda_p drops below ``tol_lambda`` or
    the schedule is exhausted; a solver exception ends the run with a partial
    trace flagged ``failed``. ``checkpoint`` is rewritten after every step.
    ``stop_after`` halts after that p (used to produce resumable checkpoints).
    """
    ps = schedule(settings.p0, settings.factor, settings.p_max)
    tests = scalar_test_fields(disc, settings.test_fields)
    trace = ContinuationTrace(seed=settings.seed)
    u = init if init is not None else initial_bubble(disc, N, settings.seed)
    mu = None
    if resume is not None:
        if resume.config_hash != config_hash:
            raise CheckpointError("config hash mismatch: checkpoint belongs to a different run")
        trace = resume.trace(disc, f, g, tests)
        u, mu = trace.last.u, trace.last.multiplier
        ps = [p for p in ps if p > trace.last.p]
        if trace.termination and trace.termination != "interrupted":
            ps = []
    trace.termination = "p_max reached"
    for p in ps:
        try:
            res = solve_p(f, g, u, p, settings.solver, multiplier=mu)
        except (SolverError, NormalizationError, FloatingPointError, ValueError) as exc:
            trace.failed = True
            trace.termination = f"solver failure at p={p:g}: {exc}"
            break
        prev = trace.results[-1] if trace.results else None
        trace.results.append(res)
        trace.diagnostics.append(step_diagnostics(f, g, res, prev, tests))
        log.info("p=%g Lambda_p=%.10g L_p=%.10g el=%.2e converged=%s",
                 p, res.Lambda_p, res.L_p, res.el_residual, res.converged)
        if not res.multiplier > 0:
            trace.failed = True
            trace.termination = f"nonpositive multiplier at p={p:g}"
            break
        u, mu = res.u, res.multiplier
        if prev is not None and settings.tol_lambda > 0:
            if abs(res.Lambda_p - prev.Lambda_p) / prev.Lambda_p < settings.tol_lambda:
                trace.termination = "Lambda tolerance reached"
                break
        if stop_after is not None and p >= stop_after and p != ps[-1]:
            trace.termination = "interrupted"
            break
        if checkpoint is not None:
            save_checkpoint(checkpoint, trace, config_hash)
    if len(trace.results) >= 3 and trace.termination != "interrupted":
        trace.extrapolation = extrapolate_lambda(trace.ps, trace.Lambdas)
    if checkpoint is not None and trace.results:
        save_checkpoint(checkpoint, trace, config_hash)
    return trace


# -- checkpoints ----------------------------------------------------------

_SCALARS = ("p", "multiplier", "L_p", "log_lambda_p", "constraint_residual", "el_residual",
            "inner_iterations", "outer_iterations", "penalty", "converged")


def _payload(trace: ContinuationTrace, config_hash: str) -> dict:
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "config_hash": np.array(config_hash),
        "seed": np.array(trace.seed),
        "termination": np.array(trace.termination),
        "messages": np.array([r.message for r in trace.results] or [""]),
        "count": np.array(len(trace.results)),
    }
    for name in _SCALARS:
        arrays[f"s_{name}"] = np.array([float(getattr(r, name)) for r in trace.results])
    for i, r in enumerate(trace.results):
        arrays[f"u_{i}"] = np.asarray(r.u.values)
    return arrays


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for key in sorted(arrays):
        a = np.ascontiguousarray(arrays[key])
        h.update(key.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str, trace: ContinuationTrace, config_hash: str) -> None:
    if not trace.results:
        raise CheckpointError("cannot checkpoint an empty trace")
    arrays = _payload(trace, config_hash)
    arrays["digest"] = np.array(_digest(arrays))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


@dataclass
class Checkpoint:
    config_hash: str
    seed: int
    termination: str
    scalars: dict
    messages: list
    fields: list

    @property
    def ps(self) -> list[float]:
        return list(self.scalars["p"])

    def trace(self, disc: Discretization, f: DensityF, g: DensityG,
              tests: list[np.ndarray]) -> ContinuationTrace:
        tr = ContinuationTrace(seed=self.seed, termination=self.termination)
        for i, vals in enumerate(self.fields):
            if vals.shape[0] != disc.num_nodes:
                raise CheckpointError("checkpoint grid does not match the discretisation")
            kw = {k: self.scalars[k][i].item() for k in _SCALARS}
            for k in ("inner_iterations", "outer_iterations"):
                kw[k] = int(kw[k])
            kw["converged"] = bool(kw["converged"])
            res = PRunResult(u=GridField(disc, vals), message=self.messages[i], **kw)
            prev = tr.results[-1] if tr.results else None
            tr.results.append(res)
            tr.diagnostics.append(step_diagnostics(f, g, res, prev, tests))
        return tr


def load_checkpoint(path: str) -> Checkpoint:
    """Read and verify a checkpoint; any damage raises CheckpointError."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError, EOFError, zipfile.BadZipFile, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    try:
        stored = str(arrays.pop("digest"))
        if _digest(arrays) != stored:
            raise CheckpointError("checkpoint digest mismatch")
        if int(arrays["version"]) != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {int(arrays['version'])}")
        count = int(arrays["count"])
        scalars = {k: arrays[f"s_{k}"] for k in _SCALARS}
        fields = [arrays[f"u_{i}"] for i in range(count)]
        messages = [str(m) for m in arrays["messages"]][:count]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing entry {exc}") from exc
    return Checkpoint(str(arrays["config_hash"]), int(arrays["seed"]),
                      str(arrays["termination"]), scalars, messages, fields)


# -- trace-level properties -----------------------------------------------

def norm_monotonicity(f: DensityF, result: PRunResult, qs) -> list[tuple[float, float, bool]]:
    """(q, ||f(D^2u_p)||_q, ok) with ok meaning the value does not exceed L_p (q <= p)."""
    fx = f.eval(result.u.D2u)
    out = []
    for q in qs:
        if q > result.p:
            continue
        v = lp_mean_norm(fx, q, result.u.disc.weights).value
        out.append((float(q), v, v <= result.L_p * (1 + 1e-12)))
    return out


def homogeneous_agreement(trace: ContinuationTrace) -> float:
    """Max |Lambda_p - L_p| / L_p along the trace."""
    return max(abs(r.Lambda_p - r.L_p) / r.L_p for r in trace.results)
