"""Command line front end: ``run``, ``verify`` and ``export-plots``.

Exit codes: 0 success, 2 configuration or artifact error, 3 solver failure,
4 invariant violation. ``LINFEIG_NUM_THREADS`` caps BLAS/OpenMP threads.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .bounds import BoundsReport, bounds_report, sandwich_check
from .config import ConfigError, RunConfig, load_config
from .continuation import (CheckpointError, ContinuationTrace, atomic_write_bytes,
                           load_checkpoint, run_continuation)
from .densities import check_assumptions
from .discretization import GridField
from .geometry import descriptors
from .measures import (DiscreteMeasure, MeasureError, MeasureKind, assemble_measures,
                       mass_bound_M, mass_bounds_report, pairing_residual)
from .psolver import PRunResult, bump_basis, sandwich_values

log = logging.getLogger("linfeig")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4
NU_TOL = 1e-8
LOWER_SLACK = 0.05

TRACE_COLUMNS = ["p", "Lambda_p", "L_p", "log10_lambda_p", "lambda_p", "multiplier",
                 "constraint_residual", "el_residual", "nu_mass", "M_mass", "M_bound",
                 "pairing_residual", "c0_diff", "c1_diff", "sup_constraint",
                 "concentration", "converged"]


# -- small helpers --------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, str):
        return x
    x = float(x)
    return repr(x) if math.isfinite(x) else ""


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def lambda_string(log10_value: float) -> str:
    """lambda_p = 10^log10_value written in scientific notation, beyond double range."""
    e = math.floor(log10_value)
    m = 10 ** (log10_value - e)
    if m >= 9.9999999995:
        m, e = 1.0, e + 1
    return f"{m:.10f}e{e:+d}"


def p_tag(p: float) -> str:
    return f"{p:g}"


def write_csv(path: str, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    atomic_write_bytes(path, buf.getvalue().encode())


def write_json(path: str, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    atomic_write_bytes(path, text.encode())


def read_csv(path: str) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        return list(rd.fieldnames or []), list(rd)


def _limit_threads():
    n = os.environ.get("LINFEIG_NUM_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


# -- measures export ------------------------------------------------------

def measure_columns(dim: int, N: int) -> list[str]:
    coords = ["x", "y"][:dim]
    comps = [f"M_{k}_{i}_{j}" for k in range(N) for i in range(dim) for j in range(dim)]
    return coords + ["cell_volume", "g_density", "nu_density", "nu_weight", "M_norm"] + comps


def write_measures(path: str, result: PRunResult, g, M: DiscreteMeasure,
                   nu: DiscreteMeasure) -> None:
    u = result.u
    coords = u.disc.grid.coords
    gv = g.eval(u.values, u.Du)
    dens = M.density.reshape(M.density.shape[0], -1)
    nu_w, M_norm = nu.weights, M.node_norm
    rows = (list(coords[i]) + [M.cell_volumes[i], gv[i], nu.density[i], nu_w[i], M_norm[i]]
            + list(dens[i]) for i in range(coords.shape[0]))
    write_csv(path, measure_columns(u.disc.dim, u.N), rows)


def read_measures(path: str, dim: int, N: int, p: float) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    header, rows = read_csv(path)
    want = measure_columns(dim, N)
    if header != want:
        raise ValueError(f"unexpected measure columns in {path}")
    arr = np.array([[float(r[c]) for c in want] for r in rows])
    cv = arr[:, dim]
    vol = float(np.add.accumulate(cv)[-1])
    nu = DiscreteMeasure(MeasureKind.SCALAR, arr[:, dim + 2], cv, vol, p)
    M = DiscreteMeasure(MeasureKind.TENSOR, arr[:, dim + 5:].reshape(-1, N, dim, dim), cv, vol, p)
    return M, nu


# -- run ------------------------------------------------------------------

class _Checks:
    def __init__(self):
        self.items = []

    def add(self, name, ok, p=None, value=None, limit=None, note=""):
        self.items.append({"name": name, "p": p, "ok": bool(ok),
                           "value": None if value is None else _finite(value),
                           "limit": None if limit is None else _finite(limit), "note": note})

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.items)


def _step_checks(cfg: RunConfig, f, g, res: PRunResult, M, nu, tests, checks: _Checks):
    p = res.p
    slack = 10 * res.el_residual
    lo, lam, hi, ok = sandwich_values(f, g, p, res.L_p, res.Lambda_p, slack)
    checks.add("multiplier_sandwich", ok, p, lam, hi, f"lower {lo!r}")
    checks.add("positive_multiplier", res.multiplier > 0, p, res.multiplier)
    checks.add("constraint_residual", res.constraint_residual <= max(cfg.solver.constraint_tolerance, 1e-12),
               p, res.constraint_residual, max(cfg.solver.constraint_tolerance, 1e-12))
    mass = mass_bounds_report(M, nu, res, f, g, nu_tol=NU_TOL)
    checks.add("nu_mass", mass.nu_mass <= 1 + NU_TOL, p, mass.nu_mass, 1 + NU_TOL)
    checks.add("M_mass", mass.M_mass <= mass.M_bound * (1 + slack), p, mass.M_mass, mass.M_bound)
    pr = pairing_residual(M, nu, f, g, res, tests)
    limit = max(1e-8, 10 * res.el_residual)
    checks.add("pairing_residual", pr <= limit, p, pr, limit)
    return mass, pr


def run(config_path: str, resume: bool = False, output: str | None = None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    out = os.path.abspath(output or cfg.output.directory)
    os.makedirs(out, exist_ok=True)
    limiter = _limit_threads()
    t_start = time.perf_counter()
    try:
        return _run(cfg, out, resume, t_start)
    finally:
        if limiter is not None:
            limiter.unregister()


def _run(cfg: RunConfig, out: str, resume: bool, t_start: float) -> int:
    f, g = cfg.density_f(), cfg.density_g()
    disc = cfg.discretization()
    N, n = cfg.N, disc.dim
    chash = cfg.config_hash()
    ckpt_path = os.path.join(out, "checkpoint.npz")
    ck = None
    if resume and os.path.exists(ckpt_path):
        try:
            ck = load_checkpoint(ckpt_path)
        except CheckpointError as exc:
            print(f"cannot resume: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if ck.config_hash != chash:
            print("cannot resume: config hash mismatch", file=sys.stderr)
            return EXIT_CONFIG

    checks = _Checks()
    assumptions = check_assumptions(f, g, N, n, samples=1000, seed=cfg.seed)
    checks.add("density_assumptions", assumptions.passed,
               note="; ".join(name for name, _ in assumptions.failures))

    t0 = time.perf_counter()
    trace = run_continuation(f, g, disc, N, cfg.continuation_settings(), checkpoint=ckpt_path,
                             config_hash=chash, resume=ck)
    t_solve = time.perf_counter() - t0

    tests = bump_basis(disc, cfg.test_fields, N)
    rows, table, omitted = [], [], []
    for res, diag in zip(trace.results, trace.diagnostics):
        try:
            M, nu = assemble_measures(f, g, res)
        except MeasureError as exc:
            omitted.append({"p": res.p, "reason": str(exc)})
            M = nu = None
        if M is not None:
            mass, pr = _step_checks(cfg, f, g, res, M, nu, tests, checks)
            if "csv" in cfg.output.formats:
                write_measures(os.path.join(out, f"measures_p{p_tag(res.p)}.csv"), res, g, M, nu)
            nu_mass, M_mass, M_bound = mass.nu_mass, mass.M_mass, mass.M_bound
        else:
            pr = nu_mass = M_mass = M_bound = math.nan
        lam10 = res.log10_lambda_p
        row = [res.p, res.Lambda_p, res.L_p, lam10, lambda_string(lam10), res.multiplier,
               res.constraint_residual, res.el_residual, nu_mass, M_mass, M_bound, pr,
               diag.c0_diff, diag.c1_diff, diag.sup_constraint, diag.concentration, res.converged]
        rows.append(row)
        entry = {k: (v if isinstance(v, (str, bool)) else _finite(v)) for k, v in zip(TRACE_COLUMNS, row)}
        entry["message"] = res.message
        entry["inner_iterations"] = res.inner_iterations
        table.append(entry)

    geo = descriptors(cfg.domain_spec())
    bounds = bounds_report(f, g, geo, cfg.bc, N)
    if trace.results:
        lam_final = trace.last.Lambda_p
        lam_inf = trace.Lambda_inf
        verdict = sandwich_check(bounds, lam_final, lam_inf, slack=LOWER_SLACK)
        checks.add("bounds_sandwich", verdict.ok, value=lam_final, note="; ".join(verdict.messages))

    if "csv" in cfg.output.formats:
        write_csv(os.path.join(out, "trace.csv"), TRACE_COLUMNS, rows)
    ext = trace.extrapolation
    report = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": cfg.model_dump(mode="json"),
        "config_hash": chash,
        "steps": table,
        "extrapolation": None if ext is None else {
            "Lambda_inf": _finite(ext.value), "slope": _finite(ext.slope),
            "fit_residual": _finite(ext.residual), "warning": ext.warning,
            "ps": [float(x) for x in ext.ps]},
        "bounds": _bounds_json(bounds),
        "checks": checks.items,
        "all_checks_passed": checks.ok,
        "termination": trace.termination,
        "solver_failed": trace.failed,
        "unconverged_steps": [r.p for r in trace.results if not r.converged],
        "measures_omitted": omitted,
        "seed": trace.seed,
        "artifacts": {"trace": "trace.csv", "checkpoint": "checkpoint.npz",
                      "measures": [f"measures_p{p_tag(r.p)}.csv" for r in trace.results
                                   if r.p not in {o["p"] for o in omitted}]},
    }
    if "json" in cfg.output.formats:
        write_json(os.path.join(out, "report.json"), report)
    # timings live apart from the report so that reports are reproducible bit for bit
    write_json(os.path.join(out, "timings.json"),
               {"solve_seconds": t_solve, "total_seconds": time.perf_counter() - t_start,
                "per_step_inner_iterations": [r.inner_iterations for r in trace.results]})

    for c in checks.items:
        if not c["ok"]:
            print(f"FAIL {c['name']} p={c['p']} value={c['value']} limit={c['limit']} {c['note']}",
                  file=sys.stderr)
    if trace.failed:
        print(f"solver failure: {trace.termination}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK if checks.ok else EXIT_INVARIANT


def _bounds_json(b: BoundsReport) -> dict:
    d = b.to_dict()
    d["ingredients"] = {k: (v if not isinstance(v, float) else _finite(v))
                        for k, v in d["ingredients"].items()}
    return d


# -- verify ---------------------------------------------------------------

def verify(report_path: str) -> int:
    run_dir = os.path.dirname(os.path.abspath(report_path))
    if not os.path.exists(report_path):
        print("missing artifact: report", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(report_path, encoding="utf-8") as fh:
            report = json.load(fh)
        cfg = RunConfig.model_validate(report["config"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"unreadable report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.config_hash() != report.get("config_hash"):
        print("FAIL config_hash: report config does not match its hash")
        return EXIT_INVARIANT

    missing = []
    trace_path = os.path.join(run_dir, "trace.csv")
    ckpt_path = os.path.join(run_dir, "checkpoint.npz")
    if not os.path.exists(trace_path):
        missing.append("trace")
    if not os.path.exists(ckpt_path):
        missing.append("checkpoint")
    for name in report.get("artifacts", {}).get("measures", []):
        if not os.path.exists(os.path.join(run_dir, name)):
            missing.append("measures")
            break
    if missing:
        for m in missing:
            print(f"missing artifact: {m}")
        return EXIT_CONFIG

    f, g = cfg.density_f(), cfg.density_g()
    disc = cfg.discretization()
    N, n = cfg.N, disc.dim
    try:
        ck = load_checkpoint(ckpt_path)
    except CheckpointError as exc:
        print(f"unreadable checkpoint: {exc}")
        return EXIT_CONFIG
    fields = {float(p): v for p, v in zip(ck.scalars["p"], ck.fields)}
    _, rows = read_csv(trace_path)
    tests = bump_basis(disc, cfg.test_fields, N)
    checks = _Checks()
    omitted = {o["p"] for o in report.get("measures_omitted", [])}
    for r in rows:
        p = float(r["p"])
        lam, L, el = float(r["Lambda_p"]), float(r["L_p"]), float(r["el_residual"])
        lo, _, hi, ok = sandwich_values(f, g, p, L, lam, 10 * el)
        checks.add("multiplier_sandwich", ok, p, lam, hi, f"lower {lo!r}")
        if p in omitted:
            continue
        M, nu = read_measures(os.path.join(run_dir, f"measures_p{p_tag(p)}.csv"), n, N, p)
        nu_mass = nu.total_variation
        checks.add("nu_mass", nu_mass <= 1 + NU_TOL, p, nu_mass, 1 + NU_TOL)
        bound = mass_bound_M(f, g, p, lam)
        checks.add("M_mass", M.total_variation <= bound * (1 + 10 * el), p, M.total_variation, bound)
        if p not in fields:
            checks.add("checkpoint_field", False, p, note="no stored field for this p")
            continue
        res = PRunResult(p=p, u=GridField(disc, fields[p]), multiplier=float("nan"), L_p=L,
                         log_lambda_p=p * math.log(lam), constraint_residual=0.0, el_residual=el)
        pr = pairing_residual(M, nu, f, g, res, tests)
        limit = max(1e-8, 10 * el)
        checks.add("pairing_residual", pr <= limit, p, pr, limit)
    if rows:
        b = report["bounds"]
        upper = b["upper"] if isinstance(b["upper"], (int, float)) else None
        br = BoundsReport(float(b["lower"]), upper, b.get("upper_reason", ""))
        ext = report.get("extrapolation") or {}
        verdict = sandwich_check(br, float(rows[-1]["Lambda_p"]), ext.get("Lambda_inf"),
                                 slack=LOWER_SLACK)
        checks.add("bounds_sandwich", verdict.ok, note="; ".join(verdict.messages))
    for c in checks.items:
        tag = "PASS" if c["ok"] else "FAIL"
        where = "" if c["p"] is None else f" p={c['p']:g}"
        print(f"{tag} {c['name']}{where} {c['note']}".rstrip())
    return EXIT_OK if checks.ok else EXIT_INVARIANT


# -- export-plots ---------------------------------------------------------

def export_plots(run_dir: str) -> int:
    report_path = os.path.join(run_dir, "report.json")
    trace_path = os.path.join(run_dir, "trace.csv")
    for path, name in ((report_path, "report"), (trace_path, "trace")):
        if not os.path.exists(path):
            print(f"missing artifact: {name}", file=sys.stderr)
            return EXIT_CONFIG
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    cfg = RunConfig.model_validate(report["config"])
    dim, N = cfg.dim, cfg.N
    lower = report["bounds"]["lower"]
    upper = report["bounds"]["upper"]
    upper = upper if isinstance(upper, (int, float)) else ""
    _, rows = read_csv(trace_path)
    out = os.path.join(run_dir, "plots")
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "lambda_vs_p.csv"), ["p", "Lambda_p", "L_p", "lower", "upper"],
              ([float(r["p"]), float(r["Lambda_p"]), float(r["L_p"]), lower, upper] for r in rows))
    written, omitted = ["lambda_vs_p.csv"], []
    for r in rows:
        p = float(r["p"])
        src = os.path.join(run_dir, f"measures_p{p_tag(p)}.csv")
        if not os.path.exists(src):
            omitted.append({"p": p, "reason": "no measures for this step"})
            continue
        header, mrows = read_csv(src)
        cols = ["x", "y"][:dim] + ["g_density", "nu_weight", "M_norm"]
        name = f"nodes_p{p_tag(p)}.csv"
        write_csv(os.path.join(out, name), cols, ([float(m[c]) for c in cols] for m in mrows))
        written.append(name)
    write_json(os.path.join(out, "manifest.json"), {"files": written, "omitted": omitted,
                                                   "dim": dim, "N": N})
    print(f"wrote {len(written)} files to {out}")
    for o in omitted:
        print(f"omitted p={o['p']:g}: {o['reason']}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="linfeig", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="solve the continuation described by a config file")
    r.add_argument("config")
    r.add_argument("--resume", action="store_true", help="continue from the run's checkpoint")
    r.add_argument("--output", help="output directory (overrides output.directory)")
    v = sub.add_parser("verify", help="re-check invariants from stored artifacts")
    v.add_argument("report")
    e = sub.add_parser("export-plots", help="write plot-ready data files")
    e.add_argument("run_dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return run(args.config, args.resume, args.output)
    if args.command == "verify":
        return verify(args.report)
    return export_plots(args.run_dir)


if __name__ == "__main__":
    sys.exit(main())
