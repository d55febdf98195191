"""Shared fixtures: small discretisations and once-per-session benchmark runs."""

import json
import os
import time
from dataclasses import dataclass
from importlib import resources

import numpy as np
import pytest

from linfeig.cli import main as cli_main
from linfeig.config import RunConfig, load_config
from linfeig.continuation import ContinuationTrace, load_checkpoint, scalar_test_fields
from linfeig.discretization import BCMode, Discretization
from linfeig.geometry import DomainSpec, build_grid

BENCHMARKS = ("hinged_1d", "clamped_1d", "gradient_1d", "disc_2d")


def benchmark_config_path(name: str) -> str:
    return str(resources.files("linfeig") / "benchmarks" / f"{name}.yaml")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def interval_disc():
    def make(nodes=41, bc="hinged", a=0.0, b=1.0):
        return Discretization(build_grid(DomainSpec.interval(a, b), nodes), BCMode(bc))
    return make


@pytest.fixture
def rect_disc():
    def make(nodes=11, bc="hinged"):
        return Discretization(build_grid(DomainSpec.rectangle(0, 1, 0, 1), nodes), BCMode(bc))
    return make


@dataclass
class BenchmarkRun:
    name: str
    config: RunConfig
    out: str
    exit_code: int
    seconds: float
    report: dict
    trace: ContinuationTrace
    tests: list


_RUNS: dict = {}


def run_benchmark(name: str, base: str) -> BenchmarkRun:
    """Run a shipped benchmark through the CLI once and rebuild its trace from disk.

    Runs are single-threaded so that the recorded wall time is comparable to
    the acceptance limits.
    """
    if name in _RUNS:
        return _RUNS[name]
    os.environ.setdefault("LINFEIG_NUM_THREADS", "1")
    cfg_path = benchmark_config_path(name)
    cfg = load_config(cfg_path)
    out = os.path.join(base, name)
    t0 = time.perf_counter()
    code = cli_main(["run", cfg_path, "--output", out])
    seconds = time.perf_counter() - t0
    with open(os.path.join(out, "report.json"), encoding="utf-8") as fh:
        report = json.load(fh)
    disc = cfg.discretization()
    tests = scalar_test_fields(disc, cfg.test_fields)
    trace = load_checkpoint(os.path.join(out, "checkpoint.npz")).trace(
        disc, cfg.density_f(), cfg.density_g(), tests)
    _RUNS[name] = BenchmarkRun(name, cfg, out, code, seconds, report, trace, tests)
    return _RUNS[name]


@pytest.fixture(scope="session")
def benchmark_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("benchmarks"))


@pytest.fixture(scope="session")
def benchmark(benchmark_dir):
    def get(name):
        return run_benchmark(name, benchmark_dir)
    return get


# -- acceptance verdicts ---------------------------------------------------

ACCEPTANCE: dict = {}


def record_acceptance(criterion: int, ok: bool, detail: str) -> bool:
    """Store one sub-check of an acceptance criterion; returns ``ok``."""
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        items = ACCEPTANCE[k]
        ok = all(o for o, _ in items)
        shown = [d for o, d in items if not o] or [d for _, d in items]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  "
                                    + "; ".join(shown))
