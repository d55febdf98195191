import csv
import json
import os
import shutil
import subprocess
import sys

import pytest

import linfeig.continuation as continuation_mod
from linfeig.cli import (EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, EXIT_SOLVER, lambda_string,
                         main, p_tag)
from linfeig.config import ConfigError, parse_config
from linfeig.psolver import SolverError

SMALL = """\
domain:
  kind: interval
  bounds: [0.0, 1.0]
bc: hinged
f:
  name: power
  params: {alpha: 2}
g:
  name: eta_power
  params: {gamma: 2}
grid:
  resolution: 61
schedule:
  p0: 4
  p_max: 32
seed: 0
"""

DISC = """\
domain: {kind: disc, radius: 1.0}
f: {name: power, params: {alpha: 2}}
g: {name: eta_power, params: {gamma: 2}}
grid: {resolution: 15}
schedule: {p0: 4, p_max: 16}
"""


def _write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("small")
    cfg = _write(base, SMALL)
    out = base / "run"
    code = main(["run", cfg, "--output", str(out)])
    return code, out, cfg


@pytest.fixture(scope="module")
def disc_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("disc")
    out = base / "run"
    code = main(["run", _write(base, DISC), "--output", str(out)])
    return code, out


def _copy(run_dir, tmp_path):
    dst = tmp_path / "copy"
    shutil.copytree(run_dir, dst)
    return dst


class TestParse:
    def test_valid(self):
        cfg = parse_config(SMALL)
        assert cfg.dim == 1 and cfg.grid.resolution == 61
        assert cfg.continuation_settings().p_max == 32

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"field 'grid.spacing' \(line 13\)"):
            parse_config(SMALL.replace("resolution: 61", "resolution: 61\n  spacing: 2"))

    def test_wrong_type_located(self):
        with pytest.raises(ConfigError, match=r"field 'grid.resolution' \(line 12\)"):
            parse_config(SMALL.replace("resolution: 61", "resolution: many"))

    def test_pmax_below_p0(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(SMALL.replace("p_max: 32", "p_max: 2"))
        assert "schedule.p_max" in str(exc.value) and "line 15" in str(exc.value)

    def test_pmax_below_default_p0(self):
        with pytest.raises(ConfigError, match="schedule.p_max"):
            parse_config(SMALL.replace("  p0: 4\n", "").replace("p_max: 32", "p_max: 3"))

    def test_unknown_density(self):
        with pytest.raises(ConfigError, match="unknown f density"):
            parse_config(SMALL.replace("name: power", "name: cubic"))

    def test_bad_density_params(self):
        with pytest.raises(ConfigError, match="f.params"):
            parse_config(SMALL.replace("{alpha: 2}", "{alpha: 2, beta: 1}"))

    def test_domain_shape(self):
        with pytest.raises(ConfigError, match="domain"):
            parse_config(SMALL.replace("bounds: [0.0, 1.0]", "radius: 1.0"))

    def test_malformed_yaml(self):
        with pytest.raises(ConfigError, match="malformed YAML"):
            parse_config("domain: [unclosed\n")

    def test_top_level_mapping(self):
        with pytest.raises(ConfigError, match="mapping"):
            parse_config("- 1\n- 2\n")


class TestHash:
    def test_key_order_invariant(self):
        lines = SMALL.splitlines(keepends=True)
        # move the seed line to the front and reorder the params mapping
        shuffled = "".join(lines[-1:] + lines[:-1])
        assert parse_config(shuffled).config_hash() == parse_config(SMALL).config_hash()

    def test_output_directory_not_hashed(self):
        a = parse_config(SMALL + "output: {directory: a}\n")
        b = parse_config(SMALL + "output: {directory: b}\n")
        assert a.config_hash() == b.config_hash()

    def test_seed_hashed(self):
        assert (parse_config(SMALL).config_hash()
                != parse_config(SMALL.replace("seed: 0", "seed: 1")).config_hash())


class TestHelpers:
    def test_lambda_string(self):
        assert lambda_string(2.0) == "1.0000000000e+2"
        assert lambda_string(1000.5).startswith("3.16227766")
        assert lambda_string(1000.5).endswith("e+1000")

    def test_p_tag(self):
        assert p_tag(4.0) == "4" and p_tag(2.5) == "2.5"


class TestRun:
    def test_exit_and_artifacts(self, small_run):
        code, out, _ = small_run
        assert code == EXIT_OK
        names = set(os.listdir(out))
        assert {"report.json", "trace.csv", "checkpoint.npz", "timings.json"} <= names
        assert {f"measures_p{p}.csv" for p in (4, 8, 16, 32)} <= names

    def test_trace_one_row_per_p(self, small_run):
        rows = _read_rows(small_run[1] / "trace.csv")
        assert [float(r["p"]) for r in rows] == [4, 8, 16, 32]

    def test_report_schema(self, small_run):
        rep = json.loads((small_run[1] / "report.json").read_text())
        assert rep["schema_version"] and rep["all_checks_passed"]
        assert rep["termination"] == "p_max reached" and not rep["solver_failed"]
        assert rep["bounds"]["lower"] == 0.25 and rep["bounds"]["upper"] == "unavailable"
        assert len(rep["steps"]) == 4
        step = rep["steps"][0]
        for key in ("p", "Lambda_p", "L_p", "log10_lambda_p", "lambda_p", "constraint_residual",
                    "el_residual", "nu_mass", "M_mass"):
            assert key in step

    def test_report_numbers_finite(self, small_run):
        def walk(x):
            if isinstance(x, float):
                assert x == x and abs(x) != float("inf")
            elif isinstance(x, dict):
                for v in x.values():
                    walk(v)
            elif isinstance(x, list):
                for v in x:
                    walk(v)
        walk(json.loads((small_run[1] / "report.json").read_text()))

    def test_malformed_config_no_artifacts(self, tmp_path, capsys):
        cfg = _write(tmp_path, "domain: [unclosed\n")
        out = tmp_path / "out"
        assert main(["run", cfg, "--output", str(out)]) == EXIT_CONFIG
        assert not out.exists()
        assert "malformed YAML" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG

    def test_solver_failure(self, tmp_path, monkeypatch):
        real = continuation_mod.solve_p

        def failing(f, g, u, p, *a, **k):
            if p >= 16:
                raise SolverError("injected")
            return real(f, g, u, p, *a, **k)

        monkeypatch.setattr(continuation_mod, "solve_p", failing)
        out = tmp_path / "out"
        assert main(["run", _write(tmp_path, SMALL), "--output", str(out)]) == EXIT_SOLVER
        rep = json.loads((out / "report.json").read_text())
        assert rep["solver_failed"] and "p=16" in rep["termination"]
        assert [s["p"] for s in rep["steps"]] == [4, 8]
        assert (out / "checkpoint.npz").exists()

    def test_resume_completed_run(self, small_run, tmp_path):
        _, out, cfg = small_run
        dst = _copy(out, tmp_path)
        before = (dst / "report.json").read_bytes()
        assert main(["run", cfg, "--output", str(dst), "--resume"]) == EXIT_OK
        assert (dst / "report.json").read_bytes() == before

    def test_resume_hash_mismatch(self, small_run, tmp_path):
        _, out, _ = small_run
        dst = _copy(out, tmp_path)
        other = _write(tmp_path, SMALL.replace("seed: 0", "seed: 5"), "other.yaml")
        assert main(["run", other, "--output", str(dst), "--resume"]) == EXIT_CONFIG

    def test_deterministic_report(self, small_run, tmp_path):
        _, out, cfg = small_run
        again = tmp_path / "again"
        assert main(["run", cfg, "--output", str(again)]) == EXIT_OK
        assert (again / "report.json").read_bytes() == (out / "report.json").read_bytes()
        assert (again / "trace.csv").read_bytes() == (out / "trace.csv").read_bytes()


class TestVerify:
    def test_fresh_artifacts_pass(self, small_run, capsys):
        assert main(["verify", str(small_run[1] / "report.json")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "FAIL" not in out and "PASS multiplier_sandwich" in out

    def test_lambda_edited_upward(self, small_run, tmp_path, capsys):
        dst = _copy(small_run[1], tmp_path)
        path = dst / "trace.csv"
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        col = header.index("Lambda_p")
        rows[1][col] = repr(float(rows[1][col]) * 1.1)
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows([header] + rows)
        assert main(["verify", str(dst / "report.json")]) == EXIT_INVARIANT
        assert "FAIL multiplier_sandwich p=8" in capsys.readouterr().out

    def test_deleted_measures(self, small_run, tmp_path, capsys):
        dst = _copy(small_run[1], tmp_path)
        os.remove(dst / "measures_p16.csv")
        assert main(["verify", str(dst / "report.json")]) == EXIT_CONFIG
        assert "missing artifact: measures" in capsys.readouterr().out

    def test_missing_report(self, tmp_path, capsys):
        assert main(["verify", str(tmp_path / "report.json")]) == EXIT_CONFIG
        assert "missing artifact: report" in capsys.readouterr().err

    def test_tampered_config(self, small_run, tmp_path):
        dst = _copy(small_run[1], tmp_path)
        rep = json.loads((dst / "report.json").read_text())
        rep["config"]["seed"] = 99
        (dst / "report.json").write_text(json.dumps(rep))
        assert main(["verify", str(dst / "report.json")]) == EXIT_INVARIANT

    def test_disc_run_verifies(self, disc_run):
        code, out = disc_run
        assert code == EXIT_OK
        assert main(["verify", str(out / "report.json")]) == EXIT_OK


class TestExportPlots:
    def test_lambda_vs_p(self, small_run, tmp_path):
        dst = _copy(small_run[1], tmp_path)
        assert main(["export-plots", str(dst)]) == EXIT_OK
        rows = _read_rows(dst / "plots" / "lambda_vs_p.csv")
        ps = [float(r["p"]) for r in rows]
        assert ps == sorted(ps) and len(set(ps)) == len(ps)
        assert all(float(r["lower"]) == 0.25 and r["upper"] == "" for r in rows)
        nodes = _read_rows(dst / "plots" / "nodes_p4.csv")
        assert list(nodes[0]) == ["x", "g_density", "nu_weight", "M_norm"]

    def test_missing_step_omitted(self, small_run, tmp_path):
        dst = _copy(small_run[1], tmp_path)
        os.remove(dst / "measures_p8.csv")
        assert main(["export-plots", str(dst)]) == EXIT_OK
        manifest = json.loads((dst / "plots" / "manifest.json").read_text())
        assert manifest["omitted"] == [{"p": 8.0, "reason": "no measures for this step"}]
        assert not (dst / "plots" / "nodes_p8.csv").exists()

    def test_two_d_coordinates(self, disc_run, tmp_path):
        dst = _copy(disc_run[1], tmp_path)
        assert main(["export-plots", str(dst)]) == EXIT_OK
        nodes = _read_rows(dst / "plots" / "nodes_p4.csv")
        assert list(nodes[0])[:2] == ["x", "y"]
        upper = _read_rows(dst / "plots" / "lambda_vs_p.csv")[0]["upper"]
        assert float(upper) > 0

    def test_missing_trace(self, tmp_path):
        assert main(["export-plots", str(tmp_path)]) == EXIT_CONFIG


class TestEntryPoint:
    def test_version(self, capsys):
        from linfeig import __version__
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_module_invocation(self, tmp_path):
        cfg = _write(tmp_path, "grid: {resolution: 3}\n")
        proc = subprocess.run([sys.executable, "-m", "linfeig.cli", "run", cfg],
                              capture_output=True, text=True, cwd=tmp_path)
        assert proc.returncode == EXIT_CONFIG
        assert "field 'domain'" in proc.stderr
