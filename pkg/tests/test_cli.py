import json
import subprocess
import sys

import numpy as np
import pytest

import metriplectic_fem.cli as cli
from metriplectic_fem.diagnostics import read_series
from metriplectic_fem.linalg import csr
from metriplectic_fem.mesh import read_mesh

CONFIG = """
[run]
model = advdiff
scheme = avf
[mesh]
n_cells = 32
domain_length = 2*pi
[time]
end = 0.2
n_steps = 10
[parameters]
nu = 0.05
[initial]
name = plane-wave
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    return str(path)


def test_run_writes_outputs(config, tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--config", config, "--out", str(out), "--strict",
                     "--dump-matrix", f"mass:{tmp_path / 'M.txt'}", "--dump-matrix", f"stiffness:{tmp_path / 'K.txt'}",
                     "--dump-mesh", str(tmp_path / "mesh.txt")])
    assert code == cli.EXIT_OK
    assert "advdiff [avf] N=32 steps=10" in capsys.readouterr().out
    assert len(read_series(out / "series.csv")) == 11
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scheme"] == "avf" and all(summary["structural"]["passed"].values())
    assert np.loadtxt(tmp_path / "M.txt").shape[1] == 3
    verts, faces = read_mesh(tmp_path / "mesh.txt")
    assert verts.shape == (32, 3)


def test_run_scheme_and_seed_overrides(config, tmp_path):
    assert cli.main(["run", "--config", config, "--out", str(tmp_path / "o"), "--scheme", "midpoint",
                     "--seed", "4", "--structural-states", "0"]) == cli.EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["scheme"] == "midpoint" and "structural" not in summary


def test_run_is_deterministic(config, tmp_path):
    for name in ("a", "b"):
        assert cli.main(["run", "--config", config, "--out", str(tmp_path / name)]) == cli.EXIT_OK
    assert (tmp_path / "a" / "series.csv").read_bytes() == (tmp_path / "b" / "series.csv").read_bytes()


@pytest.mark.parametrize("text", ["", "[run]\nmodel = warp-drive\n", "[run]\nmodel = kdv\nfoo = 1\n"])
def test_invalid_config_exits_without_outputs(tmp_path, text, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(path), "--out", str(out)]) == cli.EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    assert not out.exists()


def test_config_and_preset_are_exclusive(config, tmp_path):
    assert cli.main(["run", "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", config, "--preset", "advdiff", "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_bad_dump_matrix_spec(config, tmp_path):
    assert cli.main(["run", "--config", config, "--out", str(tmp_path / "o"),
                     "--dump-matrix", "mass"]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", config, "--out", str(tmp_path / "o"),
                     "--dump-matrix", f"curl:{tmp_path / 'x'}"]) == cli.EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path, capsys):
    path = tmp_path / "kdv.ini"
    path.write_text("""
[run]
model = kdv
[mesh]
n_cells = 64
domain_length = 20*pi
[time]
end = 1
n_steps = 2
[initial]
name = soliton
[solver]
tolerance = 1e-30
max_iterations = 2
""")
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_SOLVER
    assert "solver failure" in capsys.readouterr().err


def test_check_reports_json(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert cli.main(["check", "--preset", "advdiff", "--states", "3", "--out", str(out), "--strict"]) == cli.EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(out.read_text())
    assert all(printed["passed"].values())


def test_check_ns_torus(tmp_path, capsys):
    path = tmp_path / "ns.ini"
    path.write_text("""
[run]
model = ns-torus
[mesh]
nx = 5
ny = 5
[parameters]
nu = 1e-2
[initial]
name = walsh
""")
    assert cli.main(["check", "--config", str(path), "--states", "5", "--strict"]) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)["report"]
    assert report["null_poisson_on_grad_s"] <= 1e-11 and report["null_metric_on_grad_h"] <= 1e-11


def test_check_negative_control(monkeypatch, capsys):
    real = cli.build_problem

    def corrupted(cfg):
        problem = real(cfg)
        skew = problem.system.j_builder
        problem.system.j_builder = lambda a: csr(skew(a) + skew(a).T + abs(skew(a)))
        return problem

    monkeypatch.setattr(cli, "build_problem", corrupted)
    assert cli.main(["check", "--preset", "advdiff", "--states", "2", "--strict"]) == cli.EXIT_STRUCTURE
    assert json.loads(capsys.readouterr().out)["passed"]["j_skew"] is False
    assert cli.main(["check", "--preset", "advdiff", "--states", "2"]) == cli.EXIT_OK


def test_run_strict_structural_failure(monkeypatch, config, tmp_path, capsys):
    real = cli.run_to_directory

    def failing(cfg, out, structural_states):
        result = real(cfg, out, structural_states)
        result.structural["passed"]["g_sign"] = False
        return result

    monkeypatch.setattr(cli, "run_to_directory", failing)
    assert cli.main(["run", "--config", config, "--out", str(tmp_path / "o"), "--strict"]) == cli.EXIT_STRUCTURE
    assert "g_sign" in capsys.readouterr().err


def test_converge_writes_tables(config, tmp_path, capsys):
    out = tmp_path / "conv"
    assert cli.main(["converge", "--config", config, "--n", "16", "32", "64", "--dt-rule", "proportional",
                     "--workers", "2", "--out", str(out)]) == cli.EXIT_OK
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "n_dofs,error,rate_dofs,rate_h" and len(lines) == 4
    payload = json.loads((out / "convergence.json").read_text())
    assert payload["rows"][2]["rate_h"] > 1.8
    assert "rate(N)" in capsys.readouterr().out


def test_dump_mesh_command(tmp_path):
    out = tmp_path / "sphere.txt"
    assert cli.main(["dump-mesh", "--preset", "ns-sphere-harmonic", "--out", str(out)]) == cli.EXIT_OK
    assert out.read_text().splitlines()[0] == "10242 20480"


def test_unknown_preset_lists_available(tmp_path, capsys):
    assert cli.main(["dump-mesh", "--preset", "nope", "--out", str(tmp_path / "m")]) == cli.EXIT_CONFIG
    assert "kdv-soliton-conservative" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "metriplectic_fem", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("run", "check", "converge", "dump-mesh"):
        assert command in proc.stdout
