import configparser
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from metriplectic_fem.diagnostics import read_series
from metriplectic_fem.integrators import SchemeId
from metriplectic_fem.simulation import (ConfigError, RunConfig, build_problem, dump_matrix, list_presets,
                                         load_config, load_preset, parse_config, parse_number, preset_path,
                                         run_convergence_study, run_to_directory, simulate)

ADVDIFF = """
[run]
model = advdiff
scheme = {scheme}
[mesh]
n_cells = 64
domain_length = 2*pi
[time]
end = 0.5
n_steps = 20
[parameters]
velocity = 1
nu = 0.05
[initial]
name = plane-wave
"""


def small_advdiff(scheme="midpoint") -> RunConfig:
    return parse_config(ADVDIFF.format(scheme=scheme))


# --- numbers and parsing ---------------------------------------------------


@pytest.mark.parametrize("text, value", [("1e-2", 1e-2), ("20*pi", 20 * math.pi), ("1/4", 0.25),
                                         ("-2 ** 3", -8.0), ("(1 + 2) * 3", 9.0), ("pi", math.pi)])
def test_parse_number(text, value):
    assert parse_number(text) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["", "abc", "__import__('os')", "1 +", "[1]", "2 // 3", "True"])
def test_parse_number_rejects(text):
    with pytest.raises(ValueError):
        parse_number(text)


def test_parse_advdiff_config():
    cfg = small_advdiff("avf")
    assert cfg.model == "advdiff" and cfg.scheme is SchemeId.AVF
    assert cfg.domain_length == pytest.approx(2 * math.pi)
    assert cfg.time_grid.dt == pytest.approx(0.025)
    assert cfg.resolution == 64
    assert cfg.with_resolution(128).n_cells == 128


@pytest.mark.parametrize("text, fragment", [
    ("", "empty"),
    ("[run]\nscheme = midpoint\n", "model is required"),
    ("[run]\nmodel = heat\n", "unknown model"),
    ("[bogus]\nx = 1\n[run]\nmodel = kdv\n", "unknown section"),
    ("[run]\nmodel = kdv\ncolour = red\n", "unknown key"),
    ("[run]\nmodel = kdv\n[mesh]\nn_cells = 64\ndomain_length = 1\n[initial]\nname = walsh\n", "not available"),
    ("[run]\nmodel = kdv\n[initial]\nname = soliton\n", "n_cells"),
    ("[run]\nmodel = kdv\nscheme = euler\n", "scheme"),
    ("[run]\nmodel = kdv\n[mesh]\nn_cells = 6.5\n", "integer"),
    ("[run]\nmodel = kdv\n[mesh]\nn_cells = lots\n", "n_cells"),
    ("not an ini file", "config"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


@pytest.mark.parametrize("patch, fragment", [
    ("n_steps = 20", "n_steps = 0"),
    ("nu = 0.05", "nu = -1"),
    ("end = 0.5", "end = 0"),
])
def test_config_value_errors(patch, fragment):
    with pytest.raises(ConfigError):
        parse_config(ADVDIFF.format(scheme="midpoint").replace(patch, fragment))


def test_config_error_names_source(tmp_path):
    path = tmp_path / "broken.ini"
    path.write_text("[run]\nmodel = nope\n")
    with pytest.raises(ConfigError, match="broken.ini"):
        load_config(path)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")


def test_walsh_lambda_is_fixed():
    text = load_preset_text("ns-torus-walsh").replace("lambda = 25", "lambda = 9")
    with pytest.raises(ConfigError, match="lambda"):
        parse_config(text)


def test_linearisation_validated():
    with pytest.raises(ConfigError, match="linearisation"):
        parse_config(ADVDIFF.format(scheme="midpoint") + "[solver]\nlinearisation = newton\n")


def test_custom_file_requires_path():
    with pytest.raises(ConfigError, match="path"):
        parse_config(ADVDIFF.format(scheme="midpoint").replace("plane-wave", "custom-file"))


# --- presets ---------------------------------------------------------------


def load_preset_text(name):
    return preset_path(name).read_text()


EXPECTED_PRESETS = {"advdiff", "kdv-soliton-conservative", "kdv-soliton-dissipative", "ns-sphere-harmonic",
                    "ns-sphere-vortices", "ns-torus-walsh", "ns-torus-walsh-inviscid", "ns-torus-walsh-nu1e-4"}


def test_preset_catalogue():
    assert set(list_presets()) == EXPECTED_PRESETS
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_path("nope")


@pytest.mark.parametrize("name", sorted(EXPECTED_PRESETS))
def test_presets_are_explicit(name):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(load_preset_text(name))
    for section, key in [("run", "model"), ("run", "scheme"), ("run", "seed"), ("time", "start"),
                         ("time", "end"), ("time", "n_steps"), ("parameters", "nu"), ("initial", "name"),
                         ("solver", "tolerance"), ("solver", "max_iterations")]:
        assert cp.has_option(section, key), (section, key)
    model = cp.get("run", "model")
    if model == "kdv":
        assert all(cp.has_option("parameters", k) for k in ("alpha", "eta"))
        assert all(cp.has_option("mesh", k) for k in ("n_cells", "domain_length"))
    if model == "ns-torus":
        assert all(cp.has_option("mesh", k) for k in ("nx", "ny", "lx", "ly"))
        assert cp.has_option("parameters", "lambda")
    if model == "ns-sphere":
        assert cp.has_option("mesh", "subdivisions")
    load_preset(name)


def test_kdv_preset_values():
    cfg = load_preset("kdv-soliton-conservative")
    assert (cfg.n_cells, cfg.n_steps, cfg.T, cfg.alpha, cfg.eta, cfg.nu) == (512, 800, 15.0, 6.0, 1.0, 0.0)
    assert cfg.domain_length == pytest.approx(20 * math.pi)
    assert load_preset("kdv-soliton-dissipative").nu == 0.25


def test_walsh_preset_values():
    viscosities = {name: load_preset(name).nu for name in
                   ("ns-torus-walsh", "ns-torus-walsh-nu1e-4", "ns-torus-walsh-inviscid")}
    assert viscosities == {"ns-torus-walsh": 1e-2, "ns-torus-walsh-nu1e-4": 1e-4, "ns-torus-walsh-inviscid": 0.0}
    cfg = load_preset("ns-torus-walsh")
    assert (cfg.nx, cfg.ny, cfg.n_steps, cfg.T) == (128, 128, 200, 1.0)


def test_vortex_preset_values():
    cfg = load_preset("ns-sphere-vortices")
    assert cfg.vortices.n_vortices == 512 and cfg.vortices.intensity == 400.0
    assert cfg.nu == 1e-2 and cfg.linearisation == "advective"


# --- problems and runs -----------------------------------------------------


def test_build_problem_each_model():
    kdv = build_problem(replace(load_preset("kdv-soliton-conservative"), n_cells=64))
    assert kdv.exact is not None and kdv.a0.shape == (64,)
    assert build_problem(replace(load_preset("kdv-soliton-dissipative"), n_cells=64)).exact is None
    torus = build_problem(replace(load_preset("ns-torus-walsh"), nx=8, ny=8))
    assert torus.a0.shape == (64,) and torus.exact is not None
    sphere = build_problem(replace(load_preset("ns-sphere-harmonic"), subdivisions=1))
    assert sphere.a0.shape == (42,)
    vort = build_problem(replace(load_preset("ns-sphere-vortices"), subdivisions=2))
    assert vort.exact is None and abs(np.sum(vort.system.mass @ vort.a0)) <= 1e-10


def test_custom_file_initial_condition(tmp_path):
    path = tmp_path / "ic.txt"
    np.savetxt(path, np.cos(np.arange(64)))
    cfg = replace(small_advdiff(), ic="custom-file", ic_path=str(path))
    problem = build_problem(cfg)
    np.testing.assert_array_equal(problem.a0, np.cos(np.arange(64)))
    assert problem.exact is None
    np.savetxt(path, np.ones(5))
    with pytest.raises(ConfigError, match="expected 64"):
        build_problem(cfg)


def test_simulate_advdiff_records():
    result = simulate(small_advdiff())
    assert len(result.records) == 21
    assert [r.step for r in result.records] == list(range(21))
    assert result.records[0].entropy_residual is None
    assert result.max_error < 5e-3
    summary = result.summary()
    assert summary["mass_drift_max"] <= 1e-13
    assert summary["n_dofs"] == 64 and summary["scheme"] == "midpoint"


def test_simulate_ns_records_invariants():
    cfg = replace(load_preset("ns-torus-walsh"), nx=8, ny=8, n_steps=4, T=0.02)
    result = simulate(cfg)
    last = result.records[-1]
    assert last.enstrophy > 0 and last.palinstrophy > 0 and last.hamiltonian > 0
    assert last.enstrophy == pytest.approx(-last.entropy)
    flags = result.summary()["monotone_non_increasing"]
    assert all(flags.values())


def test_simulate_structural_states():
    result = simulate(small_advdiff(), structural_states=2)
    assert all(result.structural["passed"].values())


def test_run_to_directory_outputs(tmp_path):
    result = run_to_directory(small_advdiff(), tmp_path / "out", structural_states=1)
    files = {p.name for p in (tmp_path / "out").iterdir()}
    assert files == {"series.csv", "summary.json", "final_state.txt"}
    assert read_series(tmp_path / "out" / "series.csv") == result.records
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["structural"]["passed"]["j_skew"] is True
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "out" / "final_state.txt"), result.final_state)


def test_runs_are_byte_identical(tmp_path):
    base = load_preset("ns-sphere-vortices")
    cfg = replace(base, subdivisions=2, n_steps=3, T=0.03, vortices=replace(base.vortices, n_vortices=32))
    run_to_directory(cfg, tmp_path / "a", structural_states=0)
    run_to_directory(cfg, tmp_path / "b", structural_states=0)
    for name in ("series.csv", "summary.json", "final_state.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_convergence_study_advdiff():
    table = run_convergence_study(small_advdiff(), [32, 64, 128], dt_rule="proportional")
    assert table.n_dofs == [32, 64, 128] and table.dim == 1
    assert all(r > 0.9 for r in table.rates_h[1:])


def test_convergence_study_single_resolution():
    table = run_convergence_study(small_advdiff(), [32])
    assert len(table.rows()) == 1 and table.rows()[0][2] is None


def test_convergence_study_threads_match_serial():
    serial = run_convergence_study(small_advdiff(), [16, 32])
    threaded = run_convergence_study(small_advdiff(), [16, 32], workers=2)
    assert serial.errors == threaded.errors


@pytest.mark.parametrize("kwargs", [dict(resolutions=[]), dict(resolutions=[64, 32]),
                                    dict(resolutions=[32], dt_rule="cfl")])
def test_convergence_study_validation(kwargs):
    with pytest.raises(ValueError):
        run_convergence_study(small_advdiff(), **kwargs)


def test_convergence_study_needs_reference():
    base = load_preset("ns-sphere-vortices")
    cfg = replace(base, subdivisions=1, n_steps=1, T=0.01, vortices=replace(base.vortices, n_vortices=8))
    with pytest.raises(ValueError, match="reference"):
        run_convergence_study(cfg, [1])


@pytest.mark.parametrize("name", ["mass", "stiffness", "advection", "poisson"])
def test_dump_matrix(tmp_path, name):
    problem = build_problem(small_advdiff())
    dump_matrix(problem, name, tmp_path / "m.txt")
    rows = np.loadtxt(tmp_path / "m.txt", ndmin=2)
    assert rows.shape[1] == 3 and rows[:, :2].max() < 64


def test_dump_matrix_errors(tmp_path):
    torus = build_problem(replace(load_preset("ns-torus-walsh"), nx=4, ny=4))
    with pytest.raises(ConfigError):
        dump_matrix(torus, "advection", tmp_path / "m.txt")
    with pytest.raises(ConfigError):
        dump_matrix(torus, "curl", tmp_path / "m.txt")
