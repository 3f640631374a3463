"""Configuration-driven runs: model construction, time stepping and
diagnostics for the KdV, vorticity and advection-diffusion experiments.

A run is described by an INI file::

    [run]        model, scheme, seed
    [mesh]       n_cells + domain_length | nx, ny, lx, ly | subdivisions
    [time]       start, end, n_steps
    [parameters] alpha, eta, nu, velocity, wave_number, lambda
    [initial]    name (+ name-specific keys)
    [solver]     tolerance, max_iterations, linearisation
    [output]     series, summary, final_state

Numeric values accept ``pi`` and the operators ``+ - * / **``.
"""

from __future__ import annotations

import ast
import configparser
import logging
import math
import operator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import diagnostics as dg
from .assembly import P1Space, assemble_advection_1d, assemble_mass, assemble_stiffness
from .core import MetriplecticSystem, evaluate_report, structural_report
from .integrators import GenericStepper, KdvStepper, NsStepper, SchemeId, TimeGrid
from .linalg import FixedPointConfig, write_coo
from .mesh import build_icosphere, build_periodic_interval, build_torus_mesh
from .models import (WALSH_LAMBDA, KdvParams, NsParams, PointVortexConfig, advection_diffusion_system,
                     cartesian_to_spherical, kdv_operators, kdv_system, ns_operators, ns_system,
                     plane_wave_exact, point_vortex_ic, soliton_exact, sphere_harmonic_exact,
                     walsh_exact)

log = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"

MODELS = ("advdiff", "kdv", "ns-torus", "ns-sphere")
INITIAL_CONDITIONS = {
    "advdiff": ("plane-wave", "custom-file"),
    "kdv": ("soliton", "custom-file"),
    "ns-torus": ("walsh", "custom-file"),
    "ns-sphere": ("sphere-harmonic", "point-vortices", "custom-file"),
}

_SCHEMA = {
    "run": {"model", "scheme", "seed"},
    "mesh": {"n_cells", "domain_length", "nx", "ny", "lx", "ly", "subdivisions"},
    "time": {"start", "end", "n_steps"},
    "parameters": {"alpha", "eta", "nu", "velocity", "wave_number", "lambda"},
    "initial": {"name", "path", "n_vortices", "intensity", "seed", "regularisation", "regularisation_width"},
    "solver": {"tolerance", "max_iterations", "linearisation"},
    "output": {"series", "summary", "final_state"},
}


class ConfigError(ValueError):
    pass


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def parse_number(text: str) -> float:
    """Evaluate a numeric literal or a small arithmetic expression in ``pi``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and type(node.value) in (int, float):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        value = ev(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ZeroDivisionError) as exc:
        raise ValueError(f"cannot parse number {text!r}: {exc}") from None
    if not math.isfinite(value):
        raise ValueError(f"number {text!r} is not finite")
    return value


@dataclass(frozen=True)
class RunConfig:
    model: str
    scheme: SchemeId = SchemeId.MIDPOINT
    seed: int = 0
    # mesh
    n_cells: int | None = None
    domain_length: float | None = None
    nx: int | None = None
    ny: int | None = None
    lx: float = 2.0 * math.pi
    ly: float = 2.0 * math.pi
    subdivisions: int | None = None
    # time
    t0: float = 0.0
    T: float = 1.0
    n_steps: int = 1
    # parameters
    alpha: float = 6.0
    eta: float = 1.0
    nu: float = 0.0
    velocity: float = 1.0
    wave_number: float = 1.0
    walsh_lambda: float = WALSH_LAMBDA
    # initial condition
    ic: str = ""
    ic_path: str | None = None
    vortices: PointVortexConfig = field(default_factory=PointVortexConfig)
    # solver
    fp_tolerance: float = 1e-12
    fp_max_iterations: int = 100
    linearisation: str = "explicit"
    # output
    series_name: str = "series.csv"
    summary_name: str = "summary.json"
    final_state_name: str | None = "final_state.txt"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"[run] model: unknown model {self.model!r}; expected one of {MODELS}")
        if self.ic not in INITIAL_CONDITIONS[self.model]:
            raise ConfigError(f"[initial] name: {self.ic!r} is not available for model {self.model!r}; "
                              f"expected one of {INITIAL_CONDITIONS[self.model]}")
        if self.ic == "custom-file" and not self.ic_path:
            raise ConfigError("[initial] path: required for name = custom-file")
        if self.model in ("advdiff", "kdv"):
            if self.n_cells is None or self.domain_length is None:
                raise ConfigError("[mesh] n_cells and domain_length are required for 1D models")
        elif self.model == "ns-torus":
            if self.nx is None or self.ny is None:
                raise ConfigError("[mesh] nx and ny are required for ns-torus")
        elif self.subdivisions is None:
            raise ConfigError("[mesh] subdivisions is required for ns-sphere")
        if self.n_steps < 1:
            raise ConfigError("[time] n_steps: must be >= 1")
        if not self.T > self.t0:
            raise ConfigError("[time] end: must exceed start")
        if not self.fp_tolerance > 0:
            raise ConfigError("[solver] tolerance: must be positive")
        if self.fp_max_iterations < 1:
            raise ConfigError("[solver] max_iterations: must be >= 1")
        if self.linearisation not in NsStepper.LINEARISATIONS:
            raise ConfigError(f"[solver] linearisation: expected one of {NsStepper.LINEARISATIONS}")
        if self.nu < 0:
            raise ConfigError("[parameters] nu: must be non-negative")
        if self.model == "kdv" and not (self.alpha > 0 and self.eta > 0):
            raise ConfigError("[parameters] alpha, eta: must be positive")
        if self.ic == "walsh" and self.walsh_lambda != WALSH_LAMBDA:
            raise ConfigError(f"[parameters] lambda: the Walsh flow has lambda = {WALSH_LAMBDA:g}")

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.T, self.n_steps)

    @property
    def fixed_point(self) -> FixedPointConfig:
        return FixedPointConfig(self.fp_tolerance, self.fp_max_iterations)

    @property
    def resolution(self) -> int:
        """The refinement parameter varied by convergence studies."""
        if self.model in ("advdiff", "kdv"):
            return self.n_cells
        if self.model == "ns-torus":
            return self.nx
        return self.subdivisions

    def with_resolution(self, n: int) -> "RunConfig":
        if self.model in ("advdiff", "kdv"):
            return replace(self, n_cells=n)
        if self.model == "ns-torus":
            return replace(self, nx=n, ny=n)
        return replace(self, subdivisions=n)


def _get(cp: configparser.ConfigParser, section: str, key: str, kind: Callable, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if kind is int:
            value = parse_number(raw)
            if value != int(value):
                raise ValueError(f"expected an integer, got {raw!r}")
            return int(value)
        if kind is float:
            return parse_number(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not cp.sections():
        raise ConfigError(f"{source}: empty configuration")
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        unknown = set(cp.options(section)) - _SCHEMA[section]
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    if not cp.has_option("run", "model"):
        raise ConfigError(f"{source}: [run] model is required")

    try:
        scheme = SchemeId.parse(_get(cp, "run", "scheme", str, "midpoint"))
    except ValueError as exc:
        raise ConfigError(f"{source}: [run] scheme: {exc}") from None
    seed = _get(cp, "run", "seed", int, 0)
    width = _get(cp, "initial", "regularisation_width", float)
    try:
        vortices = PointVortexConfig(
            n_vortices=_get(cp, "initial", "n_vortices", int, 512),
            intensity=_get(cp, "initial", "intensity", float, 400.0),
            seed=_get(cp, "initial", "seed", int, seed),
            regularisation=_get(cp, "initial", "regularisation", str, "gaussian"),
            regularisation_width=width,
        )
        cfg = RunConfig(
            model=_get(cp, "run", "model", str),
            scheme=scheme,
            seed=seed,
            n_cells=_get(cp, "mesh", "n_cells", int),
            domain_length=_get(cp, "mesh", "domain_length", float),
            nx=_get(cp, "mesh", "nx", int),
            ny=_get(cp, "mesh", "ny", int),
            lx=_get(cp, "mesh", "lx", float, 2.0 * math.pi),
            ly=_get(cp, "mesh", "ly", float, 2.0 * math.pi),
            subdivisions=_get(cp, "mesh", "subdivisions", int),
            t0=_get(cp, "time", "start", float, 0.0),
            T=_get(cp, "time", "end", float, 1.0),
            n_steps=_get(cp, "time", "n_steps", int, 1),
            alpha=_get(cp, "parameters", "alpha", float, 6.0),
            eta=_get(cp, "parameters", "eta", float, 1.0),
            nu=_get(cp, "parameters", "nu", float, 0.0),
            velocity=_get(cp, "parameters", "velocity", float, 1.0),
            wave_number=_get(cp, "parameters", "wave_number", float, 1.0),
            walsh_lambda=_get(cp, "parameters", "lambda", float, WALSH_LAMBDA),
            ic=_get(cp, "initial", "name", str, ""),
            ic_path=_get(cp, "initial", "path", str),
            vortices=vortices,
            fp_tolerance=_get(cp, "solver", "tolerance", float, 1e-12),
            fp_max_iterations=_get(cp, "solver", "max_iterations", int, 100),
            linearisation=_get(cp, "solver", "linearisation", str, "explicit"),
            series_name=_get(cp, "output", "series", str, "series.csv"),
            summary_name=_get(cp, "output", "summary", str, "summary.json"),
            final_state_name=_get(cp, "output", "final_state", str, "final_state.txt"),
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.ini"))


def preset_path(name: str) -> Path:
    path = PRESET_DIR / f"{name}.ini"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return path


def load_preset(name: str) -> RunConfig:
    return load_config(preset_path(name))


# --------------------------------------------------------------------------
# model construction


@dataclass
class Problem:
    """Everything a run needs: space, operators, system, IC and reference."""

    config: RunConfig
    space: P1Space
    system: MetriplecticSystem
    ops: object
    a0: np.ndarray
    exact: Callable[[np.ndarray, float], np.ndarray] | None


def build_space(cfg: RunConfig) -> P1Space:
    if cfg.model in ("advdiff", "kdv"):
        return P1Space(build_periodic_interval(cfg.domain_length, cfg.n_cells))
    if cfg.model == "ns-torus":
        return P1Space(build_torus_mesh(cfg.lx, cfg.ly, cfg.nx, cfg.ny))
    return P1Space(build_icosphere(cfg.subdivisions))


def _sphere_vorticity(nu: float):
    def exact(points, t):
        theta, phi = cartesian_to_spherical(points)
        return sphere_harmonic_exact(theta, phi, t, nu)[1]
    return exact


def build_problem(cfg: RunConfig) -> Problem:
    space = build_space(cfg)
    exact = None
    if cfg.model == "kdv":
        ops = kdv_operators(space)
        system = kdv_system(KdvParams(cfg.alpha, cfg.eta, cfg.nu, cfg.domain_length), space, ops)
        if cfg.alpha == 6.0 and cfg.eta == 1.0 and cfg.nu == 0.0:
            exact = soliton_exact
        a0 = space.interpolate(lambda x: soliton_exact(x, cfg.t0)) if cfg.ic == "soliton" else None
    elif cfg.model == "advdiff":
        ops = None
        system = advection_diffusion_system(cfg.velocity, cfg.nu, space)
        v, nu, k = cfg.velocity, cfg.nu, cfg.wave_number
        exact = lambda x, t: plane_wave_exact(x, t, v, nu, k)  # noqa: E731
        a0 = space.interpolate(lambda x: exact(x, cfg.t0)) if cfg.ic == "plane-wave" else None
    else:
        ops = ns_operators(space)
        system = ns_system(NsParams(cfg.nu, space.geometry), space, ops)
        if cfg.ic == "walsh":
            nu = cfg.nu
            exact = lambda p, t: walsh_exact(p[..., 0], p[..., 1], t, nu)[1]  # noqa: E731
            a0 = space.interpolate(lambda p: exact(p, cfg.t0))
        elif cfg.ic == "sphere-harmonic":
            exact = _sphere_vorticity(cfg.nu)
            a0 = space.interpolate(lambda p: exact(p, cfg.t0))
        elif cfg.ic == "point-vortices":
            a0 = point_vortex_ic(cfg.vortices, space)
        else:
            a0 = None
    if cfg.ic == "custom-file":
        a0 = np.loadtxt(cfg.ic_path, dtype=float, ndmin=1)
        if a0.shape != (space.n_dofs,):
            raise ConfigError(f"[initial] path: expected {space.n_dofs} values, found {a0.size}")
        exact = None
    if not np.all(np.isfinite(a0)):
        raise ConfigError("initial condition has non-finite entries")
    return Problem(cfg, space, system, ops, a0, exact)


# --------------------------------------------------------------------------
# stepping


class _Trajectory:
    """Uniform stepping interface over the three stepper families."""

    def __init__(self, problem: Problem):
        cfg = problem.config
        dt = cfg.time_grid.dt
        self.problem = problem
        self.b = None
        if cfg.model == "kdv":
            params = KdvParams(cfg.alpha, cfg.eta, cfg.nu, cfg.domain_length)
            self._kdv = KdvStepper(cfg.scheme, problem.ops, params, dt, cfg.fixed_point)
            self.kind = "kdv"
        elif cfg.model == "advdiff":
            self._gen = GenericStepper(problem.system, cfg.scheme, dt, cfg.fixed_point)
            self.kind = "generic"
        else:
            self._ns = NsStepper(cfg.scheme, problem.ops, cfg.nu, dt, cfg.fixed_point, cfg.linearisation)
            self.b = problem.ops.stream_coefficients(problem.a0)
            self.kind = "ns"

    def step(self, a: np.ndarray) -> tuple[np.ndarray, int]:
        if self.kind == "kdv":
            a1, _, its = self._kdv.step(a)
            return a1, its
        if self.kind == "generic":
            return self._gen.step(a)
        a1, self.b, its = self._ns.step(a, self.b)
        return a1, its


def _record(problem: Problem, step: int, t: float, a: np.ndarray, b, residual, its: int) -> dg.DiagnosticsRecord:
    cfg, system = problem.config, problem.system
    M = system.mass
    mass = float(np.sum(M @ a))
    entropy = -0.5 * float(a @ (M @ a))
    err = dg.rel_l2_error(a, problem.exact, problem.space, t) if problem.exact is not None else None
    if cfg.model.startswith("ns"):
        h, e, p = dg.ns_invariants(a, b, M, problem.ops.stiffness)
        return dg.DiagnosticsRecord(step, t, mass, h, entropy, e, p, residual, err, its)
    return dg.DiagnosticsRecord(step, t, mass, system.h_value(a), entropy, None, None, residual, err, its)


@dataclass
class RunResult:
    config: RunConfig
    records: list[dg.DiagnosticsRecord]
    final_state: np.ndarray
    problem: Problem
    structural: dict | None = None

    @property
    def max_error(self) -> float | None:
        errs = [r.rel_l2_error for r in self.records if r.rel_l2_error is not None]
        return max(errs) if errs else None

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def summary(self) -> dict:
        cfg = self.config
        first, last = self.records[0], self.records[-1]
        mass = self.series("mass")
        ham = self.series("hamiltonian")
        out = {
            "model": cfg.model,
            "scheme": cfg.scheme.value,
            "n_dofs": self.problem.space.n_dofs,
            "n_steps": cfg.n_steps,
            "dt": cfg.time_grid.dt,
            "nu": cfg.nu,
            "final": {c: getattr(last, c) for c in dg.SERIES_COLUMNS},
            "mass_drift_max": float(np.max(np.abs(mass - mass[0]))),
            "hamiltonian_rel_drift_max": float(np.max(np.abs(ham - ham[0])) / max(abs(ham[0]), np.finfo(float).tiny)),
            "entropy_residual_max_abs": float(np.nanmax(np.abs(self.series("entropy_residual")[1:]))),
            "fp_iterations_max": int(max(r.fp_iterations for r in self.records)),
            "rel_l2_error_max": self.max_error,
        }
        if cfg.model.startswith("ns"):
            ens = self.series("enstrophy")
            out["enstrophy_rel_drift_max"] = float(np.max(np.abs(ens - ens[0])) / max(ens[0], np.finfo(float).tiny))
            if cfg.nu > 0:
                out["monotone_non_increasing"] = {
                    "hamiltonian": dg.is_non_increasing(ham),
                    "enstrophy": dg.is_non_increasing(ens),
                    "palinstrophy": dg.is_non_increasing(self.series("palinstrophy")),
                }
        if self.structural is not None:
            out["structural"] = self.structural
        out["initial"] = {c: getattr(first, c) for c in dg.SERIES_COLUMNS}
        return out


def simulate(cfg: RunConfig, writer: dg.SeriesWriter | None = None,
             structural_states: int = 0) -> RunResult:
    """Integrate one trajectory and collect per-step diagnostics.

    With ``structural_states > 0`` the structural report of the model is
    evaluated on that many random states and attached to the result.
    """
    problem = build_problem(cfg)
    grid = cfg.time_grid
    M, K = problem.system.mass, _stiffness(problem)
    traj = _Trajectory(problem)
    a = problem.a0.copy()
    records = [_record(problem, 0, grid.t0, a, traj.b, None, 0)]
    if writer is not None:
        writer.write(records[0])
    for k in range(1, grid.n_steps + 1):
        a_new, its = traj.step(a)
        residual = dg.entropy_residual(a, a_new, grid.dt, cfg.nu, M, K)
        a = a_new
        rec = _record(problem, k, grid.time(k), a, traj.b, residual, its)
        records.append(rec)
        if writer is not None:
            writer.write(rec)
    structural = None
    if structural_states > 0:
        report = structural_report(problem.system, structural_states, cfg.seed, fd_coordinates=10)
        structural = {"report": report, "passed": evaluate_report(report)}
    return RunResult(cfg, records, a, problem, structural)


def _stiffness(problem: Problem):
    if problem.ops is not None:
        return problem.ops.stiffness
    return assemble_stiffness(problem.space)


def run_to_directory(cfg: RunConfig, out: str | Path, structural_states: int = 3) -> RunResult:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with dg.SeriesWriter(out / cfg.series_name) as writer:
        result = simulate(cfg, writer, structural_states)
    dg.write_summary(out / cfg.summary_name, result.summary())
    if cfg.final_state_name:
        np.savetxt(out / cfg.final_state_name, result.final_state, fmt="%.17g")
    return result


def structural_passed(result: RunResult) -> bool:
    return result.structural is None or all(result.structural["passed"].values())


# --------------------------------------------------------------------------
# convergence studies


DT_RULES = ("fixed", "proportional")


def run_convergence_study(cfg: RunConfig, resolutions: list[int], scheme: SchemeId | str | None = None,
                          dt_rule: str = "fixed", workers: int = 1) -> dg.ConvergenceTable:
    """One run per resolution; the error is the largest relative L2 error
    over the time grid.  ``dt_rule="proportional"`` scales ``n_steps`` with
    the linear resolution so that ``dt / h`` stays fixed."""
    if dt_rule not in DT_RULES:
        raise ValueError(f"unknown dt rule {dt_rule!r}; expected one of {DT_RULES}")
    if not resolutions:
        raise ValueError("at least one resolution is required")
    if list(resolutions) != sorted(set(resolutions)):
        raise ValueError("resolutions must be strictly increasing")
    if scheme is not None:
        cfg = replace(cfg, scheme=SchemeId.parse(scheme))
    base = resolutions[0]

    def config_for(n: int) -> RunConfig:
        c = cfg.with_resolution(n)
        if dt_rule == "proportional":
            factor = 2 ** (n - base) if cfg.model == "ns-sphere" else n / base
            c = replace(c, n_steps=max(1, int(round(cfg.n_steps * factor))))
        return c

    configs = [config_for(n) for n in resolutions]

    def one(c: RunConfig) -> tuple[int, float]:
        result = simulate(c)
        if result.max_error is None:
            raise ValueError(f"model {c.model!r} with initial condition {c.ic!r} has no reference solution")
        return result.problem.space.n_dofs, result.max_error

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, configs))
    else:
        rows = [one(c) for c in configs]
    table = dg.ConvergenceTable(dim=1 if cfg.model in ("advdiff", "kdv") else 2)
    for n, err in rows:
        table.add(n, err)
    return table


def dump_matrix(problem: Problem, name: str, path: str | Path) -> None:
    """Write one named operator (``mass``, ``stiffness``, ``advection``,
    ``poisson`` at the initial state) in coordinate format."""
    space = problem.space
    if name == "mass":
        matrix = assemble_mass(space)
    elif name == "stiffness":
        matrix = assemble_stiffness(space)
    elif name == "advection":
        if space.dim != 1:
            raise ConfigError("advection matrix exists only for 1D models")
        matrix = assemble_advection_1d(space)
    elif name == "poisson":
        matrix = problem.system.j_builder(problem.a0)
    else:
        raise ConfigError(f"unknown matrix {name!r}; expected mass, stiffness, advection or poisson")
    write_coo(path, matrix)
