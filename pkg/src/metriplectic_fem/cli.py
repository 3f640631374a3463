"""Command-line entry point: ``run``, ``check``, ``converge``, ``dump-mesh``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import diagnostics as dg
from .core import evaluate_report, structural_report
from .integrators import SchemeId
from .linalg import FixedPointError, LinearSolveError
from .mesh import write_mesh
from .simulation import (DT_RULES, ConfigError, RunConfig, build_problem, dump_matrix, list_presets,
                         load_config, load_preset, run_convergence_study, run_to_directory,
                         structural_passed)

log = logging.getLogger("metriplectic_fem")

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2
EXIT_STRUCTURE = 3


def _config_from_args(args) -> RunConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("exactly one of --config or --preset is required")
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    if getattr(args, "scheme", None):
        cfg = replace(cfg, scheme=SchemeId.parse(args.scheme))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, vortices=replace(cfg.vortices, seed=args.seed))
    return cfg


def _matrix_specs(values: list[str]) -> list[tuple[str, str]]:
    out = []
    for v in values or []:
        name, sep, path = v.partition(":")
        if not sep or not name or not path:
            raise ConfigError(f"--dump-matrix expects name:path, got {v!r}")
        out.append((name, path))
    return out


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    specs = _matrix_specs(args.dump_matrix)
    out = Path(args.out)
    if specs or args.dump_mesh:
        problem = build_problem(cfg)
        for name, path in specs:
            dump_matrix(problem, name, path)
        if args.dump_mesh:
            write_mesh(args.dump_mesh, problem.space.mesh)
    result = run_to_directory(cfg, out, structural_states=args.structural_states)
    summary = result.summary()
    print(f"{cfg.model} [{cfg.scheme.value}] N={summary['n_dofs']} steps={cfg.n_steps}: "
          f"mass drift {summary['mass_drift_max']:.3e}, "
          f"H rel drift {summary['hamiltonian_rel_drift_max']:.3e}, "
          f"max fp iterations {summary['fp_iterations_max']} -> {out}")
    if args.strict and not structural_passed(result):
        failed = [k for k, v in result.structural["passed"].items() if not v]
        print(f"structural checks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_STRUCTURE
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = _config_from_args(args)
    problem = build_problem(cfg)
    report = structural_report(problem.system, args.states, cfg.seed, fd_coordinates=args.fd_coordinates)
    passed = evaluate_report(report)
    payload = json.dumps({"report": report, "passed": passed}, indent=2, sort_keys=True,
                         default=dg._json_default)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(payload + "\n")
    print(payload)
    if args.strict and not all(passed.values()):
        return EXIT_STRUCTURE
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = _config_from_args(args)
    table = run_convergence_study(cfg, args.n, args.scheme, args.dt_rule, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "convergence.csv")
    table.write_json(out / "convergence.json")
    for n, err, rate, rate_h in table.rows():
        r = "" if rate is None else f"  rate(N) {rate:.3f}  rate(h) {rate_h:.3f}"
        print(f"N={n:8d}  error {err:.6e}{r}")
    return EXIT_OK


def cmd_dump_mesh(args) -> int:
    cfg = _config_from_args(args)
    problem = build_problem(cfg)
    write_mesh(args.out, problem.space.mesh)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metriplectic-fem",
        description="Structure-preserving P1 finite element runs for Hamiltonian and metriplectic PDEs.",
        epilog=f"presets: {', '.join(list_presets())}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme=True):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--preset", help="name of a bundled preset")
        p.add_argument("--seed", type=int, help="override the run seed")
        if scheme:
            p.add_argument("--scheme", choices=[s.value for s in SchemeId], help="override the time integrator")

    p = sub.add_parser("run", help="integrate one trajectory and write diagnostics")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--strict", action="store_true", help="exit nonzero when a structural check fails")
    p.add_argument("--dump-matrix", action="append", metavar="NAME:PATH",
                   help="write mass, stiffness, advection or poisson in 'i j value' format")
    p.add_argument("--dump-mesh", metavar="PATH", help="write the mesh")
    p.add_argument("--structural-states", type=int, default=3,
                   help="random states for the structural report in the summary (0 disables)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="structural report of the configured model")
    common(p, scheme=False)
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--fd-coordinates", type=int, default=20)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("converge", help="mesh convergence study")
    common(p)
    p.add_argument("--n", type=int, nargs="+", required=True,
                   help="resolutions: cells (1D), cells per side (torus) or subdivisions (sphere)")
    p.add_argument("--dt-rule", choices=DT_RULES, default="fixed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("dump-mesh", help="write the configured mesh")
    common(p, scheme=False)
    p.add_argument("--out", required=True, help="mesh file")
    p.set_defaults(func=cmd_dump_mesh)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FixedPointError, LinearSolveError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
