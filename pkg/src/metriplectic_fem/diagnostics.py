"""Invariant series, error norms, convergence tables and their CSV/JSON
persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .assembly import P1Space

SERIES_COLUMNS = ("step", "time", "mass", "hamiltonian", "entropy", "enstrophy", "palinstrophy",
                  "entropy_residual", "rel_l2_error", "fp_iterations")
CONVERGENCE_COLUMNS = ("n_dofs", "error", "rate_dofs", "rate_h")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


@dataclass(frozen=True)
class DiagnosticsRecord:
    step: int
    time: float
    mass: float | None = None
    hamiltonian: float | None = None
    entropy: float | None = None
    enstrophy: float | None = None
    palinstrophy: float | None = None
    entropy_residual: float | None = None
    rel_l2_error: float | None = None
    fp_iterations: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"diagnostic {f.name} is not finite at step {self.step}")

    def row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in SERIES_COLUMNS]


class SeriesWriter:
    """Streams records to a CSV file, enforcing increasing time stamps."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(SERIES_COLUMNS)
        self._last_time = -math.inf

    def write(self, record: DiagnosticsRecord) -> None:
        if not record.time > self._last_time:
            raise ValueError(f"time stamps must increase (step {record.step})")
        self._last_time = record.time
        self._writer.writerow(record.row())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_series(path: str | Path, records: Iterable[DiagnosticsRecord]) -> None:
    with SeriesWriter(path) as w:
        for r in records:
            w.write(r)


def read_series(path: str | Path) -> list[DiagnosticsRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SERIES_COLUMNS:
            raise ValueError(f"unexpected columns in {path}: {reader.fieldnames}")
        for row in reader:
            vals = {}
            for c in SERIES_COLUMNS:
                s = row[c]
                if c in ("step", "fp_iterations"):
                    vals[c] = int(s)
                else:
                    vals[c] = float(s) if s != "" else None
            out.append(DiagnosticsRecord(**vals))
    return out


def rel_l2_error(a: np.ndarray, exact: Callable[[np.ndarray, float], np.ndarray], space: P1Space,
                 t: float) -> float:
    """``|u(t) - u_N| / |u(t)|`` in L2, by degree-4 quadrature per element.

    ``exact(points, t)`` receives ``x`` in 1D and ``(..., 3)`` points on
    surfaces; on the sphere the quadrature points lie on the flat triangles
    and it is up to ``exact`` to project them radially.
    """
    points, weights, basis = space.quadrature()
    uh = np.asarray(a)[space.cells] @ basis.T
    u = np.asarray(exact(points, t), dtype=float)
    norm = float(np.sqrt(np.sum(weights * u**2)))
    if norm == 0.0:
        raise ValueError("reference solution vanishes in L2; relative error undefined")
    return float(np.sqrt(np.sum(weights * (u - uh) ** 2))) / norm


def entropy_residual(a0: np.ndarray, a1: np.ndarray, dt: float, nu: float, mass, stiffness) -> float:
    """``(S(a1) - S(a0))/dt - nu m^T K m`` with ``S = -1/2 a^T M a`` and
    ``m`` the midpoint coefficients."""
    s0 = -0.5 * float(a0 @ (mass @ a0))
    s1 = -0.5 * float(a1 @ (mass @ a1))
    m = 0.5 * (a0 + a1)
    return (s1 - s0) / dt - nu * float(m @ (stiffness @ m))


def ns_invariants(a: np.ndarray, b: np.ndarray, mass, stiffness) -> tuple[float, float, float]:
    """Kinetic energy, enstrophy and palinstrophy; ``b`` solves ``K b = M a``."""
    ma = mass @ a
    return 0.5 * float(b @ ma), 0.5 * float(a @ ma), 0.5 * float(a @ (stiffness @ a))


def is_non_increasing(values: Sequence[float], slack: float = 1e-12) -> bool:
    """Every step may rise by at most ``slack`` relative to the series scale."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return True
    scale = max(float(np.abs(v).max()), np.finfo(float).tiny)
    return bool(np.all(np.diff(v) <= slack * scale))


@dataclass
class ConvergenceTable:
    """Errors against resolution; ``dim`` converts dof rates to ``h`` rates
    (``h ~ N^(-1/dim)``)."""

    n_dofs: list[int] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)
    dim: int = 1

    def add(self, n: int, error: float) -> None:
        if self.n_dofs and n <= self.n_dofs[-1]:
            raise ValueError("dof counts must be strictly increasing")
        if not (math.isfinite(error) and error > 0):
            raise ValueError(f"error must be positive and finite, got {error}")
        self.n_dofs.append(int(n))
        self.errors.append(float(error))

    @property
    def rates_dofs(self) -> list[float | None]:
        out: list[float | None] = [None]
        for i in range(1, len(self.n_dofs)):
            out.append(math.log(self.errors[i - 1] / self.errors[i])
                       / math.log(self.n_dofs[i] / self.n_dofs[i - 1]))
        return out

    @property
    def rates_h(self) -> list[float | None]:
        return [None if r is None else r * self.dim for r in self.rates_dofs]

    @property
    def asymptotic_rate_dofs(self) -> float | None:
        return self.rates_dofs[-1]

    def rows(self) -> list[tuple]:
        return list(zip(self.n_dofs, self.errors, self.rates_dofs, self.rates_h))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CONVERGENCE_COLUMNS)
            for row in self.rows():
                w.writerow([_fmt(v) for v in row])

    def write_json(self, path: str | Path) -> None:
        payload = {"dim": self.dim, "rows": [dict(zip(CONVERGENCE_COLUMNS, r)) for r in self.rows()]}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def write_summary(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
