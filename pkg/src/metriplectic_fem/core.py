"""Reduced semi-discrete systems ``d_t a = Jh(a) grad H(a) + nu Gh(a) grad S(a)``.

``Jh = M^-1 J M^-1`` and ``Gh = M^-1 G M^-1`` are never formed; they are
applied as mass solve, sparse product, mass solve.  ``G`` is stored without
the dissipation coefficient ``nu`` so that structural identities can be
checked independently of the viscosity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import SPDSolver, csr, max_abs, skew_defect, symmetry_defect

Vector = np.ndarray
MatrixBuilder = Callable[[Vector], sp.csr_matrix]
ScalarFn = Callable[[Vector], float]
GradientFn = Callable[[Vector], Vector]


class StateError(ValueError):
    pass


@dataclass(frozen=True)
class State:
    a: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 1:
            raise StateError(f"state must be a vector, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise StateError("state has non-finite entries")
        object.__setattr__(self, "a", a)


@dataclass
class MetriplecticSystem:
    """One semi-discrete model.

    ``g_sign`` is +1 when ``G`` is positive semi-definite (entropy grows) and
    -1 when it is negative semi-definite (a dissipated energy).  The optional
    ``metric_null_target`` gives the value ``Gh grad H`` should take (zero if
    unset); ``admissible`` projects an arbitrary vector onto the phase space
    the identities are stated on.  ``linear_part`` is a constant matrix
    ``L`` such that ``M f(a) - L a`` is the nonlinear remainder, used to
    precondition the Picard iteration of the generic time steppers.
    """

    name: str
    mass: sp.csr_matrix
    j_builder: MatrixBuilder
    g_builder: MatrixBuilder
    grad_h: GradientFn
    grad_s: GradientFn
    h_value: ScalarFn
    s_value: ScalarFn
    nu: float = 0.0
    g_sign: int = 1
    casimirs: Sequence[tuple[str, GradientFn]] = ()
    metriplectic: bool = False
    metric_null_target: GradientFn | None = None
    admissible: Callable[[Vector], Vector] | None = None
    linear_part: sp.csr_matrix | None = None
    force_fn: Callable[[Vector], Vector] | None = None
    space: object = None
    mass_solver: SPDSolver = field(init=False, repr=False)

    def __post_init__(self):
        self.mass = csr(self.mass)
        self.mass_solver = SPDSolver(self.mass)

    @property
    def n_dofs(self) -> int:
        return self.mass.shape[0]

    def solve_mass(self, v: Vector) -> Vector:
        return self.mass_solver.solve(v)

    def hat(self, matrix: sp.csr_matrix, v: Vector) -> Vector:
        """``M^-1 matrix M^-1 v``."""
        return self.solve_mass(matrix @ self.solve_mass(v))

    def j_hat(self, a: Vector, v: Vector) -> Vector:
        return self.hat(self.j_builder(a), v)

    def g_hat(self, a: Vector, v: Vector) -> Vector:
        return self.hat(self.g_builder(a), v)

    def cotangent(self, a: Vector) -> tuple[Vector, Vector]:
        """Auxiliary coefficients ``b = M^-1 grad H``, ``c = M^-1 grad S``."""
        return self.solve_mass(self.grad_h(a)), self.solve_mass(self.grad_s(a))

    def force(self, a: Vector) -> Vector:
        """``M d_t a = J(a) b + nu G(a) c``."""
        if self.force_fn is not None:
            return self.force_fn(a)
        return self.force_generic(a)

    def force_generic(self, a: Vector) -> Vector:
        b, c = self.cotangent(a)
        out = self.j_builder(a) @ b
        if self.nu:
            out = out + self.nu * (self.g_builder(a) @ c)
        return out

    def random_state(self, rng: np.random.Generator, scale: float = 1.0) -> Vector:
        a = scale * rng.standard_normal(self.n_dofs)
        return self.admissible(a) if self.admissible is not None else a


def rhs(system: MetriplecticSystem, a: Vector) -> Vector:
    return system.solve_mass(system.force(np.asarray(a, dtype=float)))


def poisson_bracket_N(system: MetriplecticSystem, a: Vector, grad_f: Vector, grad_l: Vector) -> float:
    """``{F, L}_N(a) = Jh(a) grad F . grad L``."""
    return float(grad_l @ system.j_hat(a, grad_f))


def metric_bracket_N(system: MetriplecticSystem, a: Vector, grad_f: Vector, grad_l: Vector) -> float:
    """``(F, L)_N(a) = Gh(a) grad F . grad L`` with the unscaled metric."""
    return float(grad_l @ system.g_hat(a, grad_f))


@dataclass(frozen=True)
class NullConditionReport:
    metric_on_grad_h: float
    poisson_on_grad_s: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.metric_on_grad_h <= self.tol and self.poisson_on_grad_s <= self.tol


def check_null_conditions(system: MetriplecticSystem, a: Vector, tol: float = 1e-12) -> NullConditionReport:
    """Max-norm defects of ``Gh grad H = target`` and ``Jh grad S = 0``."""
    g_h = system.g_hat(a, system.grad_h(a))
    if system.metric_null_target is not None:
        g_h = g_h - system.metric_null_target(a)
    j_s = system.j_hat(a, system.grad_s(a))
    return NullConditionReport(float(np.max(np.abs(g_h))), float(np.max(np.abs(j_s))), tol)


def double_bracket_metric(j, m) -> sp.csr_matrix:
    """``J^T M^-1 J``: symmetric positive semi-definite for skew ``J``.

    Its induced ``Gh`` is the discrete analogue of ``-J^2``.  The result is
    generally dense and is returned in CSR form.
    """
    j = csr(j)
    solver = SPDSolver(m)
    x = np.column_stack([solver.solve(col) for col in j.toarray().T]) if j.nnz else np.zeros(j.shape)
    g = j.T @ x
    return csr(0.5 * (g + g.T))


def check_equilibrium(system: MetriplecticSystem, a_star: Vector, tol: float) -> bool:
    return bool(np.max(np.abs(rhs(system, a_star))) <= tol)


def casimir_rates(system: MetriplecticSystem, a: Vector, conservative_only: bool = False) -> dict[str, float]:
    """``grad C . f(a)`` for each declared Casimir."""
    if conservative_only:
        b, _ = system.cotangent(a)
        f = system.solve_mass(system.j_builder(a) @ b)
    else:
        f = rhs(system, a)
    return {name: float(grad(a) @ f) for name, grad in system.casimirs}


def gradient_defect(value: ScalarFn, grad: GradientFn, a: Vector, eps: float = 1e-5,
                    indices: Sequence[int] | None = None) -> float:
    """Largest ``|central difference - grad_i|`` over the chosen coordinates."""
    g = grad(a)
    idx = range(len(a)) if indices is None else indices
    worst = 0.0
    for i in idx:
        e = np.zeros_like(a)
        e[i] = eps
        fd = (value(a + e) - value(a - e)) / (2 * eps)
        worst = max(worst, abs(fd - g[i]))
    return worst


def min_rayleigh_quotient(matrix, sign: int, rng: np.random.Generator, n_samples: int = 100) -> float:
    """Smallest ``sign * v^T X v / |v|^2`` over random ``v``, relative to
    ``max|X|``; non-negative up to rounding for a correctly signed ``X``."""
    scale = max(max_abs(matrix), np.finfo(float).tiny)
    v = rng.standard_normal((matrix.shape[0], n_samples))
    q = np.einsum("in,in->n", v, matrix @ v) / np.einsum("in,in->n", v, v)
    return float(sign * q.min() / scale)


def jacobi_cyclic_sum(system: MetriplecticSystem, a: Vector, f: Vector, g: Vector, h: Vector,
                      eps: float = 1e-5) -> float:
    """Cyclic sum of ``{F, {G, H}}`` for the linear functionals with
    gradients ``f, g, h``; derivatives of ``Jh`` by central differences."""

    def bracket_gradient(p: Vector, q: Vector) -> Vector:
        out = np.empty_like(a)
        for k in range(len(a)):
            e = np.zeros_like(a)
            e[k] = eps
            out[k] = (poisson_bracket_N(system, a + e, p, q) - poisson_bracket_N(system, a - e, p, q)) / (2 * eps)
        return out

    total = 0.0
    for x, y, z in ((f, g, h), (g, h, f), (h, f, g)):
        total += poisson_bracket_N(system, a, x, bracket_gradient(y, z))
    return total


def structural_report(system: MetriplecticSystem, n_states: int = 10, seed: int = 0,
                      fd_coordinates: int | None = 20) -> dict:
    """Worst-case structural defects over random admissible states."""
    rng = np.random.default_rng(seed)
    skew = sym = 0.0
    rayleigh = np.inf
    grad_h_err = grad_s_err = 0.0
    null_g = null_j = null_g_rel = null_j_rel = 0.0
    casimir = {name: 0.0 for name, _ in system.casimirs}
    n = system.n_dofs
    for _ in range(n_states):
        a = system.random_state(rng)
        jm = system.j_builder(a)
        gm = system.g_builder(a)
        skew = max(skew, skew_defect(jm) / max(max_abs(jm), np.finfo(float).tiny))
        sym = max(sym, symmetry_defect(gm) / max(max_abs(gm), np.finfo(float).tiny))
        rayleigh = min(rayleigh, min_rayleigh_quotient(gm, system.g_sign, rng))
        idx = None if fd_coordinates is None or fd_coordinates >= n else rng.choice(n, fd_coordinates, replace=False)
        grad_h_err = max(grad_h_err, gradient_defect(system.h_value, system.grad_h, a, indices=idx))
        grad_s_err = max(grad_s_err, gradient_defect(system.s_value, system.grad_s, a, indices=idx))
        if system.metriplectic:
            rep = check_null_conditions(system, a)
            null_g = max(null_g, rep.metric_on_grad_h)
            null_j = max(null_j, rep.poisson_on_grad_s)
            # rounding scales: the size of the cancelling summands
            j_scale = np.max(np.abs(system.solve_mass(abs(jm) @ np.abs(system.solve_mass(system.grad_s(a))))))
            g_scale = np.max(np.abs(a))
            null_j_rel = max(null_j_rel, rep.poisson_on_grad_s / max(j_scale, np.finfo(float).tiny))
            null_g_rel = max(null_g_rel, rep.metric_on_grad_h / max(g_scale, np.finfo(float).tiny))
        for name, rate in casimir_rates(system, a, conservative_only=True).items():
            casimir[name] = max(casimir[name], abs(rate))
    report = {
        "model": system.name,
        "n_dofs": n,
        "n_states": n_states,
        "j_skew_defect_rel": skew,
        "g_symmetry_defect_rel": sym,
        "g_min_signed_rayleigh_rel": rayleigh,
        "grad_h_fd_defect": grad_h_err,
        "grad_s_fd_defect": grad_s_err,
        "casimir_rates": casimir,
    }
    if system.metriplectic:
        report["null_metric_on_grad_h"] = null_g
        report["null_poisson_on_grad_s"] = null_j
        report["null_metric_on_grad_h_rel"] = null_g_rel
        report["null_poisson_on_grad_s_rel"] = null_j_rel
    return report


def evaluate_report(report: dict, tol: dict | None = None) -> dict[str, bool]:
    """Pass/fail per check using the structural tolerances.

    The null conditions are judged on the scale-normalised defects, which
    stay at rounding level on large meshes; the absolute values are kept in
    the report."""
    t = {"skew": 1e-13, "symmetry": 1e-13, "rayleigh": -1e-12, "gradient": 1e-6,
         "null_g": 1e-11, "null_j": 1e-12, "casimir": 1e-10}
    t.update(tol or {})
    out = {
        "j_skew": report["j_skew_defect_rel"] <= t["skew"],
        "g_symmetric": report["g_symmetry_defect_rel"] <= t["symmetry"],
        "g_sign": report["g_min_signed_rayleigh_rel"] >= t["rayleigh"],
        "grad_h": report["grad_h_fd_defect"] <= t["gradient"],
        "grad_s": report["grad_s_fd_defect"] <= t["gradient"],
        "casimirs": all(v <= t["casimir"] for v in report["casimir_rates"].values()),
    }
    if "null_metric_on_grad_h" in report:
        out["null_g_grad_h"] = report["null_metric_on_grad_h_rel"] <= t["null_g"]
        out["null_j_grad_s"] = report["null_poisson_on_grad_s_rel"] <= t["null_j"]
    return out
