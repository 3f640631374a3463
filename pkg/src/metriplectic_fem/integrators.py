"""Implicit midpoint and average-vector-field (AVF) time stepping.

Both schemes are one-step and implicit; the nonlinear equations are solved
by Picard iteration with the constant linear part of the vector field
kept implicit.  The quadratic terms of the KdV and vorticity models are
averaged in closed form through two coefficients ``d1, d2``; for a
quadratic map ``q`` these weight the cross term ``q(a1, a0)`` and the
pure terms ``q(a0, a0), q(a1, a1)`` respectively.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import MetriplecticSystem
from .linalg import FixedPointConfig, LinearSolveError, SPDSolver, csr, fixed_point_solve
from .models import KdvOperators, KdvParams, NsOperators

_GAUSS_XI, _GAUSS_W = np.polynomial.legendre.leggauss(3)
_GAUSS_XI = 0.5 * (_GAUSS_XI + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


class SchemeId(enum.Enum):
    MIDPOINT = "midpoint"
    AVF = "avf"

    @classmethod
    def parse(cls, value: "str | SchemeId") -> "SchemeId":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown scheme {value!r}; expected 'midpoint' or 'avf'") from None

    @property
    def kdv_coefficients(self) -> tuple[float, float]:
        """``(d1, d2)`` of the cubic-Hamiltonian average."""
        return (4.0, 8.0) if self is SchemeId.MIDPOINT else (6.0, 6.0)

    @property
    def ns_coefficients(self) -> tuple[float, float]:
        """``(d1, d2)`` of the bilinear bracket average."""
        return (4.0, 4.0) if self is SchemeId.MIDPOINT else (3.0, 6.0)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.T > self.t0:
            raise ValueError("final time must exceed the initial time")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt


class _LU:
    def __init__(self, matrix):
        try:
            self._lu = spla.splu(sp.csc_matrix(matrix))
        except RuntimeError as exc:
            raise LinearSolveError(f"factorisation failed: {exc}") from exc

    def solve(self, rhs):
        return self._lu.solve(rhs)


def chord_average(fn: Callable[[np.ndarray], np.ndarray], a0: np.ndarray, a1: np.ndarray) -> np.ndarray:
    """``int_0^1 fn((1 - xi) a0 + xi a1) dxi`` by 3-point Gauss-Legendre,
    exact for polynomial ``fn`` of degree <= 5."""
    out = None
    for xi, w in zip(_GAUSS_XI, _GAUSS_W):
        val = w * fn((1.0 - xi) * a0 + xi * a1)
        out = val if out is None else out + val
    return out


class GenericStepper:
    """Midpoint / AVF for any ``MetriplecticSystem``.

    With ``L`` the system's constant linear part, each Picard sweep solves
    ``(M - dt/2 L) x = M a0 + dt/2 L a0 + dt (F(a0, x_old) - L (a0 + x_old)/2)``
    where ``F`` is the scheme's average of ``M f``: the value at the
    midpoint, or the chord average for AVF.  At the fixed point this is
    exactly the scheme.
    """

    def __init__(self, system: MetriplecticSystem, scheme: SchemeId | str, dt: float,
                 fp: FixedPointConfig = FixedPointConfig()):
        self.system = system
        self.scheme = SchemeId.parse(scheme)
        self.dt = dt
        self.fp = fp
        n = system.n_dofs
        self.linear = system.linear_part if system.linear_part is not None else csr(sp.csr_matrix((n, n)))
        self._solver = _LU(system.mass - 0.5 * dt * self.linear)

    def averaged_force(self, a0: np.ndarray, a1: np.ndarray) -> np.ndarray:
        if self.scheme is SchemeId.MIDPOINT:
            return self.system.force(0.5 * (a0 + a1))
        return chord_average(self.system.force, a0, a1)

    def residual(self, a0: np.ndarray, a1: np.ndarray) -> np.ndarray:
        """``M (a1 - a0)/dt - F(a0, a1)``."""
        return self.system.mass @ (a1 - a0) / self.dt - self.averaged_force(a0, a1)

    def step(self, a0: np.ndarray) -> tuple[np.ndarray, int]:
        dt = self.dt
        base = self.system.mass @ a0 + 0.5 * dt * (self.linear @ a0)

        def sweep(x):
            correction = self.averaged_force(a0, x) - 0.5 * (self.linear @ (a0 + x))
            return self._solver.solve(base + dt * correction)

        return fixed_point_solve(sweep, a0, self.fp)


def step_midpoint_generic(system: MetriplecticSystem, a_k: np.ndarray, dt: float,
                          fp: FixedPointConfig = FixedPointConfig()) -> np.ndarray:
    return GenericStepper(system, SchemeId.MIDPOINT, dt, fp).step(a_k)[0]


def step_avf_generic(system: MetriplecticSystem, a_k: np.ndarray, dt: float,
                     fp: FixedPointConfig = FixedPointConfig()) -> np.ndarray:
    return GenericStepper(system, SchemeId.AVF, dt, fp).step(a_k)[0]


def kdv_quadratic_average(scheme: SchemeId, ops: KdvOperators, alpha: float,
                          a0: np.ndarray, a1: np.ndarray) -> np.ndarray:
    """Closed-form scheme average of ``(alpha/2) R(a, a)``."""
    d1, d2 = scheme.kdv_coefficients
    R = ops.trilinear
    return alpha * (R.contract(a1, a1) / d2 + R.contract(a0, a0) / d2 + R.contract(a1, a0) / d1)


class KdvStepper:
    """Fully discrete KdV block system in the unknowns ``(a1, b*)``::

        (M + dt/2 nu K) a1 + dt A b*                         = (M - dt/2 nu K) a0
        (eta/2 K - alpha/d1 R(a0, .)) a1 + M b* - alpha/d2 R(a1, a1) = -eta/2 K a0 + alpha/d2 R(a0, a0)

    Only ``R(a1, a1)`` is lagged in the Picard sweep; the rest is one sparse
    LU per step.
    """

    def __init__(self, scheme: SchemeId | str, ops: KdvOperators, params: KdvParams, dt: float,
                 fp: FixedPointConfig = FixedPointConfig()):
        self.scheme = SchemeId.parse(scheme)
        self.ops = ops
        self.params = params
        self.dt = dt
        self.fp = fp
        M, K, A = ops.mass, ops.stiffness, ops.advection
        self._top_left = csr(M + 0.5 * dt * params.nu * K)
        self._top_rhs = csr(M - 0.5 * dt * params.nu * K)
        self._top_right = csr(dt * A)

    def step(self, a0: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
        ops, p, dt = self.ops, self.params, self.dt
        d1, d2 = self.scheme.kdv_coefficients
        M, K, R = ops.mass, ops.stiffness, ops.trilinear
        n = len(a0)
        block = sp.bmat([
            [self._top_left, self._top_right],
            [0.5 * p.eta * K - (p.alpha / d1) * R.matrix(a0), M],
        ], format="csc")
        lu = _LU(block)
        rhs_top = self._top_rhs @ a0
        rhs_bottom = -0.5 * p.eta * (K @ a0) + (p.alpha / d2) * R.contract(a0, a0)
        holder = {}

        def sweep(a1):
            sol = lu.solve(np.concatenate([rhs_top, rhs_bottom + (p.alpha / d2) * R.contract(a1, a1)]))
            holder["b"] = sol[n:]
            return sol[:n]

        a1, iterations = fixed_point_solve(sweep, a0, self.fp)
        return a1, holder["b"], iterations

    def residuals(self, a0: np.ndarray, a1: np.ndarray, b_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Defects of the two defining equations of the step."""
        ops, p, dt = self.ops, self.params, self.dt
        M, K, A = ops.mass, ops.stiffness, ops.advection
        mid = 0.5 * (a0 + a1)
        r1 = M @ (a1 - a0) / dt + A @ b_star + p.nu * (K @ mid)
        r2 = M @ b_star - kdv_quadratic_average(self.scheme, ops, p.alpha, a0, a1) + p.eta * (K @ mid)
        return r1, r2


def kdv_step(scheme: SchemeId | str, a_k: np.ndarray, dt: float, params: KdvParams, ops: KdvOperators,
             fp: FixedPointConfig = FixedPointConfig()) -> tuple[np.ndarray, np.ndarray]:
    a1, b_star, _ = KdvStepper(scheme, ops, params, dt, fp).step(a_k)
    return a1, b_star


def ns_bracket_average(scheme: SchemeId, ops: NsOperators, a0, b0, a1, b1) -> np.ndarray:
    """Closed-form scheme average of ``J(a) b`` along the step."""
    d1, d2 = scheme.ns_coefficients
    J = ops.bracket.apply
    return (J(a1, b1) + J(a0, b0)) / d1 + (J(a1, b0) + J(a0, b1)) / d2


class NsStepper:
    """Fully discrete vorticity update::

        (M + dt/2 nu K) a1 - dt [J(a1) b1 / d1 + J(a1) b0 / d2 + J(a0) b1 / d2]
            = (M - dt/2 nu K) a0 + dt J(a0) b0 / d1,      K b1 = M a1.

    ``linearisation`` selects the Picard map.  ``"explicit"`` lags every
    bracket term involving the new state and reuses one factorisation.
    ``"advective"`` keeps the transport of ``a1`` by the lagged stream
    function implicit, using ``J(a1) c = -J(c) a1``; it costs one sparse LU
    per sweep but does not need ``|u| dt / h < 1`` to contract.  Both maps
    have the same fixed point.  ``b1`` is recomputed from each new ``a1``.
    """

    LINEARISATIONS = ("explicit", "advective")

    def __init__(self, scheme: SchemeId | str, ops: NsOperators, nu: float, dt: float,
                 fp: FixedPointConfig = FixedPointConfig(), linearisation: str = "explicit"):
        if linearisation not in self.LINEARISATIONS:
            raise ValueError(f"unknown linearisation {linearisation!r}; expected one of {self.LINEARISATIONS}")
        self.scheme = SchemeId.parse(scheme)
        self.ops = ops
        self.nu = nu
        self.dt = dt
        self.fp = fp
        self.linearisation = linearisation
        M, K = ops.mass, ops.stiffness
        self._lhs_matrix = csr(M + 0.5 * dt * nu * K)
        self._lhs = SPDSolver(self._lhs_matrix) if linearisation == "explicit" else None
        self._rhs = csr(M - 0.5 * dt * nu * K)

    def step(self, a0: np.ndarray, b0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, int]:
        ops, dt = self.ops, self.dt
        d1, d2 = self.scheme.ns_coefficients
        J = ops.bracket.apply
        if b0 is None:
            b0 = ops.stream_coefficients(a0)
        base = self._rhs @ a0 + dt / d1 * J(a0, b0)
        holder = {"b": b0}

        def sweep_explicit(a1):
            b1 = holder["b"]
            rhs = base + dt * (J(a1, b1) / d1 + J(a1, b0) / d2 + J(a0, b1) / d2)
            a_new = self._lhs.solve(rhs)
            holder["b"] = ops.stream_coefficients(a_new)
            return a_new

        def sweep_advective(a1):
            b1 = holder["b"]
            transport = ops.bracket.matrix(b1 / d1 + b0 / d2)
            a_new = _LU(self._lhs_matrix + dt * transport).solve(base + dt / d2 * J(a0, b1))
            holder["b"] = ops.stream_coefficients(a_new)
            return a_new

        sweep = sweep_explicit if self.linearisation == "explicit" else sweep_advective
        a1, iterations = fixed_point_solve(sweep, a0, self.fp)
        return a1, holder["b"], iterations

    def residual(self, a0, b0, a1, b1) -> np.ndarray:
        M, K = self.ops.mass, self.ops.stiffness
        mid = 0.5 * (a0 + a1)
        return (M @ (a1 - a0) / self.dt - ns_bracket_average(self.scheme, self.ops, a0, b0, a1, b1)
                + self.nu * (K @ mid))


def ns_step(scheme: SchemeId | str, a_k: np.ndarray, dt: float, nu: float, ops: NsOperators,
            fp: FixedPointConfig = FixedPointConfig(), b_k: np.ndarray | None = None,
            linearisation: str = "explicit") -> tuple[np.ndarray, np.ndarray]:
    a1, b1, _ = NsStepper(scheme, ops, nu, dt, fp, linearisation).step(a_k, b_k)
    return a1, b1
