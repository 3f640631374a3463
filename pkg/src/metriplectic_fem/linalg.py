"""Sparse solvers, the Picard iteration, and the P1 triple-product tensor.

Sparse matrices are plain ``scipy.sparse.csr_matrix`` objects (sorted,
de-duplicated indices).  Factorisations are cached inside small solver
objects so that time steppers can reuse them for every step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 20_000


class LinearSolveError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class FixedPointError(RuntimeError):
    def __init__(self, message: str, last_iterate: np.ndarray, update_norm: float, iterations: int):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.update_norm = update_norm
        self.iterations = iterations


def csr(matrix) -> sp.csr_matrix:
    """Canonical CSR copy: duplicates summed, column indices sorted."""
    out = sp.csr_matrix(matrix, dtype=float)
    out.sum_duplicates()
    out.sort_indices()
    return out


def max_abs(matrix) -> float:
    matrix = sp.csr_matrix(matrix)
    return float(np.abs(matrix.data).max()) if matrix.nnz else 0.0


def symmetry_defect(matrix) -> float:
    """``max|X - X^T|``."""
    return max_abs(matrix - matrix.T)


def skew_defect(matrix) -> float:
    """``max|X + X^T|``."""
    return max_abs(matrix + matrix.T)


def is_symmetric(matrix, rtol: float = 1e-13) -> bool:
    return symmetry_defect(matrix) <= rtol * max(max_abs(matrix), np.finfo(float).tiny)


def _residual_ratio(matrix, x: np.ndarray, rhs: np.ndarray) -> float:
    norm_b = np.linalg.norm(rhs)
    res = np.linalg.norm(matrix @ x - rhs)
    return res / norm_b if norm_b > 0 else res


class SPDSolver:
    """Reusable solver for a fixed symmetric positive definite matrix.

    Sparse LU for up to ``DIRECT_SOLVE_LIMIT`` unknowns, Jacobi-preconditioned
    CG above that.  Every solve is checked against ``tol`` on the relative
    2-norm residual.
    """

    def __init__(self, matrix, tol: float = 1e-12):
        self.matrix = csr(matrix)
        n, m = self.matrix.shape
        if n != m:
            raise ValueError(f"matrix must be square, got {self.matrix.shape}")
        self.tol = tol
        self.direct = n <= DIRECT_SOLVE_LIMIT
        if self.direct:
            try:
                self._lu = spla.splu(self.matrix.tocsc())
            except RuntimeError as exc:
                raise LinearSolveError(f"factorisation failed: {exc}") from exc
        else:
            diag = self.matrix.diagonal()
            if np.any(diag <= 0):
                raise LinearSolveError("non-positive diagonal entry in SPD matrix")
            self._precond = spla.LinearOperator((n, n), matvec=lambda r: r / diag)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if not np.any(rhs):
            return np.zeros_like(rhs)
        if self.direct:
            x = self._lu.solve(rhs)
            x += self._lu.solve(rhs - self.matrix @ x)  # one refinement sweep
        else:
            x, info = spla.cg(self.matrix, rhs, rtol=0.1 * self.tol, atol=0.0,
                              M=self._precond, maxiter=20 * len(rhs))
            if info != 0:
                raise LinearSolveError(
                    f"CG did not converge (info={info})", _residual_ratio(self.matrix, x, rhs))
        ratio = _residual_ratio(self.matrix, x, rhs)
        if not ratio <= self.tol:
            raise LinearSolveError(f"relative residual {ratio:.3e} exceeds {self.tol:.1e}", ratio)
        return x


def solve_spd(matrix, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    return SPDSolver(matrix, tol).solve(rhs)


class ZeroMeanPoissonSolver:
    """Solves ``K x = P r`` on a closed surface, where ``P`` removes the
    component of ``r`` along ``M 1`` and the answer is normalised to
    ``1^T M x = 0``.

    ``K`` has the constants as its kernel, so the rhs is deflated before the
    solve and the constant is fixed afterwards.  With a direct solver the
    first dof is pinned to zero; the reduced matrix is SPD.
    """

    def __init__(self, stiffness, mass=None, tol: float = 1e-12):
        self.stiffness = csr(stiffness)
        n = self.stiffness.shape[0]
        self.tol = tol
        self._m1 = np.ones(n) if mass is None else np.asarray(csr(mass) @ np.ones(n))
        self.measure = float(self._m1.sum())
        self.direct = n <= DIRECT_SOLVE_LIMIT
        if self.direct:
            self._inner = SPDSolver(self.stiffness[1:, 1:], tol=tol)
        else:
            self._inner = None

    def project_rhs(self, rhs: np.ndarray) -> np.ndarray:
        return rhs - (rhs.sum() / self.measure) * self._m1

    def remove_mean(self, x: np.ndarray) -> np.ndarray:
        return x - (self._m1 @ x) / self.measure

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        r = self.project_rhs(np.asarray(rhs, dtype=float))
        scale = np.linalg.norm(rhs)
        if scale == 0 or np.linalg.norm(r) <= 1e-15 * scale:
            return np.zeros_like(r)
        if self.direct:
            x = np.zeros_like(r)
            x[1:] = self._inner.solve(r[1:])
        else:
            diag = self.stiffness.diagonal()
            precond = spla.LinearOperator(self.stiffness.shape, matvec=lambda v: v / diag)
            x, info = spla.cg(self.stiffness, r, rtol=0.1 * self.tol, atol=0.0,
                              M=precond, maxiter=20 * len(r))
            if info != 0:
                raise LinearSolveError(
                    f"CG did not converge (info={info})", _residual_ratio(self.stiffness, x, r))
        x = self.remove_mean(x)
        res = self.stiffness @ x - r
        if self.direct:
            # the pinned row is the dependent equation; it only sees the
            # rounding in the row sums of K
            res = res[1:]
        else:
            res -= res.mean()
        ratio = np.linalg.norm(res) / np.linalg.norm(r)
        if not ratio <= self.tol:
            raise LinearSolveError(f"relative residual {ratio:.3e} exceeds {self.tol:.1e}", ratio)
        return x


def solve_saddle_zero_mean(stiffness, rhs: np.ndarray, tol: float = 1e-12, mass=None) -> np.ndarray:
    """Zero-mean solution of the singular stiffness system.

    A rhs lying entirely along ``M 1`` (the kernel direction) is projected
    away and the result is the zero vector rather than an error.
    """
    return ZeroMeanPoissonSolver(stiffness, mass, tol).solve(rhs)


@dataclass(frozen=True)
class FixedPointConfig:
    tolerance: float = 1e-12
    max_iterations: int = 100

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError(f"fixed-point tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


def fixed_point_solve(
    fmap: Callable[[np.ndarray], np.ndarray],
    initial: np.ndarray,
    config: FixedPointConfig = FixedPointConfig(),
) -> tuple[np.ndarray, int]:
    """Plain Picard iteration ``x <- fmap(x)`` until the max-norm update
    drops below ``config.tolerance``.  Returns the last iterate and the
    number of map evaluations."""
    x = np.asarray(initial, dtype=float)
    update = np.inf
    for it in range(1, config.max_iterations + 1):
        x_new = fmap(x)
        update = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        if not np.isfinite(update):
            raise FixedPointError("fixed-point iterate is not finite", x_new, update, it)
        x = x_new
        if update <= config.tolerance:
            return x, it
    raise FixedPointError(
        f"fixed point not reached in {config.max_iterations} iterations (last update {update:.3e})",
        x, update, config.max_iterations)


@dataclass(frozen=True)
class TrilinearForm:
    """Sparse triple tensor with ``value[e] = <v_j v_k, v_i>`` for the
    entry ``(i[e], j[e], k[e])``; every nonzero index triple is stored."""

    n: int
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    values: np.ndarray

    def contract(self, a: np.ndarray, c: np.ndarray) -> np.ndarray:
        """``out_i = sum_jk R(i,j,k) a_j c_k``."""
        return np.bincount(self.i, weights=self.values * a[self.j] * c[self.k], minlength=self.n)

    def matrix(self, a: np.ndarray) -> sp.csr_matrix:
        """Matrix ``B`` with ``B c = contract(a, c)``."""
        return csr(sp.coo_matrix((self.values * a[self.j], (self.i, self.k)), shape=(self.n, self.n)))

    def triple(self, a: np.ndarray) -> float:
        return float(a @ self.contract(a, a))

    def entry(self, i: int, j: int, k: int) -> float:
        mask = (self.i == i) & (self.j == j) & (self.k == k)
        return float(self.values[mask].sum())

    def slot_symmetry_defect(self) -> float:
        """Largest ``|R(i,j,k) - R(i,k,j)|`` over stored entries."""
        a = sp.coo_matrix((self.values, (self.i * self.n + self.j, self.k)), shape=(self.n * self.n, self.n)).tocsr()
        b = sp.coo_matrix((self.values, (self.i * self.n + self.k, self.j)), shape=(self.n * self.n, self.n)).tocsr()
        return max_abs(a - b)


def write_coo(path: str | Path, matrix) -> None:
    """One ``i j value`` line per stored entry, 0-based."""
    coo = csr(matrix).tocoo()
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
