"""P1 finite element spaces and operator assembly.

All element integrals are closed-form.  On triangle meshes every element
is flat, so basis gradients are constant per element and the bracket
``{f, g} = n . (grad f x grad g)`` is constant as well; on the torus
``n = +z`` and this is ``f_x g_y - f_y g_x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .linalg import TrilinearForm, csr
from .mesh import Mesh1D, TriMesh

# degree-4 symmetric rule on the reference triangle (barycentric, weight)
_TRI_RULE_4 = (
    (0.445948490915965, 0.445948490915965, 0.108103018168070, 0.223381589678011),
    (0.445948490915965, 0.108103018168070, 0.445948490915965, 0.223381589678011),
    (0.108103018168070, 0.445948490915965, 0.445948490915965, 0.223381589678011),
    (0.091576213509771, 0.091576213509771, 0.816847572980459, 0.109951743655322),
    (0.091576213509771, 0.816847572980459, 0.091576213509771, 0.109951743655322),
    (0.816847572980459, 0.091576213509771, 0.091576213509771, 0.109951743655322),
)


class P1Space:
    """Continuous piecewise-linear space on a periodic interval or a closed
    triangulated surface."""

    def __init__(self, mesh: Mesh1D | TriMesh):
        self.mesh = mesh
        self.dim = 1 if isinstance(mesh, Mesh1D) else 2
        self.n_dofs = mesh.n_dofs
        self.cells = mesh.cells if self.dim == 1 else mesh.dof_triangles

    @property
    def geometry(self) -> str:
        return "interval" if self.dim == 1 else self.mesh.geometry_tag

    @cached_property
    def dof_coords(self) -> np.ndarray:
        if self.dim == 1:
            return self.mesh.node_coords
        return self.mesh.dof_coords

    @cached_property
    def areas(self) -> np.ndarray:
        return self.mesh.cell_measures()

    @cached_property
    def unit_normals(self) -> np.ndarray:
        n = self.mesh.triangle_normals()
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def gradients(self) -> np.ndarray:
        """``(F, 3, 3)``: gradient of each local barycentric in its triangle's
        plane, ``grad l_i = n x e_i / (2 area)`` with ``e_i`` the edge
        opposite vertex ``i``."""
        p = self.mesh.vertices[self.mesh.triangles]
        edges = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        n = self.unit_normals[:, None, :]
        return np.cross(n, edges) / (2.0 * self.areas[:, None, None])

    @property
    def measure(self) -> float:
        return float(self.areas.sum())

    def _scatter(self, local: np.ndarray) -> sp.csr_matrix:
        nloc = self.cells.shape[1]
        rows = np.repeat(self.cells, nloc, axis=1).ravel()
        cols = np.tile(self.cells, (1, nloc)).ravel()
        return csr(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs)))

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal interpolant.  ``func`` receives ``x`` (1D) or ``(n, 3)``
        points (surfaces)."""
        return np.asarray(func(self.dof_coords), dtype=float)

    def quadrature(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-element quadrature exact to degree >= 4.

        Returns ``(points, weights, basis)`` with shapes ``(E, Q[, 3])``,
        ``(E, Q)`` and ``(Q, nloc)``; ``basis[q, l]`` is local basis ``l`` at
        point ``q``.  Computed once per space; treat the arrays as read-only.
        """
        return self._quadrature

    @cached_property
    def _quadrature(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.dim == 1:
            xi, w = np.polynomial.legendre.leggauss(4)
            t = 0.5 * (xi + 1.0)
            basis = np.stack([1.0 - t, t], axis=1)
            h = self.mesh.h
            points = self.mesh.node_coords[:, None] + h * t[None, :]
            weights = np.broadcast_to(0.5 * h * w, points.shape).copy()
            return points, weights, basis
        rule = np.array(_TRI_RULE_4)
        basis = rule[:, :3]
        p = self.mesh.vertices[self.mesh.triangles]
        points = np.einsum("ql,eld->eqd", basis, p)
        weights = self.areas[:, None] * rule[None, :, 3]
        return points, weights, basis

    def evaluate_at_quadrature(self, a: np.ndarray) -> np.ndarray:
        _, _, basis = self.quadrature()
        return a[self.cells] @ basis.T


def assemble_mass(space: P1Space) -> sp.csr_matrix:
    if space.dim == 1:
        h = space.mesh.h
        local = np.broadcast_to(h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]]), (len(space.cells), 2, 2))
    else:
        ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        local = space.areas[:, None, None] * ref[None]
    return space._scatter(np.ascontiguousarray(local))


def assemble_stiffness(space: P1Space) -> sp.csr_matrix:
    if space.dim == 1:
        h = space.mesh.h
        local = np.broadcast_to(np.array([[1.0, -1.0], [-1.0, 1.0]]) / h, (len(space.cells), 2, 2))
    else:
        g = space.gradients
        local = space.areas[:, None, None] * np.einsum("eid,ejd->eij", g, g)
    return space._scatter(np.ascontiguousarray(local))


def assemble_advection_1d(space: P1Space) -> sp.csr_matrix:
    """``A_ij = <d_x v_j, v_i>``."""
    if space.dim != 1:
        raise ValueError("advection matrix is only defined on the periodic interval")
    local = np.broadcast_to(np.array([[-0.5, 0.5], [-0.5, 0.5]]), (len(space.cells), 2, 2))
    return space._scatter(np.ascontiguousarray(local))


def assemble_trilinear_kdv(space: P1Space) -> TrilinearForm:
    """Triple products ``<v_j v_k, v_i>`` of 1D hat functions.

    On a cell of width h with local hats L, R: int L^3 = int R^3 = h/4 and
    every mixed product is h/12.
    """
    if space.dim != 1:
        raise ValueError("KdV trilinear tensor is only defined on the periodic interval")
    h = space.mesh.h
    n = space.n_dofs
    combos = np.array([(p, q, r) for p in (0, 1) for q in (0, 1) for r in (0, 1)])
    n_right = combos.sum(axis=1)
    local_val = np.where((n_right == 0) | (n_right == 3), h / 4.0, h / 12.0)
    cells = space.cells
    i = cells[:, combos[:, 0]].ravel()
    j = cells[:, combos[:, 1]].ravel()
    k = cells[:, combos[:, 2]].ravel()
    vals = np.tile(local_val, len(cells))
    key = (i * n + j) * n + k
    uniq, inv = np.unique(key, return_inverse=True)
    summed = np.bincount(inv, weights=vals)
    ui, rem = np.divmod(uniq, n * n)
    uj, uk = np.divmod(rem, n)
    return TrilinearForm(n, ui, uj, uk, summed)


@dataclass
class BracketTensor:
    """State-dependent Poisson matrix of 2D vorticity dynamics.

    ``J(a)_ij = sum_k a_k <{v_j, v_k}, v_i>`` so that ``J(a) b`` is the
    Galerkin projection of ``{z, omega}`` with ``omega = sum a_k v_k`` and
    ``z = sum b_j v_j``.  Because ``{., .}`` is constant per triangle, the
    product against ``v_i`` integrates to ``area / 3`` times that constant.
    """

    space: P1Space

    def __post_init__(self):
        if self.space.dim != 2:
            raise ValueError("bracket tensor needs a triangulated surface")
        self._grads = self.space.gradients
        self._normals = self.space.unit_normals
        self._weight = self.space.areas / 3.0
        self._cells = self.space.cells

    def element_gradients(self, a: np.ndarray) -> np.ndarray:
        return np.einsum("ekd,ek->ed", self._grads, a[self._cells])

    def apply(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``J(a) b`` without forming the matrix."""
        n = self.space.n_dofs
        if a.shape != (n,) or b.shape != (n,):
            raise ValueError(f"expected vectors of length {n}")
        grad_w = self.element_gradients(a)
        grad_z = self.element_gradients(b)
        bracket = np.einsum("ed,ed->e", self._normals, np.cross(grad_z, grad_w))
        contrib = np.repeat(self._weight * bracket, 3)
        return np.bincount(self._cells.ravel(), weights=contrib, minlength=n)

    def matrix(self, a: np.ndarray) -> sp.csr_matrix:
        n = self.space.n_dofs
        if a.shape != (n,):
            raise ValueError(f"expected a vector of length {n}, got {a.shape}")
        grad_w = self.element_gradients(a)
        # column j of the element block: w * n . (grad l_j x grad omega)
        col = self._weight[:, None] * np.einsum(
            "ed,ejd->ej", self._normals, np.cross(self._grads, grad_w[:, None, :]))
        local = np.broadcast_to(col[:, None, :], (len(col), 3, 3))
        return self.space._scatter(np.ascontiguousarray(local))


def assemble_ns_poisson_tensor(space: P1Space, a: np.ndarray) -> sp.csr_matrix:
    return BracketTensor(space).matrix(np.asarray(a, dtype=float))
