"""Periodic interval, flat torus and icosphere meshes.

Meshes are immutable value objects.  Triangle meshes keep the geometric
vertex table separate from the degree-of-freedom numbering so that the
torus can be triangulated with unwrapped coordinates while boundary
vertices are identified through ``periodic_map``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh1D:
    domain_length: float
    n_nodes: int
    node_coords: np.ndarray = field(repr=False)
    periodic: bool = True

    @property
    def h(self) -> float:
        return self.domain_length / self.n_nodes

    @property
    def n_dofs(self) -> int:
        return self.n_nodes

    @property
    def cells(self) -> np.ndarray:
        """Cell ``c`` spans ``node_coords[c]`` to ``node_coords[c] + h``; its
        right node wraps to 0 for the last cell."""
        left = np.arange(self.n_nodes)
        return np.stack([left, (left + 1) % self.n_nodes], axis=1)

    def cell_measures(self) -> np.ndarray:
        return np.full(self.n_nodes, self.h)


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    geometry_tag: str
    periodic_map: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_dofs(self) -> int:
        if self.periodic_map is None:
            return len(self.vertices)
        return int(self.periodic_map.max()) + 1

    @property
    def dof_triangles(self) -> np.ndarray:
        if self.periodic_map is None:
            return self.triangles
        return self.periodic_map[self.triangles]

    @property
    def dof_coords(self) -> np.ndarray:
        """One representative position per dof (the first geometric vertex
        mapped to it)."""
        if self.periodic_map is None:
            return self.vertices
        coords = np.empty((self.n_dofs, 3))
        # reversed so that the lowest geometric index wins
        idx = np.arange(len(self.vertices))[::-1]
        coords[self.periodic_map[idx]] = self.vertices[idx]
        return coords

    def triangle_normals(self) -> np.ndarray:
        """Unnormalised normals; their length is twice the triangle area."""
        p = self.vertices[self.triangles]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def triangle_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.triangle_normals(), axis=1)

    def cell_measures(self) -> np.ndarray:
        return self.triangle_areas()

    def edges(self) -> np.ndarray:
        """Unique undirected edges in dof numbering."""
        t = self.dof_triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.n_dofs - len(self.edges()) + len(self.triangles)

    def mean_edge_length(self) -> float:
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
        return float(lengths.mean())


def build_periodic_interval(domain_length: float, n_cells: int) -> Mesh1D:
    if not domain_length > 0:
        raise MeshError(f"domain_length must be positive, got {domain_length}")
    if int(n_cells) != n_cells or n_cells < 3:
        raise MeshError(f"n_cells must be an integer >= 3, got {n_cells}")
    n_cells = int(n_cells)
    h = domain_length / n_cells
    return Mesh1D(float(domain_length), n_cells, np.arange(n_cells) * h)


def build_torus_mesh(lx: float, ly: float, nx: int, ny: int) -> TriMesh:
    """Structured periodic triangulation of ``[0, lx] x [0, ly]``.

    Every grid quad is cut along its (i, j)-(i+1, j+1) diagonal, so each
    vertex has six incident triangles.  Geometric vertices live on the
    ``(nx + 1) x (ny + 1)`` grid; ``periodic_map`` folds them onto the
    ``nx * ny`` dofs numbered lexicographically (x fastest).
    """
    if nx < 3 or ny < 3:
        raise MeshError(f"torus mesh needs nx, ny >= 3, got ({nx}, {ny})")
    if not (lx > 0 and ly > 0):
        raise MeshError("torus side lengths must be positive")
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    g00 = j * (nx + 1) + i
    g10 = g00 + 1
    g01 = g00 + nx + 1
    g11 = g01 + 1
    lower = np.stack([g00, g10, g11], axis=1)
    upper = np.stack([g00, g11, g01], axis=1)
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    gi, gj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    periodic_map = ((gj % ny) * nx + (gi % nx)).ravel()
    return TriMesh(vertices, triangles, "torus", periodic_map)


_ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v, _ICOSAHEDRON_FACES.copy()


def build_icosphere(subdivisions: int) -> TriMesh:
    """Unit icosphere: each level splits every triangle into four through
    its edge midpoints, which are pushed back onto the sphere.  New
    vertices are appended in the order edges are first met, so numbering
    is deterministic."""
    if int(subdivisions) != subdivisions or subdivisions < 0:
        raise MeshError(f"subdivisions must be a non-negative integer, got {subdivisions}")
    verts, faces = _icosahedron()
    verts = list(verts)
    for _ in range(int(subdivisions)):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = cache.get(key)
            if idx is None:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                idx = cache[key] = len(verts) - 1
            return idx

        new_faces = np.empty((4 * len(faces), 3), dtype=np.int64)
        for n, (a, b, c) in enumerate(faces):
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces[4 * n:4 * n + 4] = [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    vertices = np.asarray(verts)
    # counter-clockwise with respect to the outward normal
    p = vertices[faces]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", normal, p.sum(axis=1)) < 0
    faces[flip] = faces[flip][:, ::-1]
    return TriMesh(vertices, faces.astype(np.int64), "sphere", None)


def domain_measure(mesh: Mesh1D | TriMesh) -> float:
    return float(np.sum(mesh.cell_measures()))


def write_mesh(path: str | Path, mesh: Mesh1D | TriMesh) -> None:
    """Plain-text dump: ``V F`` header, V lines ``x y z``, F lines of
    0-based vertex triples.  Interval meshes are written as segment pairs
    with the third index repeated."""
    if isinstance(mesh, Mesh1D):
        verts = np.stack([mesh.node_coords, np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes)], axis=1)
        cells = mesh.cells
        faces = np.column_stack([cells, cells[:, 1]])
    else:
        verts, faces = mesh.vertices, mesh.triangles
    with open(path, "w") as fh:
        fh.write(f"{len(verts)} {len(faces)}\n")
        for x, y, z in verts:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in faces:
            fh.write(f"{a} {b} {c}\n")


def read_mesh(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        nv, nf = (int(s) for s in fh.readline().split())
        verts = np.array([[float(s) for s in fh.readline().split()] for _ in range(nv)])
        faces = np.array([[int(s) for s in fh.readline().split()] for _ in range(nf)], dtype=np.int64)
    return verts.reshape(nv, 3), faces.reshape(nf, 3)
