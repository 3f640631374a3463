"""Model systems (advection-diffusion, dissipative KdV, 2D vorticity) and
their reference solutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import (BracketTensor, P1Space, assemble_advection_1d, assemble_mass,
                       assemble_stiffness, assemble_trilinear_kdv)
from .core import MetriplecticSystem
from .linalg import TrilinearForm, ZeroMeanPoissonSolver, csr, solve_spd

WALSH_LAMBDA = 25.0


@dataclass(frozen=True)
class KdvParams:
    alpha: float = 6.0
    eta: float = 1.0
    nu: float = 0.0
    domain_length: float = 20.0 * np.pi

    def __post_init__(self):
        if not (self.alpha > 0 and self.eta > 0):
            raise ValueError("KdV needs alpha > 0 and eta > 0")
        if self.nu < 0:
            raise ValueError("KdV viscosity must be non-negative")


@dataclass(frozen=True)
class NsParams:
    nu: float = 0.0
    geometry: str = "torus"

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("viscosity must be non-negative")
        if self.geometry not in ("torus", "sphere"):
            raise ValueError(f"unknown geometry {self.geometry!r}")


@dataclass(frozen=True)
class PointVortexConfig:
    """``intensity`` is the nodal vorticity of one point vortex.

    With ``regularisation="nodal"`` each vortex sets the coefficient of the
    vertex nearest to its centre (the P1 analogue of a Dirac mass).  With
    ``"gaussian"`` the same circulation, ``intensity * |Omega| / N``, is
    spread as a geodesic Gaussian of standard deviation
    ``regularisation_width`` (default: twice the mean edge length) and
    L2-projected.
    """

    n_vortices: int = 512
    intensity: float = 400.0
    seed: int = 0
    regularisation: str = "gaussian"
    regularisation_width: float | None = None

    def __post_init__(self):
        if self.n_vortices <= 0 or self.n_vortices % 2:
            raise ValueError(f"n_vortices must be a positive even number, got {self.n_vortices}")
        if self.regularisation not in ("gaussian", "nodal"):
            raise ValueError(f"unknown regularisation {self.regularisation!r}")
        if self.regularisation_width is not None and not self.regularisation_width > 0:
            raise ValueError("regularisation_width must be positive")


@dataclass(frozen=True)
class KdvOperators:
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    advection: sp.csr_matrix
    trilinear: TrilinearForm


@dataclass
class NsOperators:
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    bracket: BracketTensor
    stream: ZeroMeanPoissonSolver

    def stream_coefficients(self, a: np.ndarray) -> np.ndarray:
        """``b`` with ``K b = M a`` and zero mean; ``b`` represents ``-Psi``."""
        return self.stream.solve(self.mass @ a)


def kdv_operators(space: P1Space) -> KdvOperators:
    return KdvOperators(assemble_mass(space), assemble_stiffness(space),
                        assemble_advection_1d(space), assemble_trilinear_kdv(space))


def kdv_system(params: KdvParams, space: P1Space, ops: KdvOperators | None = None) -> MetriplecticSystem:
    """``M a' = -A b - nu K a`` with ``M b = (alpha/2) R(a, a) - eta K a``.

    Entropy ``S = -1/2 a^T M a`` with metric ``G = K`` (PSD); the mass
    ``1^T M a`` is the declared Casimir.
    """
    ops = ops or kdv_operators(space)
    M, K, A, R = ops.mass, ops.stiffness, ops.advection, ops.trilinear
    alpha, eta, nu = params.alpha, params.eta, params.nu
    ones_m = M @ np.ones(space.n_dofs)
    minus_a = csr(-A)

    def grad_h(a):
        return 0.5 * alpha * R.contract(a, a) - eta * (K @ a)

    def h_value(a):
        return alpha / 6.0 * R.triple(a) - 0.5 * eta * float(a @ (K @ a))

    system = MetriplecticSystem(
        name="kdv",
        mass=M,
        j_builder=lambda a: minus_a,
        g_builder=lambda a: K,
        grad_h=grad_h,
        grad_s=lambda a: -(M @ a),
        h_value=h_value,
        s_value=lambda a: -0.5 * float(a @ (M @ a)),
        nu=nu,
        g_sign=1,
        casimirs=(("mass", lambda a: ones_m),),
        linear_part=csr(-nu * K),
        space=space,
    )
    system.force_fn = lambda a: -(A @ system.solve_mass(grad_h(a))) - nu * (K @ a)
    return system


def soliton_exact(x, t):
    """Travelling one-soliton of ``u_t + 6 u u_x + u_xxx = 0``."""
    return 1.0 / np.cosh(np.sqrt(2.0) / 2.0 * (np.asarray(x) - 5.0 * np.pi - 2.0 * t)) ** 2


def advection_diffusion_system(v: float, nu: float, space: P1Space) -> MetriplecticSystem:
    """``u_t + v u_x = nu u_xx`` with ``J = -v d_x``, ``G = d_xx`` and
    ``H = S = 1/2 int u^2``."""
    M = assemble_mass(space)
    K = assemble_stiffness(space)
    A = assemble_advection_1d(space)
    j = csr(-v * A)
    g = csr(-K)
    linear = csr(-v * A - nu * K)
    ones_m = M @ np.ones(space.n_dofs)
    energy = lambda a: 0.5 * float(a @ (M @ a))  # noqa: E731
    return MetriplecticSystem(
        name="advdiff",
        mass=M,
        j_builder=lambda a: j,
        g_builder=lambda a: g,
        grad_h=lambda a: M @ a,
        grad_s=lambda a: M @ a,
        h_value=energy,
        s_value=energy,
        nu=nu,
        g_sign=-1,
        casimirs=(("mass", lambda a: ones_m),),
        linear_part=linear,
        force_fn=lambda a: linear @ a,
        space=space,
    )


def plane_wave_exact(x, t, v: float, nu: float, wave_number: float):
    return np.exp(-nu * wave_number**2 * t) * np.sin(wave_number * (np.asarray(x) - v * t))


def ns_operators(space: P1Space) -> NsOperators:
    M = assemble_mass(space)
    K = assemble_stiffness(space)
    return NsOperators(M, K, BracketTensor(space), ZeroMeanPoissonSolver(K, M))


def ns_system(params: NsParams, space: P1Space, ops: NsOperators | None = None) -> MetriplecticSystem:
    """Vorticity form ``M a' = J(a) b - nu K a``, ``K b = M a``.

    ``H = 1/2 a^T M b`` (kinetic energy), ``S = E = 1/2 a^T M a``
    (enstrophy) with metric ``G = -K``.  Identities are stated on the
    zero-total-vorticity phase space, which ``admissible`` projects onto.
    """
    if space.geometry != params.geometry:
        raise ValueError(f"space geometry {space.geometry!r} does not match {params.geometry!r}")
    ops = ops or ns_operators(space)
    M, K = ops.mass, ops.stiffness
    nu = params.nu
    ones = np.ones(space.n_dofs)
    ones_m = M @ ones
    measure = float(ones_m.sum())
    minus_k = csr(-K)

    def h_value(a):
        return 0.5 * float(a @ (M @ ops.stream_coefficients(a)))

    return MetriplecticSystem(
        name=f"ns-{params.geometry}",
        mass=M,
        j_builder=ops.bracket.matrix,
        g_builder=lambda a: minus_k,
        grad_h=lambda a: M @ ops.stream_coefficients(a),
        grad_s=lambda a: M @ a,
        h_value=h_value,
        s_value=lambda a: 0.5 * float(a @ (M @ a)),
        nu=nu,
        g_sign=-1,
        casimirs=(("enstrophy", lambda a: M @ a), ("total_vorticity", lambda a: ones_m)),
        metriplectic=True,
        metric_null_target=lambda a: -a,
        admissible=lambda a: a - (ones_m @ a) / measure,
        linear_part=csr(-nu * K),
        force_fn=lambda a: ops.bracket.apply(a, ops.stream_coefficients(a)) - nu * (K @ a),
        space=space,
    )


def ns_torus_system(params: NsParams, space: P1Space, ops: NsOperators | None = None) -> MetriplecticSystem:
    return ns_system(NsParams(params.nu, "torus"), space, ops)


def ns_sphere_system(params: NsParams, space: P1Space, ops: NsOperators | None = None) -> MetriplecticSystem:
    return ns_system(NsParams(params.nu, "sphere"), space, ops)


def walsh_exact(x, y, t, nu):
    """Stream function and vorticity of the decaying Walsh eigenflow on
    ``[0, 2 pi]^2``; ``omega = -25 Psi``."""
    x = np.asarray(x)
    y = np.asarray(y)
    psi = np.exp(-nu * WALSH_LAMBDA * t) * (
        0.25 * np.cos(3 * x) * np.sin(4 * y) - 0.2 * np.cos(5 * y) - 0.2 * np.sin(5 * x))
    return psi, -WALSH_LAMBDA * psi


def sphere_harmonic_exact(theta, phi, t, nu):
    """``Psi = 1/2 sin(theta) cos(phi) e^{-2 nu t}``, ``omega = -2 Psi``."""
    psi = 0.5 * np.sin(theta) * np.cos(phi) * np.exp(-2.0 * nu * t)
    return psi, -2.0 * psi


def cartesian_to_spherical(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Colatitude and longitude of the radial projection of ``points``."""
    r = np.linalg.norm(points, axis=-1)
    theta = np.arccos(np.clip(points[..., 2] / r, -1.0, 1.0))
    phi = np.arctan2(points[..., 1], points[..., 0])
    return theta, phi


def point_vortex_ic(config: PointVortexConfig, space: P1Space) -> np.ndarray:
    """Signed vortices placed uniformly at random on the sphere, half of
    each sign, corrected to exactly zero total vorticity."""
    if space.geometry != "sphere":
        raise ValueError("point vortices are defined on the sphere")
    rng = np.random.default_rng(config.seed)
    centres = rng.standard_normal((config.n_vortices, 3))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    signs = np.where(np.arange(config.n_vortices) % 2 == 0, 1.0, -1.0)

    n = space.n_dofs
    mass = assemble_mass(space)
    ones_m = mass @ np.ones(n)
    if config.regularisation == "nodal":
        nodes = space.dof_coords / np.linalg.norm(space.dof_coords, axis=1, keepdims=True)
        nearest = np.argmax(centres @ nodes.T, axis=1)
        a = np.zeros(n)
        np.add.at(a, nearest, config.intensity * signs)
        return a - (ones_m @ a) / ones_m.sum()

    sigma = config.regularisation_width or 2.0 * space.mesh.mean_edge_length()
    circulation = config.intensity * space.measure / n
    points, weights, basis = space.quadrature()
    unit = points / np.linalg.norm(points, axis=-1, keepdims=True)
    flat_pts = unit.reshape(-1, 3)
    flat_w = weights.ravel()
    load = np.zeros(n)
    for chunk in np.array_split(np.arange(config.n_vortices), max(1, config.n_vortices // 16)):
        cos_d = np.clip(flat_pts @ centres[chunk].T, -1.0, 1.0)
        g = np.exp(-np.arccos(cos_d) ** 2 / (2.0 * sigma**2))
        total = flat_w @ g
        field = (g * (signs[chunk] * circulation / total)).sum(axis=1).reshape(weights.shape)
        local = np.einsum("eq,ql->el", field * weights, basis)
        load += np.bincount(space.cells.ravel(), weights=local.ravel(), minlength=n)
    a = solve_spd(mass, load)
    return a - (ones_m @ a) / ones_m.sum()
