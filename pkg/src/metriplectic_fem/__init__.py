"""Structure-preserving P1 finite elements for Hamiltonian and metriplectic
evolution equations, with implicit midpoint and AVF time integration."""

from .assembly import (BracketTensor, P1Space, assemble_advection_1d, assemble_mass,
                       assemble_ns_poisson_tensor, assemble_stiffness, assemble_trilinear_kdv)
from .core import (MetriplecticSystem, State, check_equilibrium, check_null_conditions,
                   double_bracket_metric, metric_bracket_N, poisson_bracket_N, rhs)
from .diagnostics import (ConvergenceTable, DiagnosticsRecord, entropy_residual, ns_invariants,
                          rel_l2_error)
from .integrators import (GenericStepper, KdvStepper, NsStepper, SchemeId, TimeGrid, kdv_step, ns_step,
                          step_avf_generic, step_midpoint_generic)
from .linalg import (FixedPointConfig, FixedPointError, LinearSolveError, TrilinearForm,
                     fixed_point_solve, solve_saddle_zero_mean, solve_spd)
from .mesh import Mesh1D, TriMesh, build_icosphere, build_periodic_interval, build_torus_mesh
from .models import (KdvParams, NsParams, PointVortexConfig, advection_diffusion_system, kdv_system,
                     ns_sphere_system, ns_torus_system, point_vortex_ic, soliton_exact,
                     sphere_harmonic_exact, walsh_exact)
from .simulation import RunConfig, load_config, load_preset, run_convergence_study, simulate

__version__ = "0.1.0"
