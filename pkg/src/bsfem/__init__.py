"""Superposed-mesh (s-version) finite elements for the 3D Poisson
problem, with B-spline or Lagrange global bases and Lagrange local
bases, plus the verification protocol built around them."""

from .quadrature import GaussRule1D, GaussRule3D, gauss_rule, tensor3
from .basis import (LagrangeBasis1D, KnotVector, BSplineBasis1D, Basis3D,
                    lagrange_eval, bspline_eval, basis3d_eval)
from .mesh import (GlobalMesh, LocalMesh, SuperposedModel, build_global,
                   build_local, build_model, default_local_box,
                   locate_in_global, global_basis_at, mesh_summary)
from .assembly import (SymmetricSparseMatrix, DofPartition, LoadVector,
                       assemble_kgg, assemble_kll, assemble_coupling,
                       finalize_system, assemble_system, build_partition)
from .solver import (CgSettings, SolveReport, SpdVerdict, cg_solve,
                     diagonal_precondition, cholesky_spd_test)
from .verify import (PoissonProblem, manufactured_case, constant_case,
                     exact_solution, source_term, quadrature_policy,
                     solve_model, l2_error, run_point, convergence_study,
                     StudyConfig, quadrature_sensitivity,
                     error_distribution_experiment, fit_slope)

__version__ = "0.1.0"
