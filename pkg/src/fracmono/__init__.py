"""Fractional powers of maximal monotone operators via the extension problem.

The package solves the singular second-order inclusion whose
Dirichlet-to-Neumann map realizes the fractional power A^s of a (possibly
nonlinear, multivalued) maximal monotone operator A, evaluates that map and
its resolvent, and evolves the contraction semigroup it generates.
"""

__version__ = "0.1.0"

from .hilbert import GridFunction, inner, hnorm, sobolev_mixed_norm, \
    weighted_l2_star_norm
from .mesh import (FracParams, TMesh, ZMesh, auto_zmesh, graded_zmesh,
                   pullback_to_t, t_of_z, z_of_t)
from .monops import (GridSpec, LerayLionsField, MonotoneOp, make_box,
                     make_linear_spd, make_plap_grid, make_power_prox,
                     make_scalar, minimal_selection, resolve, yosida)
from .extension import (DirichletBC, ExtensionProblem, ExtensionSolution,
                        RegularizationSchedule, RobinBC, SolverConfig,
                        audit_estimates, cauchy_bound_check, contraction_check,
                        solve)
from .dtn import DtNResult, apply_lambda_s, monotonicity_probe, resolve_lambda_s
from .semigroup import SemigroupTrajectory, evolve, step, trajectory_audit
from .verify import (NormalContraction, bessel_dtn_constant,
                     bessel_scalar_extension, brute_force_bvp,
                     check_complete_contraction, spectral_frac_power)

__all__ = [name for name in dir() if not name.startswith("_")]
