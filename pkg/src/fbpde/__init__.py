"""fbpde: a desk-scale laboratory for forward-backward diffusion equations.

The package builds, solves, perturbs and verifies the objects needed to
manufacture approximate Lipschitz solutions of u_t = div(A(Du)) with a
non-monotone flux: diffusion profiles and their parabolic surrogates, a
Neumann finite-volume solver, a right inverse of the divergence on
boxes, rank-one connection geometry, and a finite-stage oscillation
pipeline with measurable residuals.
"""

from . import errors
from .profiles import (
    Profile,
    branch_inverse,
    critical_points,
    custom_from_table,
    eval_flux,
    hoellig_piecewise_linear,
    load_profile_file,
    perona_malik_exp,
    perona_malik_rational,
    uniqueness_threshold,
    validate_hypotheses,
)

__all__ = [
    "errors",
    "Profile",
    "branch_inverse",
    "critical_points",
    "custom_from_table",
    "eval_flux",
    "hoellig_piecewise_linear",
    "load_profile_file",
    "perona_malik_exp",
    "perona_malik_rational",
    "uniqueness_threshold",
    "validate_hypotheses",
]

__version__ = "0.1.0"
