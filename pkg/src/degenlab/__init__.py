"""Numerical verification of weighted mixed-norm estimates for fully degenerate
parabolic equations with time-dependent coefficients."""

from .errors import (
    AdmissibilityError,
    ConfigError,
    DegenlabError,
    FloorTooLargeError,
    NotPSDError,
    OutOfRangeError,
    QueryOutsideGridError,
    SingularEvaluationError,
)
from .field import SpaceTimeField, SpatialGrid, hessian, hessian_frobenius, lp_norm, solve_exact, transform_reduce, inverse_transform_reduce
from .forcing import GaussianForcing, zero_forcing
from .paths import PathEnsemble, SplitEnsemble, mc_solution, simulate, split_simulate
from .profiles import CoefficientProfile, DegeneracyTrace, PrimitiveTerm, alpha, beta, delta_of, matrix_sqrt_psd
from .verify import EstimateReport, rhs_weighted, scan_profiles, scan_rescaling
from .weights import Weight, aq_constant, weight_at_alpha

__version__ = "0.1.0"
