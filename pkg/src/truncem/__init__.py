"""Population EM for symmetric two-component Gaussian mixtures under truncation."""
__version__ = "0.1.0"

from .model import (
    AnnulusUnion,
    Box,
    ConstantOne,
    HalfSpace,
    MixtureParams,
    SoftFunction,
    SoftLogistic,
    SoftRamp,
    SoftStep,
    Truncation,
    Union,
    truncation_from_config,
    validate_symmetry,
)
from .quad import QuadConfig, expect, survival_mass
from .em import EMContext, EMTrajectory, em_step, fixed_point_residual, run_em, self_moment, target_moment
from .analysis import JacobianReport, d_cross_moment_lambda, d_cross_moment_mu, d_self_moment, em_jacobian
from .landscape import (
    FixedPointSet,
    basin_sample,
    multistart_fixed_points,
    resolve_mu_for_fixed_point,
    scan_fixed_points_1d,
    vector_field_2d,
)
from .rates import (
    bracket_check,
    contraction_profile,
    denominator_identity_check,
    fkg_monotone_check,
    fkg_quantitative_check,
    local_rate_check,
    numerator_bound_eval,
)
