"""Registered point processes: learning a shared temporal point process and
per-sequence time warps from idiosyncratically warped event sequences."""

from .core import (EventSequence, HawkesParams, PoissonBumpModel, hawkes_intensity,
                   neg_log_likelihood, poisson_intensity, warped_neg_log_likelihood)
from .errors import (DataFormatError, DescentFailure, DomainError, FormatVersionError,
                     ImpossibleEventError, StationarityError)
from .evaluate import (BootstrapConfig, distortion_error_experiment, holdout_loglik,
                       infectivity_matrix, kendall_tau, risk_over, risk_under)
from .mle import MleConfig, em_responsibilities, em_update, exp_compensator_integral, fit_hawkes_mle, fit_poisson_mle
from .register import RegistrationConfig, RegistrationResult, register, relative_estimation_error, total_loss
from .simulate import SyntheticDatasetSpec, make_synthetic_dataset, simulate_thinning, stitch, stitch_randomly
from .warp import (CosineWarpSpec, PiecewiseLinearWarp, distortion, generate_cosine_warp,
                   identity_deviation, transform_sequence, warp_eval, warp_inverse)
from .warpsolver import (RegularizerTerms, SurrogateCoefficients, WarpSolverConfig, solve_warp_subproblem,
                         surrogate_coefficients, surrogate_gradient, surrogate_objective)

__all__ = [
    "EventSequence",
    "HawkesParams",
    "PoissonBumpModel",
    "hawkes_intensity",
    "neg_log_likelihood",
    "poisson_intensity",
    "warped_neg_log_likelihood",
    "DataFormatError",
    "DescentFailure",
    "DomainError",
    "FormatVersionError",
    "ImpossibleEventError",
    "StationarityError",
    "BootstrapConfig",
    "distortion_error_experiment",
    "holdout_loglik",
    "infectivity_matrix",
    "kendall_tau",
    "risk_over",
    "risk_under",
    "MleConfig",
    "em_responsibilities",
    "em_update",
    "exp_compensator_integral",
    "fit_hawkes_mle",
    "fit_poisson_mle",
    "RegistrationConfig",
    "RegistrationResult",
    "register",
    "relative_estimation_error",
    "total_loss",
    "SyntheticDatasetSpec",
    "make_synthetic_dataset",
    "simulate_thinning",
    "stitch",
    "stitch_randomly",
    "CosineWarpSpec",
    "PiecewiseLinearWarp",
    "distortion",
    "generate_cosine_warp",
    "identity_deviation",
    "transform_sequence",
    "warp_eval",
    "warp_inverse",
    "RegularizerTerms",
    "SurrogateCoefficients",
    "WarpSolverConfig",
    "solve_warp_subproblem",
    "surrogate_coefficients",
    "surrogate_gradient",
    "surrogate_objective",
]

__version__ = "0.1.0"
