"""Monte Carlo maximum likelihood for spatial GLMMs with dense covariance."""

from .covariance import CovarianceBundle, CovarianceParams, build_bundle, gaussian_logdensity, matern1
from .estimator import SpatialGLMM
from .exceptions import NumericalError
from .fitter import FitConfig, FitResult, fit, initial_values, random_effect_summary
from .model import (
    Family,
    FamilyEval,
    ModelData,
    check_model_data,
    conditional_log_lik,
    family_eval,
    glm_fit,
    linear_predictor,
    working_weights,
)
from .newton import beta_step, gls_standard_errors, theta_score_and_information, theta_step
from .sampling import (
    ProposalDistribution,
    SampleSet,
    draw_samples,
    importance_weights,
    posterior_mode_irls,
)
from .simulate import (
    ScenarioSpec,
    SummaryRow,
    run_replications,
    simulate_scenario,
    summarize_results,
)
from .stopping import (
    IterationRecord,
    SampleSizeConfig,
    StoppingConfig,
    delta_loglik_stats,
    expected_convergence_time,
    mc_error_and_sample_size,
    stopping_decision,
)

__version__ = "0.1.0"

__all__ = [
    "CovarianceBundle",
    "CovarianceParams",
    "Family",
    "FamilyEval",
    "FitConfig",
    "FitResult",
    "IterationRecord",
    "ModelData",
    "NumericalError",
    "ProposalDistribution",
    "SampleSet",
    "SampleSizeConfig",
    "ScenarioSpec",
    "SpatialGLMM",
    "StoppingConfig",
    "SummaryRow",
    "beta_step",
    "build_bundle",
    "check_model_data",
    "conditional_log_lik",
    "delta_loglik_stats",
    "draw_samples",
    "expected_convergence_time",
    "family_eval",
    "fit",
    "gaussian_logdensity",
    "glm_fit",
    "gls_standard_errors",
    "importance_weights",
    "initial_values",
    "linear_predictor",
    "matern1",
    "mc_error_and_sample_size",
    "posterior_mode_irls",
    "random_effect_summary",
    "run_replications",
    "simulate_scenario",
    "stopping_decision",
    "summarize_results",
    "theta_score_and_information",
    "theta_step",
    "working_weights",
]
