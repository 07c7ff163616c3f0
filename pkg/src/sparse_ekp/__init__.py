"""Sparsity-promoting ensemble Kalman inversion with generalized-gamma hyperpriors."""
from .core import (
    DenseCovariance,
    DiagCovariance,
    Ensemble,
    ForwardModel,
    InverseProblem,
    LinearForward,
    NoiseModel,
    StreamKey,
    ensemble_stats,
    mahalanobis_sq,
    pseudoinverse,
    sample_gaussian,
    statistical_linearization,
)
from .driver import (
    OuterConfig,
    RunRecord,
    credible_intervals,
    linear_exact_alternation,
    metrics,
    relative_change_stop,
    run_outer,
)
from .hyperprior import (
    HyperParams,
    PenaltySpec,
    convexity_bound,
    hessian_quadform,
    objective_J,
    objective_Jp,
    theta_update_gengamma,
    theta_update_invgamma,
)
from .kalman import KalmanConfig, SeedContext, iekf_run, iekfsl_run, morozov_check

__version__ = "0.1.0"
