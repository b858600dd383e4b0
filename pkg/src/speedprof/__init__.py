"""speedprof: functional analysis of vehicle speed profiles.

Estimates a smooth, monotone distance function for each vehicle pass from
noisy position and speed samples, composes the space-indexed speed profile
v(x) = F'(F^-1(x)), registers profiles across passes by aligning stop
landmarks, and summarises a sample of profiles with functional boxplots
built on h-modal depth.
"""

from .smoothing import (
    ConditionWarning,
    DerivativeSplineSmoother,
    ObservationSet,
    SplineFit,
    VarianceEstimates,
    estimate_variances,
    evaluate,
    evaluate_derivative,
    fill_missing_channel,
    fit_scalar_spline,
    fit_spline,
    gcv_score,
    gml_score,
    hat_matrix,
    merge_channels,
    select_lambda,
    select_lambda_joint,
    semi_kernel,
    semi_kernel_partial_s,
    semi_kernel_partial_st,
    semi_kernel_partial_t,
)
from .monotone import (
    MonotoneFit,
    MonotoneSmoother,
    NonConvergenceWarning,
    evaluate_monotone,
    evaluate_monotone_derivative,
    fit_monotone,
    h_value,
    monotonize_spline,
)
from .profiles import (
    AnalyticCurve,
    CuspDiagnostic,
    PipelineStageError,
    SpeedProfile,
    SpeedProfilePipeline,
    compose_speed_profile,
    cusp_diagnostic,
    generalized_inverse,
    two_step_estimate,
)
from .registration import (
    LandmarkRegistration,
    WarpingFunction,
    apply_inverse_warp,
    apply_warp,
    build_warping,
    cross_sectional_mean,
    extract_landmarks,
    reference_landmarks,
)
from .depth import (
    FunctionalBoxplot,
    PointwiseBoxplots,
    default_bandwidth,
    functional_boxplot,
    h_modal_depth,
    l2_distance,
    pointwise_boxplots,
)
from .simulation import (
    MiseReport,
    SimulationConfig,
    TestFunction,
    TEST_FUNCTIONS,
    run_study,
    simulate_dataset,
    synthetic_pass,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
