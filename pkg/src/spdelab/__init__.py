"""Monte Carlo simulator and verification harness for the stochastic
heat/Burgers equation driven by space-time white noise.

Layout:

    kernels   heat Green kernels (whole line, Dirichlet) and their norms
    noise     reproducible Brownian-sheet increments per replica
    solver    finite-difference time stepping, frozen-coefficient runs
    analysis  increments, Besov surrogate, KDE, exponent fits
    harness   configs, presets, parallel execution, reports
"""

from .analysis import (
    ApproxErrorFit,
    BesovSplit,
    DegenerateDistributionError,
    DensityEstimate,
    EnsembleSamples,
    HoelderFit,
    MomentSup,
    SmoothingFit,
    TestFunction,
    approx_error_curve,
    besov_functional,
    cos_fn,
    default_besov_lags,
    hoelder_fit,
    kde,
    moment_sup,
    nth_increment,
    sin_fn,
    smoothing_probe,
    weierstrass_fn,
)
from .harness import (
    AnalysisRequest,
    ConfigError,
    ExperimentAbortedError,
    ExperimentConfig,
    Report,
    build_config,
    parse_config,
    preset,
    preset_document,
    preset_names,
    run_experiment,
)
from .kernels import (
    Domain,
    KernelSpec,
    QuadratureAccuracyError,
    g1_eval,
    g2_eval,
    kernel_deriv_l1,
    kernel_dy_eval,
    kernel_space_l2,
    time_integrated_l2,
    weighted_time_integrated_l2,
)
from .noise import SeedSpec, StreamTag, derive_stream, sample_block, sample_slice
from .solver import (
    BlowUpError,
    DomainSpec,
    DriftSpec,
    EnsembleResult,
    FieldState,
    FrozenPair,
    GridAlignmentError,
    InitialCondition,
    ModelSpec,
    Scheme,
    SigmaSpec,
    SpaceTimeGrid,
    TrajectoryRecord,
    conditional_variance,
    simulate,
    simulate_ensemble,
    simulate_frozen,
    simulate_frozen_ensemble,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisRequest",
    "ApproxErrorFit",
    "BesovSplit",
    "BlowUpError",
    "ConfigError",
    "DegenerateDistributionError",
    "DensityEstimate",
    "Domain",
    "DomainSpec",
    "DriftSpec",
    "EnsembleResult",
    "EnsembleSamples",
    "ExperimentAbortedError",
    "ExperimentConfig",
    "FieldState",
    "FrozenPair",
    "GridAlignmentError",
    "HoelderFit",
    "InitialCondition",
    "KernelSpec",
    "ModelSpec",
    "MomentSup",
    "QuadratureAccuracyError",
    "Report",
    "Scheme",
    "SeedSpec",
    "SigmaSpec",
    "SmoothingFit",
    "SpaceTimeGrid",
    "StreamTag",
    "TestFunction",
    "TrajectoryRecord",
    "approx_error_curve",
    "besov_functional",
    "build_config",
    "conditional_variance",
    "cos_fn",
    "default_besov_lags",
    "derive_stream",
    "g1_eval",
    "g2_eval",
    "hoelder_fit",
    "kde",
    "kernel_deriv_l1",
    "kernel_dy_eval",
    "kernel_space_l2",
    "moment_sup",
    "nth_increment",
    "parse_config",
    "preset",
    "preset_document",
    "preset_names",
    "run_experiment",
    "sample_block",
    "sample_slice",
    "simulate",
    "simulate_ensemble",
    "simulate_frozen",
    "simulate_frozen_ensemble",
    "sin_fn",
    "smoothing_probe",
    "step",
    "time_integrated_l2",
    "weighted_time_integrated_l2",
    "weierstrass_fn",
    "__version__",
]
