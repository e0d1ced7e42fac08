"""Hierarchical heavy-tailed distribution families and their fitting pipeline.

The package has five layers, each usable on its own:

- :mod:`htheory.special` - scalar Meijer G-functions by Mellin-Barnes
  contour quadrature (the numerical core).
- :mod:`htheory.distributions` - gamma-class and inverse-gamma-class
  background / signal densities, moments, samplers, tail asymptotes.
- :mod:`htheory.ensembles` - Wishart and inverse-Wishart conditional chains,
  multivariate return generators, determinant and dimensional-reduction
  identities.
- :mod:`htheory.sde` - the stochastic hierarchy of mean-reverting variance
  levels (Euler-Maruyama).
- :mod:`htheory.pipeline` - the empirical workflow: returns, whitening,
  aggregation, windowed variance, KL model fitting and selection.

A command-line front end lives in :mod:`htheory.cli` (``htheory --help``).
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    AccuracyError,
    DataError,
    DivergenceError,
    DomainError,
    FitFailureError,
    HTheoryError,
    InsufficientDataError,
    ParameterError,
)
from .special import (
    ContourParams,
    GKernelSpec,
    inverted_spec,
    log_gamma_complex,
    meijer_g,
    meijer_g_log,
    power_shifted_spec,
)
from .ensembles import (
    CftCheck,
    ChainSpec,
    load_covariance,
    rank1_det_identity,
    sample_chain,
    sample_compound_returns,
    sample_inv_wishart_step,
    sample_returns,
    sample_wishart_step,
    save_covariance,
    synthetic_return_series,
    validate_covariance,
    verify_gamma_cft,
)
from .distributions import (
    DensityCurve,
    HModel,
    LognormalParams,
    ModelClass,
    TailAsymptote,
    background_density,
    background_log_density,
    background_moment,
    density_at_zero,
    density_curve,
    lognormal_limit,
    sample_background,
    sample_signal,
    signal_density,
    signal_density_quadrature,
    signal_log_density,
    signal_moment,
    tail_asymptote,
    tail_log_asymptote,
)
from .sde import (
    SdeParams,
    SdeResult,
    save_trajectories,
    simulate_hierarchy,
    stationary_check,
)
from .pipeline import (
    BackgroundSeries,
    FitEntry,
    FitOutcome,
    FitReport,
    FitResult,
    Histogram,
    KLResult,
    PriceTable,
    ReturnsMatrix,
    WindowScan,
    aggregate,
    correlation,
    fit_beta,
    kl_divergence,
    load_prices,
    log_returns,
    model_scan,
    normalize,
    optimal_window,
    recovered_return_check,
    return_histogram,
    rotate_whiten,
    run_fit,
    windowed_variance,
)

__all__ = [
    "__version__",
    "AccuracyError",
    "DataError",
    "DivergenceError",
    "DomainError",
    "FitFailureError",
    "HTheoryError",
    "InsufficientDataError",
    "ParameterError",
    "ContourParams",
    "GKernelSpec",
    "inverted_spec",
    "log_gamma_complex",
    "meijer_g",
    "meijer_g_log",
    "power_shifted_spec",
    "CftCheck",
    "ChainSpec",
    "load_covariance",
    "rank1_det_identity",
    "sample_chain",
    "sample_compound_returns",
    "sample_inv_wishart_step",
    "sample_returns",
    "sample_wishart_step",
    "save_covariance",
    "synthetic_return_series",
    "validate_covariance",
    "verify_gamma_cft",
    "DensityCurve",
    "HModel",
    "LognormalParams",
    "ModelClass",
    "TailAsymptote",
    "background_density",
    "background_log_density",
    "background_moment",
    "density_at_zero",
    "density_curve",
    "lognormal_limit",
    "sample_background",
    "sample_signal",
    "signal_density",
    "signal_density_quadrature",
    "signal_log_density",
    "signal_moment",
    "tail_asymptote",
    "tail_log_asymptote",
    "SdeParams",
    "SdeResult",
    "save_trajectories",
    "simulate_hierarchy",
    "stationary_check",
    "BackgroundSeries",
    "FitEntry",
    "FitOutcome",
    "FitReport",
    "FitResult",
    "Histogram",
    "KLResult",
    "PriceTable",
    "ReturnsMatrix",
    "WindowScan",
    "aggregate",
    "correlation",
    "fit_beta",
    "kl_divergence",
    "load_prices",
    "log_returns",
    "model_scan",
    "normalize",
    "optimal_window",
    "recovered_return_check",
    "return_histogram",
    "rotate_whiten",
    "run_fit",
    "windowed_variance",
]
