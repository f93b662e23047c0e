"""Asynchronous master-worker (1+lambda)-EA over bounded integer vectors,
with random-walk landscape features for choosing its mutation parameters."""

__version__ = "0.1.0"

from asyncea.search_space import (  # noqa: E402
    BoundsSpec,
    ConfigurationError,
    MutationParams,
    mutate,
    nroo_bounds,
    sobol_init,
)
from asyncea.problems import (  # noqa: E402
    FitnessProblem,
    LoadFollowingSurrogate,
    NKLandscape,
    Quantized,
    control_diagram_criterion,
    make_problem,
    nk_landscape,
    ps_insertion,
    quantize,
    tr_speed,
)
from asyncea.engine import LatencyModel, RunConfig, RunTrace, run_ea, run_sync_baseline  # noqa: E402
from asyncea.landscape import autocorrelation, autocorrelation_length, features, neutral_rate, random_walk  # noqa: E402
from asyncea.analysis import feature_performance_study, pearson_and_fit, run_grid, spearman  # noqa: E402
from asyncea.estimators import AsyncEA, LandscapeFeatureEstimator  # noqa: E402

__all__ = [
    "AsyncEA",
    "BoundsSpec",
    "ConfigurationError",
    "FitnessProblem",
    "LandscapeFeatureEstimator",
    "LatencyModel",
    "LoadFollowingSurrogate",
    "MutationParams",
    "NKLandscape",
    "Quantized",
    "RunConfig",
    "RunTrace",
    "autocorrelation",
    "autocorrelation_length",
    "control_diagram_criterion",
    "feature_performance_study",
    "features",
    "make_problem",
    "mutate",
    "neutral_rate",
    "nk_landscape",
    "nroo_bounds",
    "pearson_and_fit",
    "ps_insertion",
    "quantize",
    "random_walk",
    "run_ea",
    "run_grid",
    "run_sync_baseline",
    "sobol_init",
    "spearman",
    "tr_speed",
]
