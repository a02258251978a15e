"""Confidence intervals, posteriors and multi-study fusion for infection fatality rates."""

from .bayes import (
    FLAT,
    HALDANE,
    JEFFREYS,
    BetaParams,
    GridCoverageError,
    GridDensity,
    GridSpec,
    ScalePrior,
    credible_interval,
    dressed_ratio_posterior,
    ratio_posterior,
)
from .bernoulli import PopulationSimConfig, corners_from_moments, correlation_range, run_population_sim
from .coverage import CoverageReport, coverage_simulation
from .intervals import (
    ConfidenceBelt,
    CountPair,
    IntervalEstimate,
    build_neyman_belt,
    clopper_pearson_interval,
    invert_belt,
    llr_interval_asymptotic,
    midp_interval,
    wald_interval,
    wilson_interval,
)
from .pipeline import StudyDataset, germany_extrapolation, moving_avg_deaths, run_pipeline
from .ratio import (
    BootstrapConfig,
    RatioCounts,
    asinh_ratio_interval,
    bootstrap_ratio_interval,
    conditional_ratio_interval,
    katz_log_interval,
    profile_llr_interval,
)
from .testerr import GLOBAL_TEST, TestCharacteristics, invert_prevalence, renormalize_lambda

__version__ = "0.1.0"
