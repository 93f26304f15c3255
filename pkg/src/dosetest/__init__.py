"""Specification testing for continuous treatment effect models.

The pipeline: entropy-balanced stabilized weights over expanding sieve moment
conditions, a parametric dose-response fit for average or quantile
functionals, Cramer-von Mises / Kolmogorov-Smirnov statistics of the weighted
empirical process, and a Gaussian-multiplier approximation of their null
distribution.
"""

__version__ = "0.1.0"

from .balance import BalanceFit, dual_gradient, dual_objective, fit_weights
from .basis import BasisFamily, BasisKind, Composition, SieveSpec, eval_u, eval_u_many, eval_v, eval_v_many
from .data import BoxCoxParams, Dataset, Observation, boxcox, boxcox_outcome, boxcox_search, load_csv
from .dose_response import (DoseResponseModel, InstrumentSpec, ResidualSpec, ThetaFit, fit_theta,
                            moment_vector)
from .errors import (ConditioningError, ConfigurationError, ConvergenceError, DataError,
                     DoseTestError, FileError, ParseError, UnsupportedOperationError)
from .influence import BootstrapResult, InfluenceComponents, estimate_influence, multiplier_bootstrap
from .model_select import CVResult, cross_validate, default_grid
from .pipeline import RunConfig, TestRun, run_specification_test
from .simulate import (DgpId, DgpSpec, GeneratedSample, McCase, McReport, efficiency_experiment,
                       generate, infeasible_statistic, local_power_curve, power_cases, run_table,
                       sizes_cases, stabilized_weights_truth)
from .teststat import TestStatistics, WeightFunctionSpec, compute_statistics, j_process, weight_fn

__all__ = [
    "__version__",
    "BalanceFit", "dual_gradient", "dual_objective", "fit_weights",
    "BasisFamily", "BasisKind", "Composition", "SieveSpec",
    "eval_u", "eval_u_many", "eval_v", "eval_v_many",
    "BoxCoxParams", "Dataset", "Observation", "boxcox", "boxcox_outcome",
    "boxcox_search", "load_csv",
    "DoseResponseModel", "InstrumentSpec", "ResidualSpec", "ThetaFit",
    "fit_theta", "moment_vector",
    "ConditioningError", "ConfigurationError", "ConvergenceError", "DataError",
    "DoseTestError", "FileError", "ParseError", "UnsupportedOperationError",
    "BootstrapResult", "InfluenceComponents", "estimate_influence", "multiplier_bootstrap",
    "CVResult", "cross_validate", "default_grid",
    "RunConfig", "TestRun", "run_specification_test",
    "DgpId", "DgpSpec", "GeneratedSample", "McCase", "McReport",
    "efficiency_experiment", "generate", "infeasible_statistic", "local_power_curve",
    "power_cases", "run_table", "sizes_cases", "stabilized_weights_truth",
    "TestStatistics", "WeightFunctionSpec", "compute_statistics", "j_process", "weight_fn",
]
