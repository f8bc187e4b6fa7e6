"""Weighted conformal prediction when an ML agent steers its own data.

An agent that queries where its model looks promising makes every later
observation depend on the earlier ones — a multistep feedback loop that
breaks the exchangeability behind standard conformal intervals.  This
package computes the permutation weights that restore coverage (exactly,
or through a tunable-depth recursion), assembles weighted split and full
conformal intervals plus the usual baselines, and ships a simulation
harness with a CLI for running seeded, fully reproducible experiments.
"""

from .core import (
    Bag,
    LabeledPoint,
    NONINFORMATIVE_INTERVAL,
    PredictionInterval,
    WeightedScoreDistribution,
    interval_from_residual_quantile,
    weighted_quantile,
)
from .errors import (
    AgentcpError,
    BoundInfeasibleError,
    ComplexityCapError,
    ConfigError,
    DegenerateDensityError,
    NumericalError,
    ParameterError,
    ShapeError,
)
from .weights import (
    BRUTE_FORCE_CAP,
    DensityEvaluator,
    JointDensity,
    TabularInteractionEvaluator,
    UniformEvaluator,
    WeightVector,
    brute_force_weights,
    factorized_joint_density,
    mfcs_dstep_weights,
    mfcs_exact_weights,
    uniform_weights,
)
from .predictors import (
    GaussianProcessModel,
    RidgeModel,
    gp_fit,
    gp_fit_predict,
    ridge_fit,
    ridge_residual_affine,
    ridge_residual_affine_all,
)
from .agents import Pool, QueryDistribution, bounded_query, sample_query, softmax_query
from .conformal import (
    AciState,
    FullConditioningEvaluator,
    LabelGridSet,
    SplitCalibrationState,
    SplitConditioningEvaluator,
    aci_interval,
    aci_update,
    full_cp_set_ridge,
    make_query_point,
    mfcs_split_interval,
    one_step_fcs_interval,
    split_calibration_state,
    split_cp_interval,
    standard_split_interval,
)
from .sim import (
    ExperimentConfig,
    StepRecord,
    SummaryRow,
    aggregate,
    biased_iid_init,
    config_from_mapping,
    expand_methods,
    make_combinatorial_pool,
    parse_seed_range,
    principal_direction,
    run_active_learning_experiment,
    run_design_experiment,
    run_experiment,
    uniform_iid_init,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core
    "Bag",
    "LabeledPoint",
    "NONINFORMATIVE_INTERVAL",
    "PredictionInterval",
    "WeightedScoreDistribution",
    "interval_from_residual_quantile",
    "weighted_quantile",
    # errors
    "AgentcpError",
    "BoundInfeasibleError",
    "ComplexityCapError",
    "ConfigError",
    "DegenerateDensityError",
    "NumericalError",
    "ParameterError",
    "ShapeError",
    # weights
    "BRUTE_FORCE_CAP",
    "DensityEvaluator",
    "JointDensity",
    "TabularInteractionEvaluator",
    "UniformEvaluator",
    "WeightVector",
    "brute_force_weights",
    "factorized_joint_density",
    "mfcs_dstep_weights",
    "mfcs_exact_weights",
    "uniform_weights",
    # predictors
    "GaussianProcessModel",
    "RidgeModel",
    "gp_fit",
    "gp_fit_predict",
    "ridge_fit",
    "ridge_residual_affine",
    "ridge_residual_affine_all",
    # agents
    "Pool",
    "QueryDistribution",
    "bounded_query",
    "sample_query",
    "softmax_query",
    # conformal
    "AciState",
    "FullConditioningEvaluator",
    "LabelGridSet",
    "SplitCalibrationState",
    "SplitConditioningEvaluator",
    "aci_interval",
    "aci_update",
    "full_cp_set_ridge",
    "make_query_point",
    "mfcs_split_interval",
    "one_step_fcs_interval",
    "split_calibration_state",
    "split_cp_interval",
    "standard_split_interval",
    # sim
    "ExperimentConfig",
    "StepRecord",
    "SummaryRow",
    "aggregate",
    "biased_iid_init",
    "config_from_mapping",
    "expand_methods",
    "make_combinatorial_pool",
    "parse_seed_range",
    "principal_direction",
    "run_active_learning_experiment",
    "run_design_experiment",
    "run_experiment",
    "uniform_iid_init",
]
