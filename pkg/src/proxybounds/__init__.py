"""Partial identification and inference for moment models with ML-generated proxies.

The package tests whether a candidate parameter is compatible with a downstream
sample (covariates + proxy) and a validation sample (latent target + proxy) by
solving an unconditional optimal-transport criterion through its sieve dual, and
runs a resampling-free cross-fitted test on top of it.
"""

from .model import (
    AugmentedPoint,
    DimensionError,
    DownstreamSample,
    LinearRegressionModel,
    MomentModel,
    ValidationSample,
    eval_augmented,
    eval_moment,
    load_downstream_csv,
    load_validation_csv,
)
from .otlp import Coupling, DiscreteMarginal, maxmin_oracle, solve_primal_ot
from .sieve import SieveSpec, make_sieve
from .dual import (
    DualSolution,
    InnerSupport,
    MultiplierBall,
    SolverConfig,
    inner_inf,
    multi_marginal_dual_value,
    sieve_dual_value,
    sieve_dual_value_onesided,
)
from .inference import (
    FoldAssignment,
    InferenceConfig,
    NormalizationResult,
    TestReport,
    cross_fit_test,
    f_cdf,
    naive_f_test,
    normal_cdf,
    split_folds,
    step1_normalize,
)
from .dgp import (
    DgpConfig,
    LassoModel,
    calibrate_kappa0,
    generate,
    make_proxy,
    make_stratum,
    train_lasso,
)
from .harness import (
    ExperimentPlan,
    GridScan,
    RejectionTable,
    compare_sieve_orders,
    run_grid_scan,
    run_size_study,
)

__all__ = [
    "AugmentedPoint",
    "Coupling",
    "DgpConfig",
    "DimensionError",
    "DiscreteMarginal",
    "DownstreamSample",
    "DualSolution",
    "ExperimentPlan",
    "FoldAssignment",
    "GridScan",
    "InferenceConfig",
    "InnerSupport",
    "LassoModel",
    "LinearRegressionModel",
    "MomentModel",
    "MultiplierBall",
    "NormalizationResult",
    "RejectionTable",
    "SieveSpec",
    "SolverConfig",
    "TestReport",
    "ValidationSample",
    "calibrate_kappa0",
    "compare_sieve_orders",
    "cross_fit_test",
    "eval_augmented",
    "eval_moment",
    "f_cdf",
    "generate",
    "inner_inf",
    "load_downstream_csv",
    "load_validation_csv",
    "make_proxy",
    "make_sieve",
    "make_stratum",
    "maxmin_oracle",
    "multi_marginal_dual_value",
    "naive_f_test",
    "normal_cdf",
    "run_grid_scan",
    "run_size_study",
    "sieve_dual_value",
    "sieve_dual_value_onesided",
    "solve_primal_ot",
    "split_folds",
    "step1_normalize",
    "train_lasso",
]
