"""Monte Carlo American option pricing with Malliavin-weight continuation
estimators, closed-form conditioning, and optimal quotient sample splits."""

from .bench import PriceTable, RunConfig, run, scaling_report, sweep
from .kernels import (
    DiagonalKernelParams,
    RegressionBlocks,
    conditioned_continuation,
    denominator_closed_form,
    kernel_h,
    kernel_second_moment,
    regression_blocks,
    residual_conditional_mc,
)
from .market_model import AssetPaths, TimeGrid, TriangularVol, build_vol, simulate_paths
from .pricer import (
    Payoff,
    PriceEstimate,
    conditional_expectation_check,
    evaluate_payoff,
    european_value,
    geometric_equivalent_1d,
    lognormal_conditional_put,
    price_ls,
    price_mcm,
    price_tree_1d,
    tree_american_put,
)
from .ratio import (
    QuotientPlan,
    QuotientStats,
    calibrate_m1,
    calibrate_m2,
    optimal_plan,
    quotient_estimate,
    sigma1_of_lambda,
    sigma2_of_lambda,
    stats_from_samples,
)
from .rng import replication_seed, splitmix64, stream_normals
from .weights import (
    compute_pi,
    compute_pi_covariance,
    gamma_bruteforce,
    gamma_recursive,
    path_weights,
    raw_continuation,
)

__version__ = "0.1.0"

__all__ = [
    "AssetPaths",
    "DiagonalKernelParams",
    "Payoff",
    "PriceEstimate",
    "PriceTable",
    "QuotientPlan",
    "QuotientStats",
    "RegressionBlocks",
    "RunConfig",
    "TimeGrid",
    "TriangularVol",
    "build_vol",
    "calibrate_m1",
    "calibrate_m2",
    "compute_pi",
    "compute_pi_covariance",
    "conditional_expectation_check",
    "conditioned_continuation",
    "denominator_closed_form",
    "evaluate_payoff",
    "european_value",
    "gamma_bruteforce",
    "gamma_recursive",
    "geometric_equivalent_1d",
    "kernel_h",
    "kernel_second_moment",
    "lognormal_conditional_put",
    "optimal_plan",
    "path_weights",
    "price_ls",
    "price_mcm",
    "price_tree_1d",
    "quotient_estimate",
    "raw_continuation",
    "regression_blocks",
    "replication_seed",
    "residual_conditional_mc",
    "run",
    "scaling_report",
    "sigma1_of_lambda",
    "sigma2_of_lambda",
    "simulate_paths",
    "splitmix64",
    "stats_from_samples",
    "stream_normals",
    "sweep",
    "tree_american_put",
]
