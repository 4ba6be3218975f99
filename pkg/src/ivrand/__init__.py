"""Randomization-based inference for instrumental-variable effects in randomized trials."""

from ivrand.almost_exact import (
    QuadraticCoefficients,
    almost_exact_ci,
    closed_form_endpoints,
    compliance_threshold,
    delta_hat,
    quadratic_coefficients,
    solve_quadratic_leq,
)
from ivrand.asymptotic import bloom_ci, bloom_variance, c_factor, delta_rewrite_check, delta_variance, tsls_ci
from ivrand.core import (
    Diagnostics,
    InferenceResult,
    IntervalSet,
    IvDataset,
    MomentSummary,
    interval_contains,
    interval_length,
    validate_dataset,
)
from ivrand.covariate_adjust import adjusted_dataset, residualize
from ivrand.estimators import diff_in_means, instrument_t_stat, moment_summary, wald_estimate
from ivrand.exact import StudentizedNull, TestResult, adjusted_responses, exact_ci, permutation_pvalue
from ivrand.inversion import GridSpec
from ivrand.normal import norm_ppf, z_crit
from ivrand.permutation import PermutationEngine
from ivrand.rank import hodges_lehmann, rank_ci, rank_test_pvalue, wilcoxon_rank_sum
from ivrand.sensitivity import GammaModel, gamma_pvalue_bounds, gamma_sweep, sensitivity_value
from ivrand.sim_harness import (
    CoverageTable,
    SimulationConfig,
    correction_sweep,
    coverage_experiment,
    generate_onesided,
)

__version__ = "0.1.0"

__all__ = [
    "IvDataset",
    "IntervalSet",
    "MomentSummary",
    "Diagnostics",
    "InferenceResult",
    "validate_dataset",
    "interval_contains",
    "interval_length",
    "diff_in_means",
    "moment_summary",
    "wald_estimate",
    "instrument_t_stat",
    "norm_ppf",
    "z_crit",
    "QuadraticCoefficients",
    "quadratic_coefficients",
    "solve_quadratic_leq",
    "delta_hat",
    "closed_form_endpoints",
    "almost_exact_ci",
    "compliance_threshold",
    "delta_variance",
    "bloom_variance",
    "c_factor",
    "tsls_ci",
    "bloom_ci",
    "delta_rewrite_check",
    "PermutationEngine",
    "GridSpec",
    "TestResult",
    "StudentizedNull",
    "adjusted_responses",
    "permutation_pvalue",
    "exact_ci",
    "wilcoxon_rank_sum",
    "rank_test_pvalue",
    "rank_ci",
    "hodges_lehmann",
    "GammaModel",
    "gamma_pvalue_bounds",
    "gamma_sweep",
    "sensitivity_value",
    "residualize",
    "adjusted_dataset",
    "SimulationConfig",
    "CoverageTable",
    "generate_onesided",
    "coverage_experiment",
    "correction_sweep",
]
