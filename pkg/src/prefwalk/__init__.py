"""Debiased inference for contextual Bradley-Terry-Luce pairwise comparisons.

The estimator corrects a plug-in contrast with residuals weighted by
potential differences of the Fisher random walk on the comparison graph,
with cross-fitting, two variance estimates, a max-statistic multiplier
bootstrap for hypothesis families, and density-ratio reweighting.
"""
from ._backend import BACKEND
from .debias import (CrossFit, InferenceReport, Query, cross_fit, estimate, fold_estimate,
                     normal_cdf, normal_quantile, plugin_estimate, variance_tilde)
from .errors import (ContractError, NumericalError, OptimizationError, ParameterError,
                     PrefwalkError, RankDeficiencyError)
from .graph import (ComparisonGraph, WeightedLaplacian, check_good_event, connected_erdos_renyi,
                    effective_resistance, fisher_laplacian, generate_erdos_renyi, is_connected,
                    laplacian_pseudoinverse)
from .multitest import (BootstrapResult, HypothesisFamily, best_item_family,
                        bootstrap_max_pvalue, per_replicate_statistics)
from .potentials import (PotentialField, WalkTally, balancing_weight, expected_crossings_exact,
                         potential_vector, sample_fisher_walks, verify_potential_representation)
from .scores import FittedScores, ModelSpec, OptimizerConfig, fit_mle, split_indices
from .shift import (DensityRatio, constant_ratio, density_ratio_from_spec, indicator_scaled_ratio,
                    shift_estimate)
from .simulate import (Dataset, HalfspaceDomain, IntervalDomain, ScoreFunction, UniformSampler,
                       WholeSpace, constant_scores, domain_from_spec, monte_carlo_true_q, psi,
                       setting_one_scores, setting_sampler, setting_two_scores, simulate_dataset)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BootstrapResult", "ComparisonGraph", "ContractError", "CrossFit", "Dataset",
    "DensityRatio", "FittedScores", "HalfspaceDomain", "HypothesisFamily", "InferenceReport",
    "IntervalDomain", "ModelSpec", "NumericalError", "OptimizationError", "OptimizerConfig",
    "ParameterError", "PotentialField", "PrefwalkError", "Query", "RankDeficiencyError",
    "ScoreFunction", "UniformSampler", "WalkTally", "WeightedLaplacian", "WholeSpace", "balancing_weight",
    "best_item_family", "bootstrap_max_pvalue", "check_good_event", "connected_erdos_renyi",
    "constant_ratio", "constant_scores", "cross_fit", "density_ratio_from_spec", "domain_from_spec", "effective_resistance", "estimate",
    "expected_crossings_exact", "fisher_laplacian", "fit_mle", "fold_estimate",
    "generate_erdos_renyi", "indicator_scaled_ratio", "is_connected", "laplacian_pseudoinverse", "monte_carlo_true_q",
    "normal_cdf", "normal_quantile", "per_replicate_statistics", "plugin_estimate",
    "potential_vector", "psi", "sample_fisher_walks", "setting_one_scores", "setting_sampler", "setting_two_scores",
    "shift_estimate", "simulate_dataset", "split_indices", "variance_tilde",
    "verify_potential_representation",
]
