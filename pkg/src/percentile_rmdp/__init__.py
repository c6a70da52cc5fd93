"""Percentile-criterion policies for tabular MDPs via shaped robust ambiguity sets."""

from .ambiguity import (BuildTrace, FrequentistSpec, Inequality, ShapeMode, bayes_budget,
                        bernstein_l1_budget, build_ambiguity_set, cube_root_weights,
                        default_lambda, empirical_model, frequentist_budget,
                        hoeffding_l1_budget, hoeffding_linf_budget, linear_weights,
                        normalize_weights, optimize_weights_analytic, optimize_weights_socp,
                        uniform_weights)
from .bayes import (DirichletPosterior, PosteriorSamples, TransitionDataset,
                    dirichlet_posterior, empirical_guarantee_check, empirical_set_coverage,
                    sample_posterior, uniform_prior)
from .domains import DomainSpec, make_domain
from .estimator import RobustPercentilePolicy
from .exceptions import (InvalidModelError, InvalidSetError, NonConvergenceError,
                         SupportViolationError)
from .mdp import TabularMdp, policy_evaluate, return_of, solve_nominal
from .norms import BallSpec, NormKind, dual_norm, span, weighted_norm, worst_case_expectation
from .pipeline import (ExperimentConfig, ResultRow, run_algorithm1, run_experiment,
                       validate_guarantee)
from .robust import AmbiguitySet, RobustSolution, robust_bellman_apply, robust_value_iteration

__version__ = "0.1.0"

__all__ = [
    "AmbiguitySet", "BallSpec", "BuildTrace", "DirichletPosterior", "DomainSpec",
    "ExperimentConfig", "FrequentistSpec", "Inequality", "InvalidModelError", "InvalidSetError",
    "NonConvergenceError", "NormKind", "PosteriorSamples", "ResultRow", "RobustPercentilePolicy",
    "RobustSolution", "ShapeMode", "SupportViolationError", "TabularMdp", "TransitionDataset",
    "bayes_budget", "bernstein_l1_budget", "build_ambiguity_set", "cube_root_weights",
    "default_lambda", "dirichlet_posterior", "dual_norm", "empirical_guarantee_check",
    "empirical_model", "empirical_set_coverage", "frequentist_budget", "hoeffding_l1_budget",
    "hoeffding_linf_budget", "linear_weights", "make_domain", "normalize_weights",
    "optimize_weights_analytic", "optimize_weights_socp", "policy_evaluate", "return_of",
    "robust_bellman_apply", "robust_value_iteration", "run_algorithm1", "run_experiment",
    "sample_posterior", "solve_nominal", "span", "uniform_prior", "uniform_weights",
    "validate_guarantee", "weighted_norm", "worst_case_expectation",
]
