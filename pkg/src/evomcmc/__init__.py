"""Reversible evolutionary MCMC with exchangeable breeding."""

from .errors import (BracketError, BudgetExceeded, ConfigError, ConvergenceError,
                     InvalidArgument, NonUniqueMinimizer, UnsupportedKernel)
from .genotype import AlleleSpace, FitnessSpec, Population, SimplexPoint, r_map, scaled_weights
from .breeding import (AlleleCountVector, DirichletCategorical, ProductBreeding, breed_genome,
                       conditional_sample, effective_alpha, effective_alpha_per_locus,
                       joint_log_prob)
from .kernels import (Chain, DiscreteDistribution, Kernel, KernelConfig, LuckConfig,
                      step_breed_many, step_inverse_fitness, step_niche, step_single_tournament,
                      wrap_with_luck)
from .oracle import (CountDistribution, TransitionMatrix, check_detailed_balance,
                     full_transition_matrix, lump_to_counts, marginal_probability,
                     power_iteration, stationary_counts, stationary_ordered)
from .limits import (HessianReport, LimitDensity, LimitPrediction, limit_density_lambda1,
                     predict_limit, product_limit_k2l2, qstar_m, solve_qstar_lambda0,
                     solve_qstar_lambda_mid)
from .experiment import (ExperimentConfig, FrequencyHistogram, build_histogram,
                         compare_to_prediction, run_chain, run_suite)

__version__ = "0.1.0"
