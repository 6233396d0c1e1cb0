"""Nested moving-average solvers for stochastic multi-level composition problems."""

from .core import (
    Box,
    CompositionProblem,
    EuclideanBall,
    FullSpace,
    NoiseSpec,
    evaluate_truth,
    project,
    sample_oracle,
    solve_prox_subproblem,
)
from .diagnostics import eta_value, fit_rate, merit_W, record_iteration, stationarity_V
from .errors import ConfigurationError, DegenerateConstantError, NumericError, UnsupportedDiagnostic
from .params import alg1_params, alg2_params, default_schedule, eta_grad_lipschitz, profile_of
from .problems import make_generative_recovery, make_problem, make_quadratic_free_chain, make_tanh_chain
from .solvers import RunConfig, alg1_step, alg2_step, nested_sgd_baseline_step, run

__version__ = "0.1.0"
