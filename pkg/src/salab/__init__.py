"""salab: a stochastic-approximation laboratory.

Simulates averaged Robbins-Monro iterates, evaluates the closed-form
high-probability bounds for the averaged error, and verifies bounds,
tightness constructions, and heavy-tail counterexamples with seeded
Monte Carlo ensembles and exact linear-algebra oracles.
"""

from .schedules import StepSchedule, geometric_checkpoints
from .norms import NormSpec
from .engine import NonFiniteIterate, Trajectory, run_sa, update_average
from .operators import (
    StochasticOperator,
    make_linear_additive,
    make_multiplicative_gaussian,
    make_pair_gaussian_example,
    make_random_contractive,
    make_two_point_multiplicative,
)
from .bounds import (
    AdditiveNoiseConfig,
    BoundParams,
    MultiplicativeConfig,
    TailEnvelope,
    combined_bound,
    crude_bound,
    epsilon_bar,
    epsilon_tilde,
    f_additive,
    f_multiplicative,
    g_factor,
    k0,
    leading_q_bound,
    leading_td_bound,
    main_bound,
)
from .montecarlo import (
    Experiment,
    ErrorEnsemble,
    coverage_test,
    empirical_quantile,
    run_ensemble,
    tail_diagnostics,
    tightness_check,
    truncated_mgf_divergence,
)

__version__ = "0.1.0"
