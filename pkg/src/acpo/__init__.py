"""Constrained average-reward MDPs: exact analysis, bound certification, and ACPO."""

from .cmdp import EnvSpec, TabularCmdp, make_env
from .exact import gain_bias_advantage, solve_constrained_optimal
from .harness import ExperimentConfig, run_experiment, verify_bounds_suite
from .policy import GaussianMLPPolicy, TabularSoftmaxPolicy
from .update import TrustRegionProblem, acpo_iteration, solve_dual

__version__ = "0.1.0"
