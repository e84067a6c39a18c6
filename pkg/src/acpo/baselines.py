"""Comparison algorithms built from the same estimation and trust-region pieces.

- ``atrpo``: the ACPO iteration with every constraint dropped.
- ``atrpo-lagrangian``: a trust-region step along the gradient of the
  balanced objective (1 - l) g^T D - l (c_1 + a_1^T D), scaled to the KL boundary.
- ``cpo-gamma``: the ACPO iteration fed discounted advantages and discounted
  constraint values.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .estimation import AdvantageEstimates, collect_batch, gae_stream
from .update import acpo_iteration, batch_advantages, build_local_problem, fit_critics, line_search

KINDS = ("acpo", "atrpo", "atrpo-lagrangian", "cpo-gamma")
DEFAULT_GAMMA = 0.999


@dataclass
class LagrangianConfig:
    ell: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.ell <= 1.0:
            raise ValueError("the balance parameter must lie in [0, 1]")


@dataclass
class DiscountConfig:
    gamma: float = DEFAULT_GAMMA
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


@dataclass
class LagrangianTerms:
    direction: np.ndarray
    constant: float  # -l c_1 + l delta
    quadratic_weight: float  # l / 2 on D^T H D


def lagrangian_objective(problem, ell):
    """Gradient at D = 0 of (1 - l) g^T D - l[(c_1 + a_1^T D) + (D^T H D / 2 - delta)]."""
    LagrangianConfig(ell)
    if problem.m != 1:
        raise ValueError("the balanced objective is defined for exactly one constraint")
    direction = (1.0 - ell) * problem.g - ell * problem.A[:, 0]
    return LagrangianTerms(direction, -ell * float(problem.c[0]) + ell * problem.delta, ell / 2)


def discounted_advantages(batch, critic, gamma, lam):
    """Discounted GAE for the reward stream: delta_t = r_t + gamma V(s_{t+1}) - V(s_t)."""
    DiscountConfig(gamma, lam)
    adv, targets, deltas = gae_stream(batch.rewards, critic.values(batch.states), critic.values(batch.next_states),
                                      0.0, lam, gamma)
    return AdvantageEstimates(adv, np.zeros((0, len(batch))), targets, np.zeros((0, len(batch))), 0.0,
                              np.zeros(0), lam, lam, deltas)


def lagrangian_iteration(env, policy, critic, cost_critics, config, ell, rng, start_state=None, batch=None):
    batch = collect_batch(env, policy, config.batch_size, rng, start_state) if batch is None else batch
    est, gain, cost_gains, constraint = batch_advantages(batch, critic, cost_critics, config)
    problem = build_local_problem(policy, batch.states, batch.actions, est.reward, est.costs[:1], constraint[:1],
                                  config.delta, np.asarray(config.limits)[:1], config.damping, config.cg_iters)
    terms = lagrangian_objective(problem, ell)
    nat = problem.solve(terms.direction)
    curvature = float(terms.direction @ nat)
    step = math.sqrt(2 * problem.delta / curvature) * nat if curvature > 1e-12 else np.zeros_like(nat)
    new_policy, report = line_search(policy, step, problem, batch.states, config.backtrack_coeff,
                                     config.backtrack_iters, check_constraints=False)
    if report.kind == "step":
        report.kind = "lagrangian-step"
    report.constraint_value = problem.c
    report.gain_before, report.cost_gains_before = gain, cost_gains
    report.critic_loss = fit_critics(batch, critic, cost_critics, est, config, rng)
    return new_policy, report, batch


def baseline_iteration(kind, env, policy, critic, cost_critics, config, rng, ell=0.5, gamma=DEFAULT_GAMMA,
                       **kwargs):
    """One iteration of a comparison algorithm; returns (policy, report, batch)."""
    if kind == "atrpo":
        return acpo_iteration(env, policy, critic, cost_critics, replace(config, ignore_constraints=True), rng,
                              **kwargs)
    if kind == "atrpo-lagrangian":
        kwargs.pop("fresh_rng", None)
        return lagrangian_iteration(env, policy, critic, cost_critics, config, ell, rng, **kwargs)
    if kind == "cpo-gamma":
        return acpo_iteration(env, policy, critic, cost_critics, replace(config, gamma=gamma), rng, **kwargs)
    if kind == "acpo":
        return acpo_iteration(env, policy, critic, cost_critics, config, rng, **kwargs)
    raise ValueError(f"unknown algorithm {kind!r}; expected one of {KINDS}")

