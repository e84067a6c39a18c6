"""Exact analysis of stationary policies on tabular CMDPs.

All quantities come from dense linear algebra and are meant as ground truth
for the sampled machinery: stationary distributions, gains, bias functions
(normalized so that E_d[V] = 0), advantages, mixing constants, and an
occupation-measure LP for the constrained optimum.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .cmdp import NonErgodicError


@dataclass
class ChainAnalysis:
    P_pi: np.ndarray
    d_pi: np.ndarray
    eigenvalues: np.ndarray
    sigma: float
    kemeny: float
    fundamental: np.ndarray


@dataclass
class ExactEvaluation:
    gain: float
    bias: np.ndarray
    q: np.ndarray
    advantage: np.ndarray
    cost_gains: np.ndarray
    cost_bias: np.ndarray
    cost_q: np.ndarray
    cost_advantage: np.ndarray
    chain: ChainAnalysis


@dataclass
class OracleSolution:
    gain: float
    occupation: np.ndarray
    policy: np.ndarray
    feasible: bool
    cost_values: np.ndarray

    def slack(self, limits):
        return np.asarray(limits, dtype=float) - self.cost_values


def _check_policy(policy, nS, nA):
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (nS, nA):
        raise ValueError(f"policy must have shape {(nS, nA)}, got {policy.shape}")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(1) - 1.0) > 1e-10):
        raise ValueError("policy rows must be probability distributions")
    return policy


def induced_transition(cmdp, policy):
    return np.einsum("sa,sat->st", policy, cmdp.transition)


def stationary_distribution(P):
    """Solve d^T P = d^T, sum(d) = 1 as a linear system."""
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    if np.linalg.cond(A) > 1e12:
        raise NonErgodicError("stationary system is singular; the chain has several recurrent classes")
    d = np.linalg.solve(A, b)
    d[np.abs(d) < 1e-300] = 0.0
    return d


def analyze_transition(P):
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    d = stationary_distribution(P)
    eig = np.linalg.eigvals(P)
    unit = np.abs(eig - 1.0) < 1e-9
    if unit.sum() != 1:
        raise NonErgodicError(f"expected one unit eigenvalue, found {int(unit.sum())}")
    others = eig[~unit]
    # modulus form; coincides with (1 - lambda)^(-1/2) for reversible chains
    sigma = float(np.max(np.abs(1.0 - others) ** -0.5)) if len(others) else 1.0
    Z = np.linalg.inv(np.eye(n) - P + np.outer(np.ones(n), d))
    return ChainAnalysis(P, d, eig, sigma, float(np.trace(Z)), Z)


def policy_chain(cmdp, policy):
    policy = _check_policy(policy, cmdp.num_states, cmdp.num_actions)
    return analyze_transition(induced_transition(cmdp, policy))


def _evaluate_stream(cmdp, policy, chain, tensor):
    r_sa = np.einsum("sat,sat->sa", cmdp.transition, tensor)
    r_pi = (policy * r_sa).sum(1)
    gain = float(chain.d_pi @ r_pi)
    bias = chain.fundamental @ (r_pi - gain)
    q = r_sa - gain + cmdp.transition @ bias
    return gain, bias, q, q - bias[:, None]


def gain_bias_advantage(cmdp, policy, chain=None):
    policy = _check_policy(policy, cmdp.num_states, cmdp.num_actions)
    chain = chain or analyze_transition(induced_transition(cmdp, policy))
    gain, bias, q, adv = _evaluate_stream(cmdp, policy, chain, cmdp.reward)
    streams = [_evaluate_stream(cmdp, policy, chain, c) for c in cmdp.costs]
    nS, nA, m = cmdp.num_states, cmdp.num_actions, cmdp.num_costs
    return ExactEvaluation(
        gain=gain, bias=bias, q=q, advantage=adv,
        cost_gains=np.array([s[0] for s in streams]),
        cost_bias=np.array([s[1] for s in streams]).reshape(m, nS),
        cost_q=np.array([s[2] for s in streams]).reshape(m, nS, nA),
        cost_advantage=np.array([s[3] for s in streams]).reshape(m, nS, nA),
        chain=chain,
    )


def evaluate(cmdp, policy):
    """Shorthand for (gain, cost gains)."""
    ev = gain_bias_advantage(cmdp, policy)
    return ev.gain, ev.cost_gains


def discounted_evaluation(cmdp, policy, gamma, tensor=None):
    """Exact discounted quantities: (d_{pi,gamma}, V, Q, A)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    tensor = cmdp.reward if tensor is None else tensor
    P = induced_transition(cmdp, policy)
    n = P.shape[0]
    r_sa = np.einsum("sat,sat->sa", cmdp.transition, tensor)
    M = np.eye(n) - gamma * P
    V = np.linalg.solve(M, (policy * r_sa).sum(1))
    Q = r_sa + gamma * cmdp.transition @ V
    d = (1.0 - gamma) * np.linalg.solve(M.T, cmdp.initial_dist)
    return d, V, Q, Q - V[:, None]


def policy_tv(pi_new, pi_old):
    """Per-state total variation between two tabular policies."""
    return 0.5 * np.abs(np.asarray(pi_new) - np.asarray(pi_old)).sum(1)


def random_policy(rng, nS, nA, concentration=1.0):
    return rng.dirichlet(np.full(nA, concentration), size=nS)


def solve_constrained_optimal(cmdp, limits=None):
    """Occupation-measure LP: max sum r x s.t. flow balance, sum x = 1, costs <= limits."""
    limits = cmdp.limits if limits is None else np.asarray(limits, dtype=float).reshape(-1)
    if len(limits) != cmdp.num_costs:
        raise ValueError("need one limit per cost")
    nS, nA = cmdp.num_states, cmdp.num_actions
    r = cmdp.expected_reward().reshape(-1)
    C = cmdp.expected_costs().reshape(cmdp.num_costs, -1)
    inflow = cmdp.transition.reshape(nS * nA, nS).T
    outflow = np.kron(np.eye(nS), np.ones(nA))
    A_eq = np.vstack([outflow - inflow, np.ones(nS * nA)])
    b_eq = np.zeros(nS + 1)
    b_eq[-1] = 1.0
    active = np.isfinite(limits)
    A_ub = C[active] if active.any() else None
    b_ub = limits[active] if active.any() else None
    res = linprog(-r, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        return OracleSolution(-np.inf, np.zeros((nS, nA)), np.full((nS, nA), 1.0 / nA), False,
                              np.full(cmdp.num_costs, np.nan))
    if res.status != 0:
        raise RuntimeError(f"LP failed (status {res.status}): {res.message}")
    x = np.maximum(res.x, 0.0)
    flow = np.abs(A_eq @ x - b_eq).max()
    excess = (C @ x - limits).max(initial=-np.inf)
    if flow > 1e-8 or excess > 1e-8:
        raise RuntimeError(f"LP solution out of tolerance: flow residual {flow:.3e}, "
                           f"constraint excess {excess:.3e}")
    x = x.reshape(nS, nA)
    mass = x.sum(1, keepdims=True)
    policy = np.where(mass > 0, x / np.where(mass > 0, mass, 1.0), 1.0 / nA)
    return OracleSolution(float(r @ x.reshape(-1)), x, policy, True, C @ x.reshape(-1))


def policy_iteration(cmdp, tensor=None, max_iters=1000):
    """Average-reward policy iteration for unichain models; returns (policy, gain)."""
    tensor = cmdp.reward if tensor is None else tensor
    nS, nA = cmdp.num_states, cmdp.num_actions
    actions = np.zeros(nS, dtype=int)
    for _ in range(max_iters):
        policy = np.eye(nA)[actions]
        chain = analyze_transition(induced_transition(cmdp, policy))
        gain, bias, q, _ = _evaluate_stream(cmdp, policy, chain, tensor)
        best = q.max(1)
        keep = q[np.arange(nS), actions] >= best - 1e-12
        improved = np.where(keep, actions, q.argmax(1))
        if np.array_equal(improved, actions):
            return policy, gain
        actions = improved
    raise RuntimeError("policy iteration did not converge")


def softmax_policy_gradients(cmdp, policy, evaluation=None):
    """Exact (g, A, F) for a tabular softmax policy with logits theta[s, a].

    g and the columns of A are the gradients of E_{s~d, a~pi_theta}[adv(s, a)]
    for the reward and each cost advantage; F is the d-weighted Fisher matrix,
    i.e. the Hessian of the mean KL at the current policy.
    """
    ev = evaluation or gain_bias_advantage(cmdp, policy)
    d = ev.chain.d_pi

    def grad(adv):
        centered = adv - (policy * adv).sum(1, keepdims=True)
        return (d[:, None] * policy * centered).reshape(-1)

    nS, nA = policy.shape
    F = np.zeros((nS * nA, nS * nA))
    for s in range(nS):
        p = policy[s]
        F[s * nA:(s + 1) * nA, s * nA:(s + 1) * nA] = d[s] * (np.diag(p) - np.outer(p, p))
    A = np.array([grad(adv) for adv in ev.cost_advantage]).reshape(-1, nS * nA).T
    return grad(ev.advantage), A, F
