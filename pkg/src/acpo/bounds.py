"""Numerical certification of the average-reward sensitivity bounds.

Each check evaluates both sides of an inequality (or identity) exactly on a
tabular CMDP and returns a :class:`BoundReport`; a report "holds" when
``rhs - lhs >= -HOLD_TOL``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import exact

HOLD_TOL = 1e-9
IDENTITY_TOL = 1e-8


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    context: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def holds(self):
        return bool(self.slack >= -HOLD_TOL)


@dataclass
class ImprovementBounds:
    L_minus: float
    L_plus: float
    M_minus: np.ndarray
    M_plus: np.ndarray
    reports: list


def _tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def _pair(cmdp, pi, pi_new):
    return exact.gain_bias_advantage(cmdp, pi), exact.gain_bias_advantage(cmdp, pi_new)


def mixing_constants(cmdp, policies, rng=None, num_samples=100):
    """Sampled stand-ins for the max over all policies of sigma and Kemeny's constant.

    Any sampled maximum is a lower bound on the true one.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    chains = [exact.policy_chain(cmdp, p) for p in policies]
    for _ in range(num_samples):
        chains.append(exact.policy_chain(cmdp, exact.random_policy(rng, cmdp.num_states, cmdp.num_actions)))
    return max(c.sigma for c in chains), max(c.kemeny for c in chains)


def check_policy_difference_identity(cmdp, pi, pi_new):
    ev, ev_new = _pair(cmdp, pi, pi_new)
    d_new = ev_new.chain.d_pi
    expected_adv = float(d_new @ (pi_new * ev.advantage).sum(1))
    lhs = abs(ev_new.gain - ev.gain - expected_adv)
    return BoundReport("policy-difference-identity", lhs, IDENTITY_TOL,
                       {"gain_change": ev_new.gain - ev.gain, "expected_advantage": expected_adv})


def check_surrogate_error_bound(cmdp, pi, pi_new):
    ev, ev_new = _pair(cmdp, pi, pi_new)
    per_state = (pi_new * ev.advantage).sum(1)
    eps = float(np.max(np.abs(per_state)))
    surrogate = float(ev.chain.d_pi @ per_state)
    tv_d = _tv(ev_new.chain.d_pi, ev.chain.d_pi)
    lhs = abs(ev_new.gain - ev.gain - surrogate)
    return BoundReport("surrogate-error", lhs, 2.0 * eps * tv_d,
                       {"epsilon": eps, "tv_stationary": tv_d, "surrogate": surrogate})


def check_stationary_tv_bound(cmdp, pi, pi_new, sigma_star=None, kappa_star=None, rng=None,
                              num_samples=100):
    """TV(d', d) <= sigma* E_d[TV(pi', pi)], with the Kemeny-constant form as triage.

    The Kemeny form is recorded in the context; it never turns a failure of the
    sigma form into a pass.
    """
    c, c_new = exact.policy_chain(cmdp, pi), exact.policy_chain(cmdp, pi_new)
    if sigma_star is None or kappa_star is None:
        s_hat, k_hat = mixing_constants(cmdp, [pi, pi_new], rng, num_samples)
        sigma_star = s_hat if sigma_star is None else sigma_star
        kappa_star = k_hat if kappa_star is None else kappa_star
    expected_tv = float(c.d_pi @ exact.policy_tv(pi_new, pi))
    lhs = _tv(c_new.d_pi, c.d_pi)
    report = BoundReport("stationary-tv", lhs, sigma_star * expected_tv,
                         {"sigma_star": sigma_star, "kappa_star": kappa_star,
                          "expected_policy_tv": expected_tv,
                          "kappa_rhs": kappa_star * expected_tv})
    if not report.holds:
        kappa_ok = kappa_star * expected_tv - lhs >= -HOLD_TOL
        report.context["kappa_holds"] = kappa_ok
        report.context["triage"] = "sigma-form-only" if kappa_ok else "both-forms-fail"
    return report


def improvement_bounds(cmdp, pi, pi_new, sigma_star=None, rng=None, num_samples=100):
    """Two-sided bounds on the reward and cost gain changes, plus KL relaxations."""
    ev, ev_new = _pair(cmdp, pi, pi_new)
    if sigma_star is None:
        sigma_star, _ = mixing_constants(cmdp, [pi, pi_new], rng, num_samples)
    d = ev.chain.d_pi
    tv_s = exact.policy_tv(pi_new, pi)
    expected_tv = float(d @ tv_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_s = np.where(pi_new > 0, pi_new * np.log(pi_new / pi), 0.0).sum(1)
    expected_kl = float(d @ kl_s)
    relaxed_tv = np.sqrt(expected_kl / 2.0)

    reports = [BoundReport("pinsker-relaxation", expected_tv, relaxed_tv, {"expected_kl": expected_kl})]

    def sandwich(label, adv, change):
        per_state = (pi_new * adv).sum(1)
        nu = sigma_star * float(np.max(np.abs(per_state)))
        surrogate = float(d @ per_state)
        lo, hi = surrogate - 2 * nu * expected_tv, surrogate + 2 * nu * expected_tv
        lo_kl, hi_kl = surrogate - 2 * nu * relaxed_tv, surrogate + 2 * nu * relaxed_tv
        ctx = {"nu": nu, "surrogate": surrogate, "change": change, "sigma_star": sigma_star}
        reports.extend([
            BoundReport(f"{label}-lower", lo, change, dict(ctx)),
            BoundReport(f"{label}-upper", change, hi, dict(ctx)),
            BoundReport(f"{label}-lower-kl", lo_kl, change, dict(ctx)),
            BoundReport(f"{label}-upper-kl", change, hi_kl, dict(ctx)),
        ])
        return lo, hi

    L_minus, L_plus = sandwich("improvement", ev.advantage, ev_new.gain - ev.gain)
    M = [sandwich(f"cost-change[{i}]", ev.cost_advantage[i], ev_new.cost_gains[i] - ev.cost_gains[i])
         for i in range(cmdp.num_costs)]
    M_minus = np.array([m[0] for m in M])
    M_plus = np.array([m[1] for m in M])
    return ImprovementBounds(L_minus, L_plus, M_minus, M_plus, reports)


def trust_region_guarantees(cmdp, pi_old, pi_new, delta, limits=None, curvature=None):
    """Worst-case degradation and violation after a trust-region update.

    Evaluated under both penalty definitions: ``max_i beta_i^2`` ("beta") and
    ``max_i alpha_i beta_i^2`` with ``alpha_i = 1 / (2 a_i^T H^-1 a_i)``
    ("alpha-beta"). ``curvature`` holds the values ``a_i^T H^-1 a_i``; when
    omitted they are computed exactly for the tabular softmax parameterization.
    """
    limits = cmdp.limits if limits is None else np.asarray(limits, dtype=float)
    ev_old, ev_new = _pair(cmdp, pi_old, pi_new)
    if curvature is None:
        _, A, F = exact.softmax_policy_gradients(cmdp, pi_old, ev_old)
        Finv = np.linalg.pinv(F, rcond=1e-12)
        curvature = np.array([A[:, i] @ Finv @ A[:, i] for i in range(A.shape[1])])
    curvature = np.asarray(curvature, dtype=float)
    beta = np.maximum(ev_old.cost_gains - limits, 0.0)
    with np.errstate(divide="ignore"):
        alpha = np.where(curvature > 0, 1.0 / (2.0 * curvature), np.inf)
    alpha_beta2 = np.where(beta > 0, alpha * beta ** 2, 0.0)
    vmax = {"beta": float(np.max(beta ** 2, initial=0.0)),
            "alpha-beta": float(np.max(alpha_beta2, initial=0.0))}

    d_old = ev_old.chain.d_pi
    surrogate = float(d_old @ (pi_new * ev_old.advantage).sum(1))
    cost_surrogate = ev_old.cost_gains + np.einsum("s,sa,isa->i", d_old, pi_new, ev_old.cost_advantage) - limits
    sigma_new = ev_new.chain.sigma
    nu = sigma_new * float(np.max(np.abs((pi_new * ev_old.advantage).sum(1))))
    nu_c = sigma_new * float(np.max(np.abs(np.einsum("sa,isa->is", pi_new, ev_old.cost_advantage)),
                                    initial=0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(pi_new > 0, pi_new * np.log(pi_new / pi_old), 0.0).sum(1)
    ctx = {"beta": beta.tolist(), "alpha": alpha.tolist(), "nu": nu, "nu_cost": nu_c,
           "sigma_new": sigma_new, "delta": delta, "vmax_beta": vmax["beta"],
           "vmax_alpha_beta": vmax["alpha-beta"], "exact_mean_kl": float(d_old @ kl),
           "exact_surrogate": surrogate, "exact_linearized_costs": cost_surrogate.tolist()}
    reports = []
    for variant, v in vmax.items():
        radius = np.sqrt(2.0 * (delta + v))
        reports.append(BoundReport(f"trust-region-degradation[{variant}]",
                                   ev_old.gain - ev_new.gain, radius * nu, dict(ctx)))
        for i in range(cmdp.num_costs):
            reports.append(BoundReport(f"trust-region-violation[{variant}][{i}]",
                                       ev_new.cost_gains[i] - limits[i], radius * nu_c, dict(ctx)))
    return reports


@dataclass
class ExactTrustRegionStep:
    policy: np.ndarray
    method: str  # "direct" or "projected"
    surrogate: float
    linearized_costs: np.ndarray  # J_Ci(pi_k) + E[A_Ci] - l_i
    mean_kl: float


def _simplex_program(nS, nA, objective, constraints, x0):
    """SLSQP over row-stochastic (nS, nA) matrices."""
    rows = np.kron(np.eye(nS), np.ones(nA))
    cons = [{"type": "eq", "fun": lambda x: rows @ x - 1.0, "jac": lambda x: rows}] + constraints
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = minimize(objective, x0, jac=True, method="SLSQP", bounds=[(1e-12, 1.0)] * (nS * nA),
                       constraints=cons, options={"maxiter": 500, "ftol": 1e-14})
    x = np.clip(res.x.reshape(nS, nA), 1e-12, None)
    return x / x.sum(1, keepdims=True)


def _weighted_kl(d, x, ref):
    return float(d @ (x * np.log(x / ref)).sum(1))


def exact_trust_region_step(cmdp, pi, delta, limits=None, tol=1e-9):
    """Exact optimum of the KL-ball problem over all stochastic policies.

    Maximizes E_{d_pi, pi'}[A^pi] subject to J_Ci(pi) + E_{d_pi, pi'}[A_Ci^pi] <= l_i
    and E_{d_pi}[KL(pi' || pi)] <= delta. When that problem has no feasible
    point, the reward-only optimum over the ball is KL-projected onto the
    linearized cost set instead ("projected").
    """
    limits = cmdp.limits if limits is None else np.asarray(limits, dtype=float)
    ev = exact.gain_bias_advantage(cmdp, pi)
    d, (nS, nA) = ev.chain.d_pi, pi.shape
    w_adv = (d[:, None] * ev.advantage).ravel()
    w_cost = [(d[:, None] * ev.cost_advantage[i]).ravel() for i in range(cmdp.num_costs)]
    slack0 = limits - ev.cost_gains

    def kl_con(ref, radius):
        def fun(x):
            x = np.clip(x, 1e-12, None).reshape(nS, nA)
            return radius - _weighted_kl(d, x, ref)

        def jac(x):
            x = np.clip(x, 1e-12, None).reshape(nS, nA)
            return -(d[:, None] * (np.log(x / ref) + 1.0)).ravel()
        return {"type": "ineq", "fun": fun, "jac": jac}

    cost_cons = [{"type": "ineq", "fun": lambda x, w=w, b=b: b - w @ x, "jac": lambda x, w=w: -w}
                 for w, b in zip(w_cost, slack0)]
    linear = lambda x: (-float(w_adv @ x), -w_adv)
    x = _simplex_program(nS, nA, linear, [kl_con(pi, delta)] + cost_cons, pi.ravel())
    method = "direct"
    lin = np.array([w @ x.ravel() for w in w_cost]) - slack0
    if np.any(lin > tol) or _weighted_kl(d, x, pi) > delta + tol:
        half = _simplex_program(nS, nA, linear, [kl_con(pi, delta)], pi.ravel())

        def proj(x):
            x = np.clip(x, 1e-12, None).reshape(nS, nA)
            return _weighted_kl(d, x, half), (d[:, None] * (np.log(x / half) + 1.0)).ravel()
        x = _simplex_program(nS, nA, proj, cost_cons, half.ravel())
        method = "projected"
        lin = np.array([w @ x.ravel() for w in w_cost]) - slack0
    return ExactTrustRegionStep(x, method, float(w_adv @ x.ravel()), lin, _weighted_kl(d, x, pi))


@dataclass
class TrivializationPoint:
    gamma: float
    penalty: float
    epsilon: float
    expected_tv: float

    @property
    def factor(self):
        """The gamma-only part 2 gamma / (1 - gamma); penalty = factor * epsilon * expected_tv."""
        return 2.0 * self.gamma / (1.0 - self.gamma)


def trivialization_demo(cmdp, pi, pi_new, gamma_grid):
    """Normalized penalty 2 gamma eps_gamma E_{d_gamma}[TV] / (1 - gamma) of the discounted bound.

    This is the penalty term of the discounted improvement bound after
    multiplying the bound by (1 - gamma); it diverges as gamma -> 1.
    """
    gammas = [float(g) for g in gamma_grid]
    if any(not 0.0 < g < 1.0 for g in gammas):
        raise ValueError("every gamma must lie in (0, 1)")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gamma grid must be strictly ascending")
    tv_s = exact.policy_tv(pi_new, pi)
    out = []
    for g in gammas:
        d_g, _, _, adv = exact.discounted_evaluation(cmdp, pi, g)
        eps = float(np.max(np.abs((pi_new * adv).sum(1))))
        etv = float(d_g @ tv_s)
        point = TrivializationPoint(g, 0.0, eps, etv)
        point.penalty = point.factor * eps * etv
        out.append(point)
    return out
