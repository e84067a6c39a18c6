"""One ACPO outer iteration: local QP, dual solve, primal or recovery step, line search.

The local problem around the current parameters is

    max_D  g^T D   s.t.  c_i + a_i^T D <= 0,   (1/2) D^T H D <= delta.

Writing q = g^T H^-1 g, r = A^T H^-1 g and S = A^T H^-1 A, the Lagrange dual
function (from the KKT conditions, minimized over lambda >= 0, mu >= 0) is

    D(lambda, mu) = (q - 2 r^T mu + mu^T S mu) / (2 lambda) + lambda delta - mu^T c

whose minimum equals the optimal value g^T D*, with D* = H^-1 (g - A mu) / lambda.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import policy as pol
from .estimation import average_gae, collect_batch, estimate_gains, fit_critic

TINY = 1e-12


@dataclass
class TrustRegionProblem:
    g: np.ndarray
    A: np.ndarray  # (d, m)
    c: np.ndarray
    H: pol.LinearOperator
    delta: float
    states: object = None
    cg_iters: int = 10
    exact: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64).reshape(len(self.g), -1)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if self.A.shape[1] != len(self.c):
            raise ValueError("need one constraint value per column of A")
        if self.H.dim != len(self.g):
            raise ValueError("H and g dimensions differ")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @classmethod
    def from_dense(cls, g, A, c, H, delta):
        """Problem with an explicit matrix H; solves are exact."""
        H = np.asarray(H, dtype=np.float64)
        return cls(g, A, c, pol.LinearOperator(len(H), lambda v: H @ v), delta, exact=True,
                   _cache={"dense": H})

    @property
    def m(self):
        return len(self.c)

    def solve(self, b):
        if self.exact:
            return np.linalg.solve(self._cache["dense"], b)
        return pol.conjugate_gradient(self.H, b, self.cg_iters).x

    @property
    def Hinv_g(self):
        if "Hinv_g" not in self._cache:
            self._cache["Hinv_g"] = self.solve(self.g)
        return self._cache["Hinv_g"]

    @property
    def Hinv_A(self):
        if "Hinv_A" not in self._cache:
            self._cache["Hinv_A"] = np.column_stack([self.solve(a) for a in self.A.T]) if self.m \
                else np.zeros((len(self.g), 0))
        return self._cache["Hinv_A"]

    @property
    def q(self):
        return float(self.g @ self.Hinv_g)

    @property
    def r(self):
        return self.A.T @ self.Hinv_g

    @property
    def S(self):
        S = self.A.T @ self.Hinv_A
        return 0.5 * (S + S.T)


@dataclass
class DualSolution:
    lam: float
    mu: np.ndarray
    case: str
    objective: float
    transcribed_objective: float


def dual_objective(problem, lam, mu):
    """Dual function D(lambda, mu); an upper bound on the QP value for every lambda, mu >= 0."""
    mu = np.asarray(mu, dtype=np.float64)
    quad = max(problem.q - 2 * problem.r @ mu + mu @ problem.S @ mu, 0.0)
    active = mu > 0  # an infinite limit gives c = -inf, which an inactive multiplier must not touch
    linear = float(mu[active] @ problem.c[active])
    if lam <= 0:
        return -linear if quad <= TINY else math.inf
    return quad / (2 * lam) + lam * problem.delta - linear


def transcribed_dual_objective(problem, lam, mu):
    """D with lambda*delta/2 in place of lambda*delta; evaluated only to measure the gap."""
    return dual_objective(problem, lam, mu) - (lam * problem.delta / 2 if lam > 0 else 0.0)


def _phase_one(problem):
    """max over the simplex of mu^T c - sqrt(2 delta mu^T S mu); positive iff infeasible."""
    S, c, delta, m = problem.S, problem.c, problem.delta, problem.m

    def neg(mu):
        return -(mu @ c - math.sqrt(max(2 * delta * (mu @ S @ mu), 0.0)))

    best = max(range(m), key=lambda i: c[i] - math.sqrt(max(2 * delta * S[i, i], 0.0)))
    start = np.eye(m)[best]
    res = minimize(neg, start, method="SLSQP", bounds=[(0, 1)] * m,
                   constraints=[{"type": "eq", "fun": lambda mu: mu.sum() - 1.0}])
    return max(-res.fun, -neg(start))


def classify_feasibility(problem):
    """'feasible' or 'infeasible' for the linearized constraints within the KL ellipsoid."""
    if problem.m == 0:
        return "feasible"
    S = problem.S
    if np.any(np.diag(S) <= 0):
        raise ValueError("a_i^T H^-1 a_i must be positive")
    if problem.m == 1:
        c, s = problem.c[0], S[0, 0]
        return "infeasible" if c > 0 and c * c / s > 2 * problem.delta else "feasible"
    return "infeasible" if _phase_one(problem) > 0 else "feasible"


def _solve_single(problem):
    q, delta = problem.q, problem.delta
    r, s, c = float(problem.r[0]), float(problem.S[0, 0]), float(problem.c[0])
    A_ = max(q - r * r / s, 0.0)
    B_ = 2 * delta - c * c / s
    candidates = []

    def project(lam, lo, hi):
        return min(max(lam, lo), hi)

    # mu > 0 where r + lam c > 0
    if c > 0:
        lo_a, hi_a = max(-r / c, 0.0), math.inf
    elif c < 0:
        lo_a, hi_a = 0.0, (-r / c if r > 0 else 0.0)
    else:
        lo_a, hi_a = (0.0, math.inf) if r > 0 else (0.0, 0.0)
    if hi_a > lo_a:
        if B_ > 0:
            lam = project(math.sqrt(A_ / B_), lo_a, hi_a)
        else:
            lam = hi_a
        if math.isfinite(lam):
            candidates.append(("constraint-active", lam, max((r + lam * c) / s, 0.0)))
    # mu = 0 where r + lam c <= 0
    if c > 0:
        lo_b, hi_b = 0.0, (-r / c if r < 0 else 0.0)
    elif c < 0:
        lo_b, hi_b = (max(-r / c, 0.0), math.inf)
    else:
        lo_b, hi_b = (0.0, math.inf) if r <= 0 else (0.0, 0.0)
    if hi_b > lo_b or (hi_b == lo_b == 0.0 and q <= TINY):
        lam = project(math.sqrt(q / (2 * delta)), lo_b, hi_b)
        candidates.append(("interior", lam, 0.0))
    if not candidates:
        raise ArithmeticError("dual problem has no admissible multipliers")
    scored = [(dual_objective(problem, lam, [mu]), case, lam, mu) for case, lam, mu in candidates]
    obj, case, lam, mu = min(scored, key=lambda x: x[0])
    return lam, np.array([mu]), case


def _solve_general(problem, tol=1e-10, max_enumerated=10):
    """Minimize D for m >= 2.

    Small m: every active set is tried and the admissible KKT point (mu >= 0,
    all linearized constraints satisfied) with the lowest D is kept, which is
    exact. Larger m: L-BFGS-B on D(lambda(mu), mu) with lambda eliminated,
    then an exact polish on the active set it identifies.
    """
    r, S, c, q, delta = problem.r, problem.S, problem.c, problem.q, problem.delta
    if problem.m <= max_enumerated:
        best = None
        for bits in range(2 ** problem.m):
            active = np.array([(bits >> i) & 1 for i in range(problem.m)], dtype=bool)
            sol = _active_set_solution(problem, active)
            if sol is None:
                continue
            lam, mu = sol
            if lam <= TINY:
                continue
            lin = c + r / lam - S @ mu / lam
            if np.all(lin <= 1e-9 * max(1.0, np.abs(c).max())):
                value = dual_objective(problem, lam, mu)
                if best is None or value < best[0]:
                    best = (value, lam, mu)
        if best is not None:
            _, lam, mu = best
            return lam, mu, "constraint-active" if np.any(mu > 0) else "interior"

    def neg(mu):
        quad = max(q - 2 * r @ mu + mu @ S @ mu, 0.0)
        root = math.sqrt(2 * delta * quad)
        grad = -c + (math.sqrt(2 * delta) * (S @ mu - r) / math.sqrt(quad) if quad > TINY else 0.0)
        return root - mu @ c, grad

    res = minimize(neg, np.zeros(problem.m), jac=True, method="L-BFGS-B",
                   bounds=[(0, None)] * problem.m, options={"ftol": tol, "gtol": tol, "maxiter": 10_000})
    mu = np.maximum(res.x, 0.0)
    lam = math.sqrt(max(q - 2 * r @ mu + mu @ S @ mu, 0.0) / (2 * delta))
    polished = _active_set_solution(problem, mu > 1e-8 * max(1.0, mu.max(initial=0.0)))
    if polished is not None and dual_objective(problem, *polished) <= dual_objective(problem, lam, mu) + 1e-9:
        lam, mu = polished
    return lam, mu, "constraint-active" if np.any(mu > 0) else "interior"


def _active_set_solution(problem, active):
    """Exact KKT point for a given active set, or None if it is not admissible.

    With the active constraints holding with equality, mu_I = S_II^-1 (r_I + lambda c_I)
    and lambda^2 = (q - r_I^T S_II^-1 r_I) / (2 delta - c_I^T S_II^-1 c_I).
    """
    q, delta = problem.q, problem.delta
    mu = np.zeros(problem.m)
    if not active.any():
        return math.sqrt(max(q, 0.0) / (2 * delta)), mu
    S = problem.S[np.ix_(active, active)]
    r, c = problem.r[active], problem.c[active]
    try:
        Sr, Sc = np.linalg.solve(S, r), np.linalg.solve(S, c)
    except np.linalg.LinAlgError:
        return None
    num, den = max(q - r @ Sr, 0.0), 2 * delta - c @ Sc
    if den <= 0:
        return None
    lam = math.sqrt(num / den)
    mu[active] = Sr + lam * Sc
    if np.any(mu < -1e-12):
        return None
    return lam, np.maximum(mu, 0.0)


def solve_dual(problem):
    """Optimal multipliers of the local problem (requires it to be feasible)."""
    if problem.m == 0:
        lam, mu, case = math.sqrt(max(problem.q, 0.0) / (2 * problem.delta)), np.zeros(0), "interior"
    elif problem.m == 1:
        lam, mu, case = _solve_single(problem)
    else:
        lam, mu, case = _solve_general(problem)
    if not (math.isfinite(lam) and np.all(np.isfinite(mu))):
        raise ArithmeticError("dual solution is not finite")
    return DualSolution(lam, mu, case, dual_objective(problem, lam, mu),
                        transcribed_dual_objective(problem, lam, mu))


def primal_step(problem, dual):
    """D = H^-1 (g - A mu) / lambda.

    With one active constraint, mu = (r + lambda c) / s and the step is written
    as (H^-1 g - (r/s) H^-1 a) / lambda - (c/s) H^-1 a, which stays finite
    as lambda -> 0 (g collinear with a). Otherwise lambda = 0 means the
    current point is optimal and the step is zero.
    """
    if problem.m == 1 and dual.mu[0] > 0:
        Hinv_a = problem.Hinv_A[:, 0]
        r, s, c = float(problem.r[0]), float(problem.S[0, 0]), float(problem.c[0])
        ortho = problem.Hinv_g - (r / s) * Hinv_a
        lead = ortho / dual.lam if dual.lam > TINY else 0.0 * ortho
        return lead - (c / s) * Hinv_a
    if dual.lam <= TINY:
        return np.zeros_like(problem.g)
    return (problem.Hinv_g - problem.Hinv_A @ dual.mu) / dual.lam


def primal_qp_value(problem, step):
    return float(problem.g @ step)


def recovery_step(problem, t=0.75, constraint=None):
    """Blend of the natural cost-decrease and reward-decrease directions on the trust boundary.

    With several constraints the most violated one (largest c_i / sqrt(a_i^T H^-1 a_i))
    drives the step.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if problem.m == 0:
        raise ValueError("recovery needs a constraint")
    S = problem.S
    i = int(np.argmax(problem.c / np.sqrt(np.diag(S)))) if constraint is None else constraint
    Hinv_a, s, q = problem.Hinv_A[:, i], S[i, i], problem.q
    cost_dir = Hinv_a / math.sqrt(s) if s > TINY else None
    reward_dir = problem.Hinv_g / math.sqrt(q) if q > TINY else None
    if cost_dir is None and reward_dir is None:
        return np.zeros_like(problem.g)
    if cost_dir is None:
        blend = reward_dir
    elif reward_dir is None:
        blend = cost_dir
    else:
        blend = t * cost_dir + (1.0 - t) * reward_dir
    return -math.sqrt(2 * problem.delta) * blend


@dataclass
class IterationReport:
    iteration: int = 0
    kind: str = "no-update"
    case: str = ""
    kl: float = 0.0
    fresh_kl: float = float("nan")
    backtracks: int = -1
    surrogate_change: float = 0.0
    linearized: np.ndarray = field(default_factory=lambda: np.zeros(0))
    constraint_value: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gain_before: float = float("nan")
    cost_gains_before: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gain_after: float = float("nan")
    cost_gains_after: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_lambda: float = float("nan")
    dual_mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_gap_transcribed: float = float("nan")
    critic_loss: float = float("nan")
    error: str = ""


def line_search(policy, step, problem, states, s=0.75, L=10, slack=0.0, check_constraints=True,
                kl_limit=None):
    """Backtrack theta + s^j step, j = 0..L, until the KL and linearized-constraint tests pass.

    Constraint test: a_i^T D <= max(-c_i, 0) + slack. For c_i <= 0 this is the
    linearized constraint c_i + a_i^T D <= slack; for a currently violated
    constraint it asks that the linearized cost not increase.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("backtracking coefficient must lie in (0, 1)")
    kl_limit = problem.delta if kl_limit is None else kl_limit
    bound = np.maximum(-problem.c, 0.0) + slack
    for j in range(L + 1):
        trial = (s ** j) * step
        candidate = policy.with_theta(policy.theta + trial)
        kl = pol.mean_kl(candidate, policy, states)
        moves = problem.A.T @ trial
        if kl <= kl_limit and (not check_constraints or np.all(moves <= bound)):
            return candidate, IterationReport(kind="step", kl=kl, backtracks=j,
                                              surrogate_change=float(problem.g @ trial),
                                              linearized=problem.c + moves)
    return policy, IterationReport(kind="no-update", kl=0.0, backtracks=-1, linearized=problem.c.copy())


def build_local_problem(policy, states, actions, advantages, cost_advantages, cost_gains, delta, limits,
                        damping=pol.DEFAULT_DAMPING, cg_iters=10):
    """g, a_i from score-function gradients; c_i = J_C_i - l_i; H the damped KL Hessian on batch states."""
    g = pol.surrogate_gradient(policy, states, actions, advantages)
    cols = [pol.surrogate_gradient(policy, states, actions, adv) for adv in cost_advantages]
    A = np.column_stack(cols) if cols else np.zeros((policy.dim, 0))
    c = np.asarray(cost_gains, dtype=np.float64) - np.asarray(limits, dtype=np.float64)
    return TrustRegionProblem(g, A, c, pol.kl_hessian_operator(policy, states, damping), delta, states,
                              cg_iters)


@dataclass
class UpdateConfig:
    delta: float = 1e-4
    lam: float = 0.95
    cost_lam: float = 0.95
    batch_size: int = 2500
    recovery_t: float = 0.75
    backtrack_coeff: float = 0.75
    backtrack_iters: int = 10
    slack: float = 0.0
    limits: tuple = (0.5,)
    critic_lr: float = 2e-4
    cost_critic_lr: float = 2e-4
    critic_epochs: int = 5
    critic_optimizer: str = "adam"
    critic_minibatch: int = 0
    cg_iters: int = 10
    damping: float = pol.DEFAULT_DAMPING
    gamma: float = 0.0  # 0 selects the average-reward estimators
    fresh_kl_states: int = 0
    ignore_constraints: bool = False


def discounted_gain(stream, gamma):
    """Normalized discounted value of a stream from the batch start: weights gamma^t sum to 1."""
    w = gamma ** np.arange(len(stream))
    return float(w @ stream / w.sum())


def batch_advantages(batch, critic, cost_critics, config):
    """Advantages plus the constraint values c_i fed to the local problem."""
    gain, cost_gains = estimate_gains(batch)
    if config.gamma:
        est = average_gae(batch, critic, 0.0, config.lam, cost_critics, np.zeros(batch.num_costs),
                          config.cost_lam, gamma=config.gamma)
        constraint = np.array([discounted_gain(batch.costs[:, i], config.gamma) for i in range(batch.num_costs)])
    else:
        est = average_gae(batch, critic, gain, config.lam, cost_critics, cost_gains, config.cost_lam)
        constraint = cost_gains
    return est, gain, cost_gains, constraint


def fit_critics(batch, critic, cost_critics, est, config, rng):
    minibatch = config.critic_minibatch or None
    trace = fit_critic(critic, batch.states, est.reward_targets, config.critic_lr, config.critic_epochs,
                       config.critic_optimizer, minibatch, rng)
    for i, cc in enumerate(cost_critics):
        fit_critic(cc, batch.states, est.cost_targets[i], config.cost_critic_lr, config.critic_epochs,
                   config.critic_optimizer, minibatch, rng)
    return trace[-1] if trace else float("nan")


def fresh_states(env, policy, n, rng, start_state):
    return collect_batch(env, policy, n, rng, start_state).states


def propose_step(problem, config):
    """Dual step when the local problem is feasible, otherwise a recovery step."""
    if classify_feasibility(problem) == "feasible":
        dual = solve_dual(problem)
        return "dual-step", dual, primal_step(problem, dual)
    return "recovery", None, recovery_step(problem, config.recovery_t)


def acpo_iteration(env, policy, critic, cost_critics, config, rng, start_state=None, batch=None,
                   fresh_rng=None):
    """Collect, estimate, build the local problem, step, line-search, then refit the critics.

    Returns (new policy, report, batch). ``fresh_rng`` drives the independent
    rollout used for the fresh-state KL measurement.
    """
    batch = collect_batch(env, policy, config.batch_size, rng, start_state) if batch is None else batch
    est, gain, cost_gains, constraint = batch_advantages(batch, critic, cost_critics, config)
    limits = np.asarray(config.limits, dtype=np.float64)
    if config.ignore_constraints:
        cost_adv, cvals, lims = [], [], []
    else:
        cost_adv, cvals, lims = est.costs, constraint, limits
    problem = build_local_problem(policy, batch.states, batch.actions, est.reward, cost_adv, cvals,
                                  config.delta, lims, config.damping, config.cg_iters)
    kind, dual, step = propose_step(problem, config)
    new_policy, report = line_search(policy, step, problem, batch.states, config.backtrack_coeff,
                                     config.backtrack_iters, config.slack)
    if report.kind == "step":
        report.kind = kind
    if dual is not None:
        report.case = dual.case
        report.dual_lambda, report.dual_mu = dual.lam, dual.mu
        report.dual_gap_transcribed = dual.transcribed_objective - dual.objective
    elif kind == "recovery":
        report.case = "infeasible-detected"
    report.constraint_value = problem.c
    report.gain_before, report.cost_gains_before = gain, cost_gains
    if config.fresh_kl_states and report.kind != "no-update":
        states = fresh_states(env, policy, config.fresh_kl_states,
                              fresh_rng if fresh_rng is not None else rng, batch.final_state)
        report.fresh_kl = pol.mean_kl(new_policy, policy, states)
    elif config.fresh_kl_states:
        report.fresh_kl = 0.0
    report.critic_loss = fit_critics(batch, critic, cost_critics, est, config, rng)
    return new_policy, report, batch
