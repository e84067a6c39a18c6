"""Experiment configuration, training runs, evaluation, and the bound-certification suite."""

import ast
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bounds, exact
from .baselines import KINDS, baseline_iteration
from .cmdp import EnvSpec, make_env
from .estimation import MLPCritic, RunningNormalizer, TabularCritic, collect_batch, estimate_gains, sampling_cdf
from . import kernels
from .policy import GaussianMLPPolicy, TabularSoftmaxPolicy, load_params, save_params
from .update import IterationReport, UpdateConfig

RUN_ROOT_ENV = "ACPO_RUN_ROOT"
SECTION = "experiment"

# independent random streams per seed: np.random.default_rng([seed, STREAM, ...])
TRAIN_STREAM, FRESH_STREAM, EVAL_STREAM, INIT_STREAM = 0, 1, 2, 3


@dataclass
class ExperimentConfig:
    # environment
    env_kind: str = "chain"
    env_seed: int = 0
    num_states: int = 10
    num_actions: int = 3
    branching: int = 2
    num_costs: int = 1
    limits: tuple = (0.5,)
    grid_width: int = 0
    # algorithm
    algorithm: str = "acpo"
    delta: float = 1e-4
    gae_lambda: float = 0.95
    cost_gae_lambda: float = 0.95
    batch_size: int = 2500
    recovery_t: float = 0.75
    backtrack_coeff: float = 0.75
    backtrack_iters: int = 10
    line_search_slack: float = 0.0
    cg_iters: int = 10
    damping: float = 1e-5
    lagrangian_ell: float = 0.5
    gamma: float = 0.999
    # networks and critics
    hidden: tuple = (16, 16)
    init_log_std: object = None  # None: -1 for acpo / cpo-gamma, -0.5 for the atrpo variants
    policy_lr: float = 2e-4  # recorded only; trust-region steps have no policy learning rate
    critic_lr: float = 2e-4
    cost_critic_lr: float = 2e-4
    critic_epochs: int = 5
    critic_optimizer: str = "adam"
    critic_minibatch: int = 0
    normalize_states: bool = False
    # protocol
    seeds: tuple = (0, 1, 2, 3, 4)
    iterations: int = 500
    eval_every: int = 50
    eval_trajectories: int = 10
    eval_horizon: int = 1000
    fresh_kl_states: int = 1000
    certify_updates: bool = True
    plot: bool = False

    def __post_init__(self):
        self.limits = tuple(float(x) for x in self.limits)
        self.hidden = tuple(int(x) for x in self.hidden)
        self.seeds = tuple(int(x) for x in self.seeds)
        if self.algorithm not in KINDS:
            raise ValueError(f"algorithm must be one of {KINDS}")
        if self.iterations < 0 or self.eval_every < 1:
            raise ValueError("iterations must be >= 0 and eval_every >= 1")

    @property
    def env_spec(self):
        return EnvSpec(kind=self.env_kind, seed=self.env_seed, num_states=self.num_states,
                       num_actions=self.num_actions, branching=self.branching, num_costs=self.num_costs,
                       limits=self.limits, grid_width=self.grid_width)

    @property
    def log_std(self):
        if self.init_log_std is not None:
            return float(self.init_log_std)
        return -0.5 if self.algorithm.startswith("atrpo") else -1.0

    def update_config(self):
        return UpdateConfig(delta=self.delta, lam=self.gae_lambda, cost_lam=self.cost_gae_lambda,
                            batch_size=self.batch_size, recovery_t=self.recovery_t,
                            backtrack_coeff=self.backtrack_coeff, backtrack_iters=self.backtrack_iters,
                            slack=self.line_search_slack, limits=self.limits, critic_lr=self.critic_lr,
                            cost_critic_lr=self.cost_critic_lr, critic_epochs=self.critic_epochs,
                            critic_optimizer=self.critic_optimizer, critic_minibatch=self.critic_minibatch,
                            cg_iters=self.cg_iters, damping=self.damping,
                            fresh_kl_states=self.fresh_kl_states if self.algorithm != "atrpo-lagrangian" else 0)

    def dumps(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser[SECTION] = {f.name: repr(getattr(self, f.name)) for f in dataclasses.fields(self)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def loads(cls, text):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(text)
        if SECTION not in parser:
            raise ValueError(f"config needs an [{SECTION}] section")
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in parser[SECTION].items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            try:
                values[key] = ast.literal_eval(raw)
            except (ValueError, SyntaxError):
                values[key] = raw
        return cls(**values)

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def digest(self):
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:12]


def chain_benchmark_config(**overrides):
    """The binding-constraint chain benchmark (10 states, 3 actions, limit 0.5).

    The critic learning rate is raised from 2e-4: at that rate five epochs
    barely move a tabular critic, and the estimates stay dominated by noise.
    """
    base = dict(env_kind="chain", num_states=10, num_actions=3, limits=(0.5,), critic_lr=0.05,
                cost_critic_lr=0.05, iterations=500)
    base.update(overrides)
    return ExperimentConfig(**base)


def run_root(explicit=None):
    return Path(explicit or os.environ.get(RUN_ROOT_ENV) or "runs")


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalProtocol:
    trajectories: int = 10
    horizon: int = 1000


def evaluate_policy(env, policy, protocol=EvalProtocol(), seed=0):
    """Average reward and costs of the deterministic policy over independent trajectories.

    Returns (mean reward, mean costs, per-trajectory rows of (reward, costs)).
    """
    rows = []
    for k in range(protocol.trajectories):
        rng = np.random.default_rng([seed, EVAL_STREAM, k])
        if hasattr(env, "transition"):
            greedy = np.eye(env.num_actions)[np.argmax(policy.logits, 1)]
            start = int(min(np.searchsorted(sampling_cdf(env.initial_dist), rng.random(), side="right"),
                            env.num_states - 1))
            s, a, sp = kernels.tabular_rollout(sampling_cdf(greedy), sampling_cdf(env.transition), start,
                                               rng.random(2 * protocol.horizon))
            rewards = env.reward[s, a, sp]
            costs = np.stack([c[s, a, sp] for c in env.costs], 1) if env.num_costs else np.zeros((len(s), 0))
        else:
            state = env.initial_state(rng)
            rewards, costs = np.zeros(protocol.horizon), np.zeros((protocol.horizon, env.num_costs))
            for t in range(protocol.horizon):
                state, rewards[t], costs[t] = env.step(state, policy.deterministic_action(state), rng)
        rows.append((float(rewards.mean()), costs.mean(0)))
    mean_r = float(np.mean([r for r, _ in rows]))
    mean_c = np.mean([c for _, c in rows], axis=0)
    return mean_r, mean_c, rows


# -- training runs -----------------------------------------------------------------

@dataclass
class RunArtifacts:
    run_dir: Path
    iterations_csv: Path
    evaluations_csv: Path
    summary_json: Path
    params: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    plot: Path = None


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def iteration_columns(m):
    cols = ["seed", "iteration", "kind", "case", "kl", "fresh_kl", "exact_kl", "backtracks", "surrogate_change"]
    cols += [f"linearized_{i + 1}" for i in range(m)] + [f"constraint_value_{i + 1}" for i in range(m)]
    cols += ["gain_before"] + [f"cost_gain_before_{i + 1}" for i in range(m)]
    cols += ["gain_after"] + [f"cost_gain_after_{i + 1}" for i in range(m)]
    cols += ["exact_gain"] + [f"exact_cost_{i + 1}" for i in range(m)]
    cols += ["dual_lambda"] + [f"dual_mu_{i + 1}" for i in range(m)] + ["dual_gap_transcribed", "critic_loss"]
    cols += ["tr_degradation_lhs", "tr_degradation_rhs_beta", "tr_degradation_rhs_alpha_beta"]
    cols += [f"tr_violation_lhs_{i + 1}" for i in range(m)]
    cols += ["tr_violation_rhs_beta", "tr_violation_rhs_alpha_beta", "tr_holds_beta", "tr_holds_alpha_beta"]
    cols += ["tr_surrogate"] + [f"tr_linearized_{i + 1}" for i in range(m)] + ["tr_premise", "error"]
    return cols


def _vec(x, m):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return list(x) if len(x) == m else [float("nan")] * m


def _iteration_row(seed, k, rep, m, exact_vals, tr):
    row = [seed, k, rep.kind, rep.case or "-", rep.kl, rep.fresh_kl, exact_vals.get("kl", float("nan")),
           rep.backtracks, rep.surrogate_change]
    row += _vec(rep.linearized, m) + _vec(rep.constraint_value, m)
    row += [rep.gain_before] + _vec(rep.cost_gains_before, m)
    row += [rep.gain_after] + _vec(rep.cost_gains_after, m)
    row += [exact_vals.get("gain", float("nan"))] + _vec(exact_vals.get("costs", []), m)
    row += [rep.dual_lambda] + _vec(rep.dual_mu, m) + [rep.dual_gap_transcribed, rep.critic_loss]
    row += [tr.get("deg_lhs", float("nan")), tr.get("deg_beta", float("nan")), tr.get("deg_alpha_beta", float("nan"))]
    row += _vec(tr.get("viol_lhs", []), m)
    row += [tr.get("viol_beta", float("nan")), tr.get("viol_alpha_beta", float("nan")),
            tr.get("holds_beta", True), tr.get("holds_alpha_beta", True)]
    row += [tr.get("surrogate", float("nan"))] + _vec(tr.get("linearized", []), m)
    row += [tr.get("premise", True), rep.error or "-"]
    return [_fmt(x) for x in row]


def _certify(env, old, new, delta, limits):
    reports = {r.name: r for r in bounds.trust_region_guarantees(env, old, new, delta, limits)}
    m = env.num_costs
    out = {"deg_lhs": reports["trust-region-degradation[beta]"].lhs,
           "deg_beta": reports["trust-region-degradation[beta]"].rhs,
           "deg_alpha_beta": reports["trust-region-degradation[alpha-beta]"].rhs,
           "viol_lhs": [reports[f"trust-region-violation[beta][{i}]"].lhs for i in range(m)]}
    viol_beta = [reports[f"trust-region-violation[beta][{i}]"].rhs for i in range(m)]
    viol_ab = [reports[f"trust-region-violation[alpha-beta][{i}]"].rhs for i in range(m)]
    out["viol_beta"] = viol_beta[0] if m else float("nan")
    out["viol_alpha_beta"] = viol_ab[0] if m else float("nan")
    for variant, key in (("beta", "holds_beta"), ("alpha-beta", "holds_alpha_beta")):
        out[key] = all(r.holds for name, r in reports.items() if f"[{variant}]" in name)
    ctx = reports["trust-region-degradation[beta]"].context
    out["surrogate"], out["linearized"] = ctx["exact_surrogate"], ctx["exact_linearized_costs"]
    # What an exact optimum of the KL-ball problem from a feasible policy would
    # satisfy: feasible start, no exact surrogate loss, exact linearized costs
    # within the limits, KL within the ball.
    out["premise"] = (max(ctx["beta"], default=0.0) == 0.0
                      and ctx["exact_surrogate"] >= -bounds.HOLD_TOL
                      and max(ctx["exact_linearized_costs"], default=0.0) <= bounds.HOLD_TOL
                      and ctx["exact_mean_kl"] <= delta + bounds.HOLD_TOL)
    return out


def _initial_policy(config, env, seed):
    if hasattr(env, "transition"):
        return TabularSoftmaxPolicy(env.num_states, env.num_actions)
    return GaussianMLPPolicy(env.obs_dim, env.act_dim, config.hidden, seed=int(
        np.random.default_rng([seed, INIT_STREAM]).integers(2 ** 31)), init_log_std=config.log_std)


def _critics(config, env, seed):
    if hasattr(env, "transition"):
        return TabularCritic(env.num_states), [TabularCritic(env.num_states) for _ in range(env.num_costs)]
    base = int(np.random.default_rng([seed, INIT_STREAM]).integers(2 ** 31))
    return (MLPCritic(env.obs_dim, config.hidden, base + 1),
            [MLPCritic(env.obs_dim, config.hidden, base + 2 + i) for i in range(env.num_costs)])


def train_seed(config, env, seed, on_iteration=None, on_evaluation=None):
    """Train one seed; returns (final policy, iteration rows, evaluation rows, error message)."""
    tabular = hasattr(env, "transition")
    update_cfg = config.update_config()
    rng = np.random.default_rng([seed, TRAIN_STREAM])
    fresh_rng = np.random.default_rng([seed, FRESH_STREAM])
    policy = _initial_policy(config, env, seed)
    critic, cost_critics = _critics(config, env, seed)
    normalizer = RunningNormalizer(env.obs_dim) if (config.normalize_states and not tabular) else None
    protocol = EvalProtocol(config.eval_trajectories, config.eval_horizon)
    m = env.num_costs
    it_rows, ev_rows = [], []
    pending = None  # (iteration, report, exact values, certificate) waiting for "after" estimates
    start = None
    error = ""

    def evaluate(k):
        _, _, rows = evaluate_policy(env, policy, protocol, seed)
        for j, (r, c) in enumerate(rows):
            ev_rows.append([_fmt(x) for x in [seed, k, j, r, *_vec(c, m)]])

    def flush(next_batch):
        nonlocal pending
        k, rep, ex, tr = pending
        pending = None
        if next_batch is not None:
            rep.gain_after, rep.cost_gains_after = estimate_gains(next_batch)
        it_rows.append(_iteration_row(seed, k, rep, m, ex, tr))
        if on_iteration:
            on_iteration(k, rep, ex, tr)

    k = 0
    try:
        for k in range(config.iterations):
            if k % config.eval_every == 0:
                evaluate(k)
            batch = collect_batch(env, policy, config.batch_size, rng, start)
            start = batch.final_state
            if pending:
                flush(batch)
            if normalizer is not None:
                normalizer.update(batch.states)
                for obj in [policy, critic, *cost_critics]:
                    obj.obs_shift, obj.obs_scale = normalizer.mean.copy(), normalizer.std.copy()
                batch.log_probs = policy.log_prob(batch.states, batch.actions)
            new_policy, rep, _ = baseline_iteration(config.algorithm, env, policy, critic, cost_critics,
                                                    update_cfg, rng, ell=config.lagrangian_ell,
                                                    gamma=config.gamma, batch=batch, fresh_rng=fresh_rng)
            rep.iteration = k
            ex, tr = {}, {}
            if tabular:
                old_m, new_m = policy.matrix(), new_policy.matrix()
                ev = exact.gain_bias_advantage(env, new_m)
                ex = {"gain": ev.gain, "costs": ev.cost_gains,
                      "kl": float(exact.policy_chain(env, old_m).d_pi @ new_policy.kl_to(policy, np.arange(env.num_states)))}
                if config.certify_updates and m and rep.kind != "no-update":
                    tr = _certify(env, old_m, new_m, config.delta, np.asarray(config.limits))
            policy = new_policy
            pending = (k, rep, ex, tr)
        if pending:
            flush(collect_batch(env, policy, config.batch_size, rng, start) if config.iterations else None)
    except Exception as exc:  # recorded; the remaining seeds still run
        error = f"{type(exc).__name__}: {exc}"
        if pending:
            flush(None)
        it_rows.append(_iteration_row(seed, k, IterationReport(iteration=k, error=error), m, {}, {}))
    evaluate(config.iterations)
    return policy, it_rows, ev_rows, error


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return None if not np.isfinite(x) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def summarize(config, iteration_csv, evaluation_csv, oracle_gain=None, errors=None):
    """Summary statistics computed from the raw CSV files."""
    m = len(config.limits)
    with open(iteration_csv, encoding="utf-8") as fh:
        it_rows = list(csv.DictReader(fh))
    with open(evaluation_csv, encoding="utf-8") as fh:
        ev_rows = list(csv.DictReader(fh))
    per_seed = {}
    for seed in config.seeds:
        rows = [r for r in it_rows if int(r["seed"]) == seed]
        evs = [r for r in ev_rows if int(r["seed"]) == seed]
        last_it = max((int(r["iteration"]) for r in evs), default=None)
        final_evs = [r for r in evs if int(r["iteration"]) == last_it]
        entry = {
            "iterations": len(rows),
            "final_exact_gain": float(rows[-1]["exact_gain"]) if rows else float("nan"),
            "final_exact_costs": [float(rows[-1][f"exact_cost_{i + 1}"]) for i in range(m)] if rows
            else [float("nan")] * m,
            "final_eval_reward": float(np.mean([float(r["average_reward"]) for r in final_evs]))
            if final_evs else float("nan"),
            "final_eval_costs": [float(np.mean([float(r[f"average_cost_{i + 1}"]) for r in final_evs]))
                                 if final_evs else float("nan") for i in range(m)],
            "violation_rate": [float(np.mean([float(r[f"cost_gain_before_{i + 1}"]) > config.limits[i]
                                              for r in rows])) if rows else float("nan") for i in range(m)],
            "error": (errors or {}).get(seed, ""),
        }
        per_seed[str(seed)] = entry

    def agg(key, index=None):
        vals = np.array([e[key] if index is None else e[key][index] for e in per_seed.values()], dtype=float)
        return {"mean": float(np.mean(vals)), "std": float(np.std(vals))} if len(vals) else {}

    summary = {"algorithm": config.algorithm, "env": config.env_kind, "config_digest": config.digest(),
               "seeds": per_seed,
               "final_exact_gain": agg("final_exact_gain"),
               "final_exact_costs": [agg("final_exact_costs", i) for i in range(m)],
               "final_eval_reward": agg("final_eval_reward"),
               "final_eval_costs": [agg("final_eval_costs", i) for i in range(m)],
               "violation_rate": [agg("violation_rate", i) for i in range(m)],
               "limits": list(config.limits)}
    if oracle_gain is not None:
        summary["oracle_gain"] = oracle_gain
        mean = summary["final_exact_gain"].get("mean", float("nan"))
        summary["relative_gap"] = (oracle_gain - mean) / abs(oracle_gain) if oracle_gain else float("nan")
    return _clean(summary)


def run_experiment(config, root=None, on_iteration=None):
    """Train every configured seed and write the run directory (named by config digest)."""
    env = make_env(config.env_spec)
    run_dir = run_root(root) / f"{config.algorithm}-{config.env_kind}-{config.digest()}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(config.dumps(), encoding="utf-8")
    m = env.num_costs
    it_rows, ev_rows, params, errors = [], [], {}, {}
    for seed in config.seeds:
        cb = (lambda k, rep, ex, tr, s=seed: on_iteration(s, k, rep, ex, tr)) if on_iteration else None
        policy, its, evs, error = train_seed(config, env, seed, on_iteration=cb)
        it_rows += its
        ev_rows += evs
        if error:
            errors[seed] = error
        path = run_dir / f"params_seed{seed}.txt"
        save_params(policy, path)
        params[seed] = path
    it_csv, ev_csv = run_dir / "iterations.csv", run_dir / "evaluations.csv"
    _write_csv(it_csv, iteration_columns(m), it_rows)
    _write_csv(ev_csv, ["seed", "iteration", "trajectory", "average_reward"]
               + [f"average_cost_{i + 1}" for i in range(m)], ev_rows)
    oracle = exact.solve_constrained_optimal(env).gain if hasattr(env, "transition") else None
    summary = summarize(config, it_csv, ev_csv, oracle, errors)
    summary_path = run_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts = RunArtifacts(run_dir, it_csv, ev_csv, summary_path, params, summary)
    if config.plot:
        artifacts.plot = plot_run(it_csv, run_dir / "curves.svg", config.limits)
    return artifacts


def evaluate_run(run_dir, protocol=None):
    """Re-evaluate the saved final policies of a run; writes reevaluation.csv."""
    run_dir = Path(run_dir)
    config = ExperimentConfig.load(run_dir / "config.ini")
    env = make_env(config.env_spec)
    protocol = protocol or EvalProtocol(config.eval_trajectories, config.eval_horizon)
    m = env.num_costs
    rows, results = [], {}
    for seed in config.seeds:
        policy = load_params(run_dir / f"params_seed{seed}.txt")
        r, c, traj = evaluate_policy(env, policy, protocol, seed)
        results[seed] = (r, c)
        for j, (tr, tc) in enumerate(traj):
            rows.append([_fmt(x) for x in [seed, j, tr, *_vec(tc, m)]])
    _write_csv(run_dir / "reevaluation.csv", ["seed", "trajectory", "average_reward"]
               + [f"average_cost_{i + 1}" for i in range(m)], rows)
    return results


def plot_run(iterations_csv, out_path, limits):
    """Reward and cost curves (mean over seeds) as an SVG; the cost limit is a dashed line."""
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    with open(iterations_csv, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    iters = sorted({int(r["iteration"]) for r in rows})
    key = "exact_gain" if rows and rows[0]["exact_gain"] != "nan" else "gain_before"
    cost_key = "exact_cost_1" if key == "exact_gain" else "cost_gain_before_1"

    def curve(col):
        return [np.mean([float(r[col]) for r in rows if int(r["iteration"]) == k]) for k in iters]

    plt.rcParams["svg.hashsalt"] = "acpo"
    fig, (ax_r, ax_c) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_r.plot(iters, curve(key))
    ax_r.set(xlabel="iteration", ylabel="average reward")
    if limits:
        ax_c.plot(iters, curve(cost_key))
        ax_c.axhline(limits[0], linestyle="--", color="k")
    ax_c.set(xlabel="iteration", ylabel="average cost")
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(out_path)


# -- bound certification suite --------------------------------------------------------

@dataclass
class SuiteRow:
    seed: int
    report: bounds.BoundReport
    asserted: bool = True


def _draw_sizes(rng, max_states=8, max_actions=4):
    return int(rng.integers(2, max_states + 1)), int(rng.integers(2, max_actions + 1))


def _trust_region_rows(seed, model, pi, delta, rng, identical):
    """Worst-case guarantees on an exact optimum of the KL-ball problem.

    Asserted (both penalty variants) when the current policy is feasible. From
    an infeasible policy the optimum can be forced to trade reward below the
    degradation radius, so those rows are reported only.
    """
    ev = exact.gain_bias_advantage(model, pi)
    if identical:
        limits = np.maximum(model.limits, ev.cost_gains)
        new, method = pi, "direct"
    else:
        limits = ev.cost_gains + rng.uniform(-0.02, 0.05, size=model.num_costs)
        step = bounds.exact_trust_region_step(model, pi, delta, limits)
        new, method = step.policy, step.method
    rows = []
    for r in bounds.trust_region_guarantees(model, pi, new, delta, limits):
        r.context["method"] = method
        r.context["limits"] = np.asarray(limits).tolist()
        rows.append(SuiteRow(seed, r, asserted=max(r.context["beta"], default=0.0) == 0.0))
    return rows


def verify_bounds_suite(seeds, sigma_override=None, identical=False, num_policy_samples=100, delta=1e-3):
    """All bound checks over a seed range; returns SuiteRow objects.

    Per seed: a random garnet model and policy pair for the identity, surrogate,
    improvement/cost sandwiches, Pinsker and trust-region checks; a random
    birth-death (reversible) model for the stationary-TV bound, plus the same
    bound reported (not asserted) on the non-reversible garnet; the
    worst-case guarantees of an exact KL-ball update; the discounted-penalty
    growth across gamma in {0.9, 0.99, 0.999}.
    """
    out = []
    for seed in seeds:
        rng = np.random.default_rng([seed, 7])
        nS, nA = _draw_sizes(rng)
        garnet = make_env(EnvSpec(kind="garnet", seed=seed, num_states=nS, num_actions=nA, branching=2,
                                  num_costs=1, limits=(0.5,)))
        pi = exact.random_policy(rng, nS, nA)
        pi2 = pi.copy() if identical else exact.random_policy(rng, nS, nA)
        reports = [bounds.check_policy_difference_identity(garnet, pi, pi2),
                   bounds.check_surrogate_error_bound(garnet, pi, pi2)]
        reports += bounds.improvement_bounds(garnet, pi, pi2, sigma_star=sigma_override, rng=rng,
                                             num_samples=num_policy_samples).reports
        out += [SuiteRow(seed, r) for r in reports]
        tv_garnet = bounds.check_stationary_tv_bound(garnet, pi, pi2, sigma_star=sigma_override, rng=rng,
                                                     num_samples=num_policy_samples)
        tv_garnet.name = "stationary-tv[non-reversible]"
        out.append(SuiteRow(seed, tv_garnet, asserted=False))

        bS, bA = _draw_sizes(rng)
        chain = make_env(EnvSpec(kind="birth-death", seed=seed, num_states=bS, num_actions=bA, num_costs=1,
                                 limits=(0.5,)))
        q = exact.random_policy(rng, bS, bA)
        q2 = q.copy() if identical else exact.random_policy(rng, bS, bA)
        out.append(SuiteRow(seed, bounds.check_stationary_tv_bound(chain, q, q2, sigma_star=sigma_override,
                                                                   rng=rng, num_samples=num_policy_samples)))

        out += _trust_region_rows(seed, garnet, pi, delta, rng, identical)

        if not identical:
            series = bounds.trivialization_demo(garnet, pi, pi2, [0.9, 0.99, 0.999])
            for a, b in zip(series, series[1:]):
                out.append(SuiteRow(seed, bounds.BoundReport(
                    f"discounted-penalty-growth[{a.gamma}->{b.gamma}]", a.penalty, b.penalty,
                    {"factor_ratio": b.factor / a.factor})))
    return out


def write_suite_csv(rows, path):
    _write_csv(path, ["name", "seed", "lhs", "rhs", "slack", "holds", "asserted"],
               [[r.report.name, r.seed, _fmt(r.report.lhs), _fmt(r.report.rhs), _fmt(r.report.slack),
                 _fmt(r.report.holds), _fmt(r.asserted)] for r in rows])


def suite_failures(rows):
    return [r for r in rows if r.asserted and not r.report.holds]
