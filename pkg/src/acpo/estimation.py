"""Rollouts, gain estimates, average-reward GAE and critic regression."""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .policy import init_layers, layer_shapes, mlp_forward, mlp_vjp, unpack_layers


@dataclass
class RolloutBatch:
    """One contiguous stretch of a continuing trajectory."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray  # (N, m)
    next_states: np.ndarray
    log_probs: np.ndarray
    seed: object = None

    def __len__(self):
        return len(self.rewards)

    @property
    def num_costs(self):
        return self.costs.shape[1]

    @property
    def final_state(self):
        return self.next_states[-1]

    def to_csv(self, path):
        n = len(self)
        states = self.states.reshape(n, -1)
        actions = self.actions.reshape(n, -1)
        nexts = self.next_states.reshape(n, -1)
        cols = ["t"]
        cols += [f"s{j}" for j in range(states.shape[1])] if states.shape[1] > 1 else ["s"]
        cols += [f"a{j}" for j in range(actions.shape[1])] if actions.shape[1] > 1 else ["a"]
        cols += ["r"] + [f"c{i + 1}" for i in range(self.num_costs)]
        cols += [f"next_s{j}" for j in range(nexts.shape[1])] if nexts.shape[1] > 1 else ["next_s"]
        cols.append("log_prob")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for t in range(n):
                writer.writerow([t, *map(_fmt, states[t]), *map(_fmt, actions[t]), _fmt(self.rewards[t]),
                                 *map(_fmt, self.costs[t]), *map(_fmt, nexts[t]), _fmt(self.log_probs[t])])


def _fmt(x):
    return str(int(x)) if isinstance(x, (np.integer, int)) else repr(float(x))


def sampling_cdf(probs):
    """Cumulative sums along the last axis, pinned to 1 after the last positive entry.

    The pin keeps an inverse-CDF draw from landing on a trailing zero-probability
    outcome when the float cumulative sum falls just short of 1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, -1)
    tail = np.cumsum(probs[..., ::-1], -1)[..., ::-1]
    cdf[(tail - probs) == 0.0] = 1.0
    return cdf


def collect_batch(env, policy, N, rng, start_state=None):
    """N transitions of one continuing trajectory under ``policy``.

    Tabular models start from ``start_state`` or a draw from the initial
    distribution; the continuous environment starts from its rest state.
    """
    if N < 2:
        raise ValueError("batch size must be at least 2")
    if hasattr(env, "transition"):
        if start_state is None:
            start_state = int(min(np.searchsorted(sampling_cdf(env.initial_dist), rng.random(), side="right"),
                                  env.num_states - 1))
        states, actions, nexts = kernels.tabular_rollout(
            sampling_cdf(policy.matrix()), sampling_cdf(env.transition), int(start_state), rng.random(2 * N))
        rewards = env.reward[states, actions, nexts]
        costs = np.stack([c[states, actions, nexts] for c in env.costs], axis=1) if env.num_costs \
            else np.zeros((N, 0))
    else:
        s = env.initial_state(rng) if start_state is None else np.asarray(start_state, dtype=np.float64)
        states, actions, nexts = [], [], []
        rewards, costs = np.zeros(N), np.zeros((N, env.num_costs))
        for t in range(N):
            a = policy.sample_action(s, rng)
            sp, rewards[t], costs[t] = env.step(s, a, rng)
            states.append(s)
            actions.append(a)
            nexts.append(sp)
            s = sp
        states, actions, nexts = np.array(states), np.array(actions), np.array(nexts)
    return RolloutBatch(states, actions, rewards, costs, nexts, policy.log_prob(states, actions))


def estimate_gains(batch):
    """Batch means of the reward and of each cost stream."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return float(np.mean(batch.rewards)), batch.costs.mean(0)


# -- critics ----------------------------------------------------------------

class TabularCritic:
    flavor = "tabular"

    def __init__(self, num_states, theta=None):
        self.theta = np.zeros(num_states) if theta is None else np.array(theta, dtype=np.float64)

    def values(self, states):
        return self.theta[np.asarray(states)]

    def vjp(self, states, weights):
        out = np.zeros_like(self.theta)
        np.add.at(out, np.asarray(states), weights)
        return out


def quadratic_features(states):
    x = np.atleast_2d(np.asarray(states, dtype=np.float64))
    return np.hstack([np.ones((len(x), 1)), x, x ** 2])


class LinearCritic:
    flavor = "linear"

    def __init__(self, num_features, features=quadratic_features, theta=None):
        self.features = features
        self.theta = np.zeros(num_features) if theta is None else np.array(theta, dtype=np.float64)

    def values(self, states):
        return self.features(states) @ self.theta

    def vjp(self, states, weights):
        return self.features(states).T @ weights


class MLPCritic:
    flavor = "mlp"

    def __init__(self, obs_dim, hidden=(16, 16), seed=0, theta=None):
        self.shapes = layer_shapes((obs_dim,) + tuple(hidden) + (1,))
        self.obs_shift, self.obs_scale = np.zeros(obs_dim), np.ones(obs_dim)
        self.theta = init_layers(np.random.default_rng(seed), self.shapes) if theta is None \
            else np.array(theta, dtype=np.float64)

    def _acts(self, states):
        x = (np.atleast_2d(np.asarray(states, dtype=np.float64)) - self.obs_shift) / self.obs_scale
        return mlp_forward(unpack_layers(self.theta, self.shapes)[0], x)

    def values(self, states):
        return self._acts(states)[-1][:, 0]

    def vjp(self, states, weights):
        acts = self._acts(states)
        return mlp_vjp(unpack_layers(self.theta, self.shapes)[0], acts, np.asarray(weights)[:, None])


def make_critic(env, flavor, hidden=(16, 16), seed=0):
    if flavor == "tabular":
        return TabularCritic(env.num_states)
    if flavor == "linear":
        return LinearCritic(1 + 2 * env.obs_dim)
    if flavor == "mlp":
        return MLPCritic(env.obs_dim, hidden, seed)
    raise ValueError(f"unknown critic flavor {flavor!r}")


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def step(self, theta, grad):
        if self.m is None:
            self.m, self.v = np.zeros_like(theta), np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def critic_loss(critic, states, targets):
    return float(np.mean((critic.values(states) - targets) ** 2))


def fit_critic(critic, states, targets, learning_rate, epochs, optimizer="gd", minibatch=None, rng=None):
    """Mean-squared-error regression of the critic toward ``targets``, in place.

    ``optimizer`` is "gd" (plain gradient descent) or "adam". Without
    ``minibatch`` every step uses the full-batch gradient. Returns the
    full-batch loss after each epoch.
    """
    targets = np.asarray(targets, dtype=np.float64)
    n = len(targets)
    if optimizer not in ("gd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    adam = AdamState(learning_rate) if optimizer == "adam" else None
    size = n if minibatch is None else int(minibatch)
    rng = np.random.default_rng(0) if rng is None else rng
    trace = []
    for _ in range(epochs):
        order = np.arange(n) if size >= n else rng.permutation(n)
        for start in range(0, n, size):
            idx = order[start:start + size]
            sub = states[idx]
            grad = critic.vjp(sub, 2.0 * (critic.values(sub) - targets[idx]) / len(idx))
            critic.theta = adam.step(critic.theta, grad) if adam else critic.theta - learning_rate * grad
        with np.errstate(invalid="ignore", over="ignore"):
            loss = critic_loss(critic, states, targets)
        if not np.isfinite(loss):
            raise FloatingPointError("critic loss diverged")
        trace.append(loss)
    return trace


class RunningNormalizer:
    """Running mean/std of observations (parallel-merge update)."""

    def __init__(self, dim):
        self.count, self.mean, self.m2 = 0, np.zeros(dim), np.zeros(dim)

    def update(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = len(x)
        mean_b = x.mean(0)
        delta = mean_b - self.mean
        total = self.count + n
        self.m2 = self.m2 + ((x - mean_b) ** 2).sum(0) + delta ** 2 * self.count * n / total
        self.mean = self.mean + delta * n / total
        self.count = total

    @property
    def std(self):
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.maximum(np.sqrt(self.m2 / self.count), 1e-8)


# -- advantages -------------------------------------------------------------

@dataclass
class AdvantageEstimates:
    reward: np.ndarray
    costs: np.ndarray  # (m, N)
    reward_targets: np.ndarray
    cost_targets: np.ndarray
    gain: float
    cost_gains: np.ndarray
    lam: float
    cost_lam: float
    deltas: np.ndarray = field(default=None, repr=False)


def gae_stream(rewards, values, next_values, gain, lam, gamma=1.0):
    """Advantages and critic targets for one stream.

    delta_t = r_t - gain + gamma V(s_{t+1}) - V(s_t) and
    A_t = sum_{t' >= t} (gamma lam)^{t'-t} delta_{t'}, truncated at the batch end.
    The target is r_t - gain + gamma V(s_{t+1}) + gamma lam A_{t+1}, which equals
    V(s_t) + A_t. ``gamma = 1`` gives the average-reward estimator.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    one_step = np.asarray(rewards, dtype=np.float64) - gain + gamma * np.asarray(next_values)
    deltas = one_step - values
    coef = gamma * lam
    adv = kernels.backward_accumulate(deltas, coef)
    tail = np.append(adv[1:], 0.0)
    return adv, one_step + coef * tail, deltas


def average_gae(batch, critic, gain, lam, cost_critics=(), cost_gains=(), cost_lam=None, gamma=1.0):
    """Reward and cost advantages through one shared code path (``gae_stream``)."""
    cost_lam = lam if cost_lam is None else cost_lam
    if len(cost_critics) != batch.num_costs or len(cost_gains) != batch.num_costs:
        raise ValueError("need one critic and one gain estimate per cost")
    adv, targets, deltas = gae_stream(batch.rewards, critic.values(batch.states),
                                      critic.values(batch.next_states), gain, lam, gamma)
    cost_out = [gae_stream(batch.costs[:, i], c.values(batch.states), c.values(batch.next_states),
                           cost_gains[i], cost_lam, gamma)
                for i, c in enumerate(cost_critics)]
    n = len(batch)
    return AdvantageEstimates(
        reward=adv,
        costs=np.array([o[0] for o in cost_out]).reshape(-1, n),
        reward_targets=targets,
        cost_targets=np.array([o[1] for o in cost_out]).reshape(-1, n),
        gain=float(gain),
        cost_gains=np.asarray(cost_gains, dtype=np.float64),
        lam=lam,
        cost_lam=cost_lam,
        deltas=deltas,
    )
