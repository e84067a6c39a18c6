"""Parameterized policies and the second-order machinery around them.

Two flavors share one interface: a tabular softmax over logits ``theta[s, a]``
and a diagonal Gaussian whose mean is a small tanh MLP of the observation and
whose log-std is a free, state-independent vector. Both expose a flat
parameter vector, score-function gradients, the mean KL and its gradient, and
KL-Hessian-vector products through the Fisher identity (the Hessian of the
mean KL at new = old equals the Fisher matrix).
"""

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_DAMPING = 1e-5


def _softmax(logits):
    z = logits - logits.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def _log_softmax(logits):
    z = logits - logits.max(-1, keepdims=True)
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


class TabularSoftmaxPolicy:
    flavor = "tabular-softmax"

    def __init__(self, num_states, num_actions, theta=None):
        self.num_states, self.num_actions = int(num_states), int(num_actions)
        self.theta = np.zeros(self.dim) if theta is None else np.array(theta, dtype=np.float64).reshape(-1)
        if self.theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {self.theta.size}")

    @property
    def dim(self):
        return self.num_states * self.num_actions

    @property
    def shape(self):
        return (self.num_states, self.num_actions)

    @property
    def logits(self):
        return self.theta.reshape(self.shape)

    def with_theta(self, theta):
        return TabularSoftmaxPolicy(self.num_states, self.num_actions, theta)

    @classmethod
    def from_matrix(cls, policy, floor=1e-12):
        """Logits reproducing a row-stochastic matrix (zeros clipped to ``floor``)."""
        logits = np.log(np.maximum(np.asarray(policy, dtype=np.float64), floor))
        return cls(*logits.shape, logits - logits.mean(1, keepdims=True))

    def matrix(self):
        return _softmax(self.logits)

    def probs(self, states):
        return _softmax(self.logits[np.asarray(states)])

    def log_prob(self, states, actions):
        states, actions = np.asarray(states), np.asarray(actions)
        return _log_softmax(self.logits[states])[..., actions] if states.ndim == 0 else \
            _log_softmax(self.logits[states])[np.arange(len(states)), actions]

    def sample_action(self, state, rng):
        cdf = np.cumsum(self.probs(state))
        return int(min(np.searchsorted(cdf, rng.random(), side="right"), self.num_actions - 1))

    def deterministic_action(self, state):
        return int(np.argmax(self.logits[state]))

    def score_vjp(self, states, actions, weights):
        """sum_i weights[i] * grad log pi(actions[i] | states[i])."""
        states, actions = np.asarray(states), np.asarray(actions)
        w = np.asarray(weights, dtype=np.float64)
        out = np.zeros(self.shape)
        np.add.at(out, (states, actions), w)
        np.add.at(out, states, -w[:, None] * self.probs(states))
        return out.reshape(-1)

    def kl_to(self, old, states):
        """Per-state KL(self || old)."""
        lp, lq = _log_softmax(self.logits[states]), _log_softmax(old.logits[states])
        return (np.exp(lp) * (lp - lq)).sum(-1)

    def kl_gradient(self, old, states):
        """Gradient of mean KL(self || old) over ``states`` in self's parameters."""
        states = np.asarray(states)
        lp, lq = _log_softmax(self.logits[states]), _log_softmax(old.logits[states])
        p = np.exp(lp)
        diff = lp - lq
        rows = p * (diff - (p * diff).sum(-1, keepdims=True))
        out = np.zeros(self.shape)
        np.add.at(out, states, rows)
        return out.reshape(-1) / len(states)

    def fisher_vector_product(self, states, v):
        states = np.asarray(states)
        p = self.probs(states)
        vs = np.asarray(v, dtype=np.float64).reshape(self.shape)[states]
        rows = p * (vs - (p * vs).sum(-1, keepdims=True))
        out = np.zeros(self.shape)
        np.add.at(out, states, rows)
        return out.reshape(-1) / len(states)

    def header(self):
        return {"flavor": self.flavor, "shape": f"{self.num_states},{self.num_actions}"}


def layer_shapes(sizes):
    return [(o, i) for i, o in zip(sizes[:-1], sizes[1:])]


def init_layers(rng, shapes, last_scale=1.0):
    parts = []
    for k, (o, i) in enumerate(shapes):
        scale = (last_scale if k == len(shapes) - 1 else 1.0) / np.sqrt(i)
        parts += [rng.normal(0.0, scale, o * i), np.zeros(o)]
    return np.concatenate(parts)


def unpack_layers(theta, shapes):
    """Split a flat vector into [(W, b), ...] views; also returns the unused tail."""
    layers, k = [], 0
    for o, i in shapes:
        W = theta[k:k + o * i].reshape(o, i)
        k += o * i
        layers.append((W, theta[k:k + o]))
        k += o
    return layers, theta[k:]


def mlp_forward(layers, x):
    """Activations of a tanh MLP with a linear output layer; acts[0] is the input."""
    acts = [x]
    for k, (W, b) in enumerate(layers):
        z = acts[-1] @ W.T + b
        acts.append(z if k == len(layers) - 1 else np.tanh(z))
    return acts


def mlp_vjp(layers, acts, grad_out):
    """Flat parameter gradient of sum(grad_out * output)."""
    grads, g = [], grad_out
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads.append((g.T @ acts[k], g.sum(0)))
        if k:
            g = (g @ W) * (1.0 - acts[k] ** 2)
    parts = []
    for dW, db in reversed(grads):
        parts += [dW.reshape(-1), db]
    return np.concatenate(parts)


def mlp_jvp(layers, dlayers, acts):
    """Output perturbation for a parameter perturbation ``dlayers``."""
    dh = np.zeros_like(acts[0])
    for k, ((W, _), (dW, db)) in enumerate(zip(layers, dlayers)):
        dz = dh @ W.T + acts[k] @ dW.T + db
        dh = dz if k == len(layers) - 1 else dz * (1.0 - acts[k + 1] ** 2)
    return dh


class GaussianMLPPolicy:
    """Diagonal Gaussian with tanh-MLP mean and state-independent log-std.

    Parameter layout: for each layer, W (out x in) row-major then b; finally
    the log-std vector. ``obs_shift``/``obs_scale`` normalize observations and
    are not trained.
    """

    flavor = "gaussian-mlp"

    def __init__(self, obs_dim, act_dim, hidden=(16, 16), theta=None, seed=0, init_log_std=-1.0,
                 obs_shift=None, obs_scale=None):
        self.obs_dim, self.act_dim, self.hidden = int(obs_dim), int(act_dim), tuple(int(h) for h in hidden)
        sizes = (self.obs_dim,) + self.hidden + (self.act_dim,)
        self.layer_shapes = layer_shapes(sizes)
        self.obs_shift = np.zeros(self.obs_dim) if obs_shift is None else np.asarray(obs_shift, dtype=np.float64)
        self.obs_scale = np.ones(self.obs_dim) if obs_scale is None else np.asarray(obs_scale, dtype=np.float64)
        if theta is None:
            net = init_layers(np.random.default_rng(seed), self.layer_shapes, last_scale=0.1)
            theta = np.concatenate([net, np.full(self.act_dim, float(init_log_std))])
        self.theta = np.array(theta, dtype=np.float64).reshape(-1)
        if self.theta.size != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {self.theta.size}")

    @property
    def dim(self):
        return sum(o * i + o for o, i in self.layer_shapes) + self.act_dim

    def with_theta(self, theta):
        return GaussianMLPPolicy(self.obs_dim, self.act_dim, self.hidden, theta,
                                 obs_shift=self.obs_shift, obs_scale=self.obs_scale)

    def _unpack(self, theta=None):
        return unpack_layers(self.theta if theta is None else theta, self.layer_shapes)

    @property
    def log_std(self):
        return self.theta[-self.act_dim:]

    def _inputs(self, states):
        return (np.atleast_2d(np.asarray(states, dtype=np.float64)) - self.obs_shift) / self.obs_scale

    def _forward(self, states):
        return mlp_forward(self._unpack()[0], self._inputs(states))

    def mean(self, states):
        return self._forward(states)[-1]

    def _mean_vjp(self, acts, grad_mean):
        return mlp_vjp(self._unpack()[0], acts, grad_mean)

    def _mean_jvp(self, acts, v):
        return mlp_jvp(self._unpack()[0], self._unpack(np.asarray(v, dtype=np.float64))[0], acts)

    def log_prob(self, states, actions):
        mu = self.mean(states)
        z = (np.atleast_2d(actions) - mu) / np.exp(self.log_std)
        return -0.5 * (z ** 2).sum(-1) - self.log_std.sum() - 0.5 * self.act_dim * LOG_2PI

    def sample_action(self, state, rng):
        return self.mean(state)[0] + np.exp(self.log_std) * rng.standard_normal(self.act_dim)

    def deterministic_action(self, state):
        return self.mean(state)[0]

    def score_vjp(self, states, actions, weights):
        acts = self._forward(states)
        std = np.exp(self.log_std)
        w = np.asarray(weights, dtype=np.float64)[:, None]
        z = (np.atleast_2d(actions) - acts[-1]) / std
        g_net = self._mean_vjp(acts, w * z / std)
        g_log_std = (w * (z ** 2 - 1.0)).sum(0)
        return np.concatenate([g_net, g_log_std])

    def kl_to(self, old, states):
        mu1, mu0 = self.mean(states), old.mean(states)
        ls1, ls0 = self.log_std, old.log_std
        return (ls0 - ls1 + (np.exp(2 * ls1) + (mu1 - mu0) ** 2) / (2 * np.exp(2 * ls0)) - 0.5).sum(-1)

    def kl_gradient(self, old, states):
        acts = self._forward(states)
        mu0 = old.mean(states)
        n = len(acts[0])
        var0 = np.exp(2 * old.log_std)
        g_net = self._mean_vjp(acts, (acts[-1] - mu0) / var0) / n
        g_log_std = np.exp(2 * self.log_std) / var0 - 1.0
        return np.concatenate([g_net, g_log_std])

    def fisher_vector_product(self, states, v):
        v = np.asarray(v, dtype=np.float64)
        acts = self._forward(states)
        n = len(acts[0])
        jv = self._mean_jvp(acts, v[:-self.act_dim])
        g_net = self._mean_vjp(acts, jv / np.exp(2 * self.log_std)) / n
        return np.concatenate([g_net, 2.0 * v[-self.act_dim:]])

    def header(self):
        sizes = (self.obs_dim,) + self.hidden + (self.act_dim,)
        return {"flavor": self.flavor, "shape": ",".join(map(str, sizes)),
                "obs_shift": ",".join(repr(float(x)) for x in self.obs_shift),
                "obs_scale": ",".join(repr(float(x)) for x in self.obs_scale)}


def _same_flavor(a, b):
    if a.flavor != b.flavor or a.dim != b.dim:
        raise ValueError(f"policy mismatch: {a.flavor}/{a.dim} vs {b.flavor}/{b.dim}")


def log_prob(params, states, actions):
    return params.log_prob(states, actions)


def sample_action(params, state, rng):
    return params.sample_action(state, rng)


def mean_kl(params_new, params_old, states):
    """Average over ``states`` of KL(pi_new(.|s) || pi_old(.|s))."""
    _same_flavor(params_new, params_old)
    return float(np.mean(params_new.kl_to(params_old, states)))


def mean_kl_gradient(params_new, params_old, states):
    _same_flavor(params_new, params_old)
    return params_new.kl_gradient(params_old, states)


def surrogate_gradient(params, states, actions, advantages):
    """Score-function estimate mean_t grad log pi(a_t|s_t) * A_t."""
    advantages = np.asarray(advantages, dtype=np.float64)
    if len(advantages) != len(actions):
        raise ValueError("advantages must align with the batch")
    return params.score_vjp(states, actions, advantages) / len(advantages)


def surrogate_value(theta, params, states, actions, advantages, old_log_prob):
    """Importance-weighted surrogate mean_t pi_theta/pi_old * A_t; its gradient at the old parameters is the surrogate gradient."""
    ratio = np.exp(params.with_theta(theta).log_prob(states, actions) - old_log_prob)
    return float(np.mean(ratio * advantages))


@dataclass
class LinearOperator:
    dim: int
    apply: object

    def __call__(self, v):
        return self.apply(v)

    def dense(self):
        return np.column_stack([self.apply(e) for e in np.eye(self.dim)])


def kl_hessian_vector_product(params, states, v, damping=DEFAULT_DAMPING):
    """(H + damping I) v, with H the Hessian of the mean KL at new = old."""
    return params.fisher_vector_product(states, v) + damping * np.asarray(v, dtype=np.float64)


def kl_hessian_operator(params, states, damping=DEFAULT_DAMPING):
    return LinearOperator(params.dim, lambda v: kl_hessian_vector_product(params, states, v, damping))


@dataclass
class CGResult:
    x: np.ndarray
    residual: float
    iterations: int


def conjugate_gradient(op, b, max_iters=10, tol=1e-10):
    """Solve op(x) = b; stops once ||op(x) - b|| <= tol * ||b||, otherwise returns the best iterate."""
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise FloatingPointError("non-finite right-hand side")
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    b_norm = np.sqrt(rr)
    best_x, best_res, it = x.copy(), b_norm, 0
    if b_norm == 0.0:
        return CGResult(x, 0.0, 0)
    for it in range(1, max_iters + 1):
        Ap = op(p)
        pAp = p @ Ap
        if not np.isfinite(pAp):
            raise FloatingPointError("non-finite curvature in conjugate gradient")
        if pAp <= 0.0:
            break
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = r @ r
        res = np.sqrt(rr_new)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol * b_norm:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(best_x, float(best_res), it)


def save_params(params, path):
    header = " ".join(f"{k}={v}" for k, v in params.header().items())
    body = "\n".join(repr(float(x)) for x in params.theta)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{header} size={params.dim}\n{body}\n")


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].split())
    theta = np.array([float(x) for x in lines[1:] if x.strip()])
    if len(theta) != int(meta["size"]):
        raise ValueError(f"{path}: header says {meta['size']} values, found {len(theta)}")
    shape = [int(x) for x in meta["shape"].split(",")]
    if meta["flavor"] == TabularSoftmaxPolicy.flavor:
        return TabularSoftmaxPolicy(*shape, theta)
    if meta["flavor"] == GaussianMLPPolicy.flavor:
        vec = lambda key: np.array([float(x) for x in meta[key].split(",")])
        return GaussianMLPPolicy(shape[0], shape[-1], shape[1:-1], theta,
                                 obs_shift=vec("obs_shift"), obs_scale=vec("obs_scale"))
    raise ValueError(f"unknown policy flavor {meta['flavor']!r}")
