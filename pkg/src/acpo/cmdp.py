"""CMDP models and the desk-scale environments built on them.

Tabular models store full tensors ``transition[s, a, s']``,
``reward[s, a, s']`` and ``costs[i, s, a, s']``. Every environment is a
continuing task: there are no terminal states and no resets.
"""

from dataclasses import dataclass, field

import numpy as np

TABULAR_KINDS = ("garnet", "chain", "birth-death", "gridworld")
KINDS = TABULAR_KINDS + ("point-circle",)


class NonErgodicError(ValueError):
    """The induced Markov chain is not irreducible and aperiodic."""


@dataclass(frozen=True)
class EnvSpec:
    """Everything needed to rebuild an environment bit-for-bit.

    ``birth-death`` is a randomized reversible chain family (random move rates
    per state/action); ``chain`` is the fixed binding-constraint benchmark.
    """

    kind: str = "chain"
    seed: int = 0
    num_states: int = 10
    num_actions: int = 3
    branching: int = 2
    num_costs: int = 1
    limits: tuple = (0.5,)
    grid_width: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "limits", tuple(float(x) for x in self.limits))
        if len(self.limits) != self.num_costs:
            raise ValueError(f"{self.num_costs} costs but {len(self.limits)} limits")
        if self.kind in TABULAR_KINDS:
            if self.num_states < 2 or self.num_actions < 2:
                raise ValueError("tabular environments need at least 2 states and 2 actions")
            if self.kind == "garnet" and not 1 <= self.branching <= self.num_states:
                raise ValueError("branching must lie in [1, num_states]")

    @property
    def tabular(self):
        return self.kind in TABULAR_KINDS


@dataclass
class TabularCmdp:
    transition: np.ndarray
    reward: np.ndarray
    costs: np.ndarray
    limits: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        self.transition = np.ascontiguousarray(self.transition, dtype=np.float64)
        nS, nA, nS2 = self.transition.shape
        if nS != nS2:
            raise ValueError("transition tensor must have shape (S, A, S)")
        self.reward = np.ascontiguousarray(np.broadcast_to(self.reward, (nS, nA, nS)), dtype=np.float64)
        costs = np.asarray(self.costs, dtype=np.float64)
        if costs.size == 0:
            costs = np.zeros((0, nS, nA, nS))
        self.costs = np.ascontiguousarray(costs.reshape(-1, nS, nA, nS))
        self.limits = np.asarray(self.limits, dtype=np.float64).reshape(-1)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        if len(self.limits) != len(self.costs):
            raise ValueError("need exactly one limit per cost")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(-1) - 1.0) > 1e-12):
            raise ValueError("every transition row must be a probability distribution")
        if np.any(self.costs < 0):
            raise ValueError("costs must be nonnegative")
        if self.initial_dist.shape != (nS,) or np.any(self.initial_dist < 0) \
                or abs(self.initial_dist.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must be a probability vector over states")
        if not is_primitive(self.transition.mean(axis=1)):
            raise NonErgodicError("uniform-policy chain is not irreducible and aperiodic")

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]

    @property
    def num_costs(self):
        return self.costs.shape[0]

    def expected_reward(self):
        """r(s, a) = sum_s' P(s'|s,a) r(s,a,s')."""
        return np.einsum("sat,sat->sa", self.transition, self.reward)

    def expected_costs(self):
        return np.einsum("sat,isat->isa", self.transition, self.costs)

    def step(self, state, action, rng):
        state = int(state)
        if not 0 <= state < self.num_states:
            raise IndexError(f"state {state} out of range")
        if not (isinstance(action, (int, np.integer)) and 0 <= action < self.num_actions):
            raise IndexError(f"action {action!r} out of range for {self.num_actions} actions")
        nxt = int(rng.choice(self.num_states, p=self.transition[state, action]))
        return nxt, float(self.reward[state, action, nxt]), self.costs[:, state, action, nxt].copy()

    def with_limits(self, limits):
        return TabularCmdp(self.transition, self.reward, self.costs, limits, self.initial_dist)

    # -- plain-text tensor format ------------------------------------------
    def dumps(self):
        nS, nA, m = self.num_states, self.num_actions, self.num_costs
        lines = [f"{nS} {nA} {m}"]
        for tensor in (self.transition, self.reward, *self.costs):
            lines.extend(" ".join(repr(float(v)) for v in row) for row in tensor.reshape(nS * nA, nS))
        lines.append(" ".join(repr(float(v)) for v in self.limits))
        lines.append(" ".join(repr(float(v)) for v in self.initial_dist))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        lines = text.splitlines()
        nS, nA, m = (int(v) for v in lines[0].split())
        rows = nS * nA

        def block(k):
            start = 1 + k * rows
            data = [[float(v) for v in line.split()] for line in lines[start:start + rows]]
            return np.array(data).reshape(nS, nA, nS)

        transition, reward = block(0), block(1)
        costs = np.array([block(2 + i) for i in range(m)]).reshape(m, nS, nA, nS)
        tail = 1 + (2 + m) * rows
        limits = [float(v) for v in lines[tail].split()]
        initial = [float(v) for v in lines[tail + 1].split()]
        return cls(transition, reward, costs, limits, initial)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def is_primitive(P):
    """Irreducible and aperiodic, via Wielandt: P^((n-1)^2 + 1) > 0."""
    B = (np.asarray(P) > 0).astype(np.int64)
    n = B.shape[0]
    k = (n - 1) ** 2 + 1
    result, base = None, B
    while k:
        if k & 1:
            result = base if result is None else np.minimum(result @ base, 1)
        k >>= 1
        if k:
            base = np.minimum(base @ base, 1)
    return bool(np.all(result > 0))


# -- constructors -----------------------------------------------------------

def _garnet(spec, rng):
    nS, nA, m, b = spec.num_states, spec.num_actions, spec.num_costs, spec.branching
    P = np.zeros((nS, nA, nS))
    for s in range(nS):
        for a in range(nA):
            succ = rng.choice(nS, size=b, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(b))
    P /= P.sum(-1, keepdims=True)
    reward = rng.uniform(size=(nS, nA, nS))
    costs = rng.uniform(size=(m, nS, nA, nS))
    return TabularCmdp(P, reward, costs, spec.limits, np.full(nS, 1.0 / nS))


def _birth_death(nS, right, left):
    P = np.zeros(right.shape + (nS,))
    for s in range(nS):
        P[s, :, min(s + 1, nS - 1)] += right[s]
        P[s, :, max(s - 1, 0)] += left[s]
        P[s, :, s] += 1.0 - right[s] - left[s]
    return P


def _chain(spec):
    nS, nA, m = spec.num_states, spec.num_actions, spec.num_costs
    effort = np.arange(nA) / (nA - 1)
    right = np.tile(0.1 + 0.6 * effort, (nS, 1))
    left = np.tile(0.5 - 0.4 * effort, (nS, 1))
    P = _birth_death(nS, right, left)
    reward = np.broadcast_to((np.arange(nS) / (nS - 1))[:, None, None], (nS, nA, nS))
    costs = np.array([np.broadcast_to((effort ** (i + 1))[None, :, None], (nS, nA, nS))
                      for i in range(m)]).reshape(m, nS, nA, nS)
    return TabularCmdp(P, reward, costs, spec.limits, np.full(nS, 1.0 / nS))


def _random_birth_death(spec, rng):
    nS, nA, m = spec.num_states, spec.num_actions, spec.num_costs
    right = rng.uniform(0.05, 0.6, size=(nS, nA))
    left = rng.uniform(0.05, 0.6, size=(nS, nA))
    scale = np.maximum((right + left) / 0.9, 1.0)
    P = _birth_death(nS, right / scale, left / scale)
    reward = rng.uniform(size=(nS, nA, nS))
    costs = rng.uniform(size=(m, nS, nA, nS))
    return TabularCmdp(P, reward, costs, spec.limits, np.full(nS, 1.0 / nS))


GRID_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left


def _gridworld(spec, slip=0.1):
    nS, m = spec.num_states, spec.num_costs
    if spec.num_actions != 4:
        raise ValueError("gridworld has exactly 4 actions (up, right, down, left)")
    width = spec.grid_width or int(round(np.sqrt(nS)))
    height = nS // width
    if width * height != nS or width < 2 or height < 2:
        raise ValueError(f"cannot lay out {nS} states on a grid of width {width}")

    def move(s, k):
        r, c = divmod(s, width)
        dr, dc = GRID_MOVES[k]
        r2, c2 = r + dr, c + dc
        return r2 * width + c2 if 0 <= r2 < height and 0 <= c2 < width else s

    P = np.zeros((nS, 4, nS))
    for s in range(nS):
        for a in range(4):
            for k in range(4):
                P[s, a, move(s, k)] += 1.0 - slip if k == a else slip / 3
    goal = width - 1  # top-right corner
    reward = np.zeros((nS, 4, nS))
    reward[:, :, goal] = 1.0
    costs = np.zeros((m, nS, 4, nS))
    for i in range(m):
        # hazard i: a vertical strip below the top row
        col = (i + 1) * width // (m + 1)
        hazard = [r * width + col for r in range(1, height)]
        costs[i][:, :, hazard] = 1.0
    start = np.zeros(nS)
    start[(height - 1) * width] = 1.0  # bottom-left corner
    return TabularCmdp(P, reward, costs, spec.limits, start)


def construct_cmdp(spec):
    """Build the tabular model described by ``spec``.

    Random kinds resample from ``(seed, attempt)`` streams until the uniform
    policy induces an ergodic chain, giving up after 100 attempts. The
    ``chain`` kind additionally checks that its constraint binds.
    """
    if not spec.tabular:
        raise ValueError(f"{spec.kind!r} is not a tabular environment")
    if spec.kind == "chain":
        model = _chain(spec)
        if spec.num_costs:
            _require_binding(model)
        return model
    if spec.kind == "gridworld":
        return _gridworld(spec)
    builder = _garnet if spec.kind == "garnet" else _random_birth_death
    for attempt in range(100):
        try:
            return builder(spec, np.random.default_rng([spec.seed, attempt]))
        except NonErgodicError:
            continue
    raise NonErgodicError(f"no ergodic {spec.kind} instance after 100 attempts (seed {spec.seed})")


def _require_binding(model):
    from .exact import solve_constrained_optimal

    free = solve_constrained_optimal(model, np.full(model.num_costs, np.inf))
    tied = solve_constrained_optimal(model, model.limits)
    if not tied.feasible or tied.gain >= free.gain - 1e-9:
        raise ValueError("chain benchmark constraint does not bind for these limits")


# -- continuous surrogate ---------------------------------------------------

@dataclass
class PointCircleEnv:
    """Planar double integrator rewarded for circling the origin.

    Dynamics, with action a clipped to [-1, 1]^2 and noise eps ~ N(0, noise_std^2)::

        v' = clip(v + dt * (a + eps), -max_speed, max_speed)
        p' = clip(p + dt * v', -arena, arena)

    Reward and cost are read off the pre-step state: reward is the angular
    momentum x*vy - y*vx damped by 1 + |‖p‖ - radius|; cost is 1 when
    |x| > x_limit.
    """

    dt: float = 0.05
    noise_std: float = 0.01
    radius: float = 1.0
    x_limit: float = 0.5
    max_speed: float = 2.0
    arena: float = 3.0
    limits: np.ndarray = field(default_factory=lambda: np.array([0.2]))

    obs_dim = 4
    act_dim = 2
    num_costs = 1

    def initial_state(self, rng=None):
        return np.zeros(4)

    def reward(self, state):
        x, y, vx, vy = state
        return float((x * vy - y * vx) / (1.0 + abs(np.hypot(x, y) - self.radius)))

    def cost(self, state):
        return np.array([1.0 if abs(state[0]) > self.x_limit else 0.0])

    def step(self, state, action, rng):
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (2,):
            raise ValueError(f"action must have shape (2,), got {action.shape}")
        a = np.clip(action, -1.0, 1.0)
        eps = rng.normal(0.0, self.noise_std, size=2)
        v = np.clip(state[2:] + self.dt * (a + eps), -self.max_speed, self.max_speed)
        p = np.clip(state[:2] + self.dt * v, -self.arena, self.arena)
        return np.concatenate([p, v]), self.reward(state), self.cost(state)


def construct_point_circle(spec):
    if spec.kind != "point-circle":
        raise ValueError(f"expected a point-circle spec, got {spec.kind!r}")
    if spec.num_costs != 1:
        raise ValueError("point-circle has exactly one cost")
    return PointCircleEnv(limits=np.array(spec.limits))


def make_env(spec):
    return construct_point_circle(spec) if spec.kind == "point-circle" else construct_cmdp(spec)


def step(env, state, action, rng):
    """One transition of a continuing task: (next_state, reward, cost vector)."""
    return env.step(state, action, rng)
