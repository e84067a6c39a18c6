"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def _draw(cdf, u):
    n = len(cdf)
    for i in range(n - 1):
        if u < cdf[i]:
            return i
    return n - 1


def tabular_rollout(policy_cdf, transition_cdf, start_state, uniforms):
    """Walk one continuing trajectory; consumes two uniforms per step."""
    policy_cdf = np.asarray(policy_cdf, dtype=np.float64).tolist()
    transition_cdf = np.asarray(transition_cdf, dtype=np.float64).tolist()
    uniforms = np.asarray(uniforms, dtype=np.float64).tolist()
    n = len(uniforms) // 2
    states = [0] * n
    actions = [0] * n
    nexts = [0] * n
    s = int(start_state)
    for t in range(n):
        a = _draw(policy_cdf[s], uniforms[2 * t])
        sp = _draw(transition_cdf[s][a], uniforms[2 * t + 1])
        states[t] = s
        actions[t] = a
        nexts[t] = sp
        s = sp
    return (np.array(states, dtype=np.int64), np.array(actions, dtype=np.int64),
            np.array(nexts, dtype=np.int64))


def backward_accumulate(deltas, coef):
    """out[t] = deltas[t] + coef * out[t + 1], with out[N] = 0."""
    deltas = np.asarray(deltas, dtype=np.float64).tolist()
    coef = float(coef)
    out = [0.0] * len(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + coef * acc
        out[t] = acc
    return np.array(out, dtype=np.float64)
