import numpy as np
import pytest

from acpo.cmdp import EnvSpec, TabularCmdp, make_env

ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Print and keep one pass/fail line for an acceptance criterion."""
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def two_state_model(p_stay=(0.9, 0.2), reward=(1.0, 0.0), cost=(0.0, 1.0), limit=0.5):
    """Two states, two actions: action 0 stays with p_stay[s], action 1 switches with 0.8."""
    P = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, 0, s], P[s, 0, 1 - s] = p_stay[s], 1 - p_stay[s]
        P[s, 1, 1 - s], P[s, 1, s] = 0.8, 0.2
    r = np.broadcast_to(np.array(reward)[:, None, None], (2, 2, 2))
    c = np.broadcast_to(np.array(cost)[None, :, None, None], (1, 2, 2, 2))
    return TabularCmdp(P, r, c, [limit], [0.5, 0.5])


@pytest.fixture
def chain():
    return make_env(EnvSpec(kind="chain", num_states=10, num_actions=3, limits=(0.5,)))


@pytest.fixture
def garnet():
    return make_env(EnvSpec(kind="garnet", seed=3, num_states=6, num_actions=3, branching=2, limits=(0.5,)))
