import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acpo import exact
from acpo.cmdp import EnvSpec, NonErgodicError, TabularCmdp, make_env

from conftest import two_state_model


def garnets():
    return st.builds(lambda seed, nS, nA: make_env(EnvSpec(kind="garnet", seed=seed, num_states=nS,
                                                           num_actions=nA, branching=2, limits=(0.5,))),
                     st.integers(0, 10_000), st.integers(2, 7), st.integers(2, 4))


def test_two_state_stationary_distribution_and_kemeny():
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    ch = exact.analyze_transition(P)
    np.testing.assert_allclose(ch.d_pi, [2 / 3, 1 / 3], atol=1e-12)
    # eigenvalues 1 and 0.7: sigma = (1 - 0.7)^(-1/2); Z = I + (P - 1 d^T) / 0.3 has trace 1 + 1/0.3
    assert ch.sigma == pytest.approx(0.3 ** -0.5, rel=1e-12)
    Z = np.linalg.inv(np.eye(2) - P + np.outer(np.ones(2), [2 / 3, 1 / 3]))
    assert ch.kemeny == pytest.approx(np.trace(Z), rel=1e-12)
    assert ch.kemeny == pytest.approx(1 + 1 / 0.3, rel=1e-12)


def test_rank_one_chain_has_unit_sigma():
    ch = exact.analyze_transition(np.full((4, 4), 0.25))
    np.testing.assert_allclose(ch.d_pi, 0.25)
    assert ch.sigma == pytest.approx(1.0)


def test_two_state_single_action_gain():
    P = np.array([[[0.9, 0.1]], [[0.2, 0.8]]])
    r = np.broadcast_to(np.array([1.0, 0.0])[:, None, None], (2, 1, 2))
    model = TabularCmdp(np.concatenate([P, P], 1), np.concatenate([r, r], 1), np.zeros((0, 2, 2, 2)), [],
                        [0.5, 0.5])
    assert exact.evaluate(model, np.full((2, 2), 0.5))[0] == pytest.approx(2 / 3, abs=1e-12)


def test_constant_reward_gives_zero_bias(garnet):
    model = TabularCmdp(garnet.transition, np.ones_like(garnet.reward), garnet.costs, garnet.limits,
                        garnet.initial_dist)
    ev = exact.gain_bias_advantage(model, exact.random_policy(np.random.default_rng(0), 6, 3))
    assert ev.gain == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(ev.bias)) < 1e-10 and np.max(np.abs(ev.advantage)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(model=garnets(), pseed=st.integers(0, 2 ** 31))
def test_evaluation_invariants(model, pseed):
    pi = exact.random_policy(np.random.default_rng(pseed), model.num_states, model.num_actions)
    ev = exact.gain_bias_advantage(model, pi)
    d, P = ev.chain.d_pi, ev.chain.P_pi
    assert np.all(d >= 0) and abs(d.sum() - 1) < 1e-12
    assert np.max(np.abs(d @ P - d)) < 1e-10
    assert abs(d @ ev.bias) < 1e-9
    assert abs(d @ (pi * ev.advantage).sum(1)) < 1e-9
    # Poisson equation, state by state
    r_sa = model.expected_reward()
    rhs = (pi * (r_sa - ev.gain + model.transition @ ev.bias)).sum(1)
    assert np.max(np.abs(rhs - ev.bias)) < 1e-9
    # two independent gain computations
    assert abs(ev.gain - d @ (pi * r_sa).sum(1)) < 1e-10
    for i in range(model.num_costs):
        assert abs(d @ ev.cost_bias[i]) < 1e-9
    assert ev.chain.sigma >= 1 / np.sqrt(2)
    assert np.sum(np.abs(ev.chain.eigenvalues - 1) < 1e-9) == 1


def test_policy_validation(garnet):
    with pytest.raises(ValueError):
        exact.policy_chain(garnet, np.full((6, 3), 0.5))
    with pytest.raises(ValueError):
        exact.policy_chain(garnet, np.full((5, 3), 1 / 3))


def test_reducible_chain_rejected():
    with pytest.raises(NonErgodicError):
        exact.analyze_transition(np.eye(3))


def test_lp_without_limits_matches_policy_iteration(garnet):
    free = exact.solve_constrained_optimal(garnet, [np.inf])
    _, gain = exact.policy_iteration(garnet)
    assert free.gain == pytest.approx(gain, abs=1e-9)


def test_lp_infeasible_limit():
    model = two_state_model()
    sol = exact.solve_constrained_optimal(model, [-0.1])
    assert not sol.feasible


def test_lp_matches_grid_search_on_two_state_model():
    model = two_state_model(limit=0.45)
    sol = exact.solve_constrained_optimal(model)
    p0, p1 = np.meshgrid(np.linspace(0, 1, 1001), np.linspace(0, 1, 1001), indexing="ij")
    pis = np.stack([np.stack([1 - p0, p0], -1), np.stack([1 - p1, p1], -1)], -2)  # (..., s, a)
    P = np.einsum("...sa,sat->...st", pis, model.transition)
    # two-state stationary distribution in closed form
    d0 = P[..., 1, 0] / (P[..., 0, 1] + P[..., 1, 0])
    d = np.stack([d0, 1 - d0], -1)
    J = np.einsum("...s,...sa,sa->...", d, pis, model.expected_reward())
    C = np.einsum("...s,...sa,sa->...", d, pis, model.expected_costs()[0])
    best = J[C <= 0.45].max()
    assert sol.feasible
    assert abs(sol.gain - best) < 1e-3
    assert sol.gain >= best - 1e-12
    # the closed form agrees with the exact evaluator at a grid point
    assert J[300, 700] == pytest.approx(exact.evaluate(model, pis[300, 700])[0], abs=1e-12)


def test_lp_solution_invariants_and_dominance(chain):
    sol = exact.solve_constrained_optimal(chain)
    x = sol.occupation
    assert abs(x.sum() - 1) < 1e-10 and np.all(x >= 0)
    inflow = np.einsum("sa,sat->t", x, chain.transition)
    assert np.max(np.abs(x.sum(1) - inflow)) < 1e-8
    assert sol.cost_values[0] <= chain.limits[0] + 1e-8
    J, C = exact.evaluate(chain, sol.policy)
    assert J == pytest.approx(sol.gain, abs=1e-8)
    rng = np.random.default_rng(0)
    for _ in range(100):
        pi = exact.random_policy(rng, 10, 3)
        J, C = exact.evaluate(chain, pi)
        if C[0] <= chain.limits[0]:
            assert J <= sol.gain + 1e-8


def test_softmax_gradients_match_finite_differences(garnet):
    from acpo.policy import TabularSoftmaxPolicy

    rng = np.random.default_rng(5)
    pol = TabularSoftmaxPolicy(6, 3, rng.normal(size=18))
    pi = pol.matrix()
    ev = exact.gain_bias_advantage(garnet, pi)
    g, A, F = exact.softmax_policy_gradients(garnet, pi, ev)
    # g and A are gradients of the surrogate E_{d_pi, pi_theta}[A^pi] at theta = theta_k
    for _ in range(5):
        v, eps = rng.normal(size=18), 1e-6
        plus, minus = pol.with_theta(pol.theta + eps * v).matrix(), pol.with_theta(pol.theta - eps * v).matrix()
        d = ev.chain.d_pi
        fd = (d @ ((plus - minus) * ev.advantage).sum(1)) / (2 * eps)
        assert g @ v == pytest.approx(fd, rel=1e-6, abs=1e-10)
        fd_c = (d @ ((plus - minus) * ev.cost_advantage[0]).sum(1)) / (2 * eps)
        assert A[:, 0] @ v == pytest.approx(fd_c, rel=1e-6, abs=1e-10)
    np.testing.assert_allclose(F, F.T, atol=1e-14)


def test_discounted_evaluation_consistency(garnet):
    pi = exact.random_policy(np.random.default_rng(1), 6, 3)
    d, V, Q, A = exact.discounted_evaluation(garnet, pi, 0.9)
    assert abs(d.sum() - 1) < 1e-12
    np.testing.assert_allclose((pi * Q).sum(1), V, atol=1e-10)
    with pytest.raises(ValueError):
        exact.discounted_evaluation(garnet, pi, 1.0)
