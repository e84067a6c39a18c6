import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acpo import exact
from acpo.cmdp import EnvSpec, make_env
from acpo.estimation import (LinearCritic, MLPCritic, RolloutBatch, RunningNormalizer, TabularCritic,
                             average_gae, collect_batch, estimate_gains, fit_critic, gae_stream,
                             sampling_cdf)
from acpo.policy import GaussianMLPPolicy, TabularSoftmaxPolicy


def small_chain():
    return make_env(EnvSpec(kind="chain", num_states=2, num_actions=2, num_costs=0, limits=()))


def test_batch_contiguity_and_determinism(chain):
    pol = TabularSoftmaxPolicy(10, 3)
    b = collect_batch(chain, pol, 2, np.random.default_rng(0))
    assert b.next_states[0] == b.states[1]
    b1 = collect_batch(chain, pol, 500, np.random.default_rng(3))
    b2 = collect_batch(chain, pol, 500, np.random.default_rng(3))
    for name in ("states", "actions", "rewards", "costs", "next_states", "log_probs"):
        np.testing.assert_array_equal(getattr(b1, name), getattr(b2, name))
    np.testing.assert_array_equal(b1.next_states[:-1], b1.states[1:])
    assert len(b1) == 500 and b1.costs.shape == (500, 1)
    with pytest.raises(ValueError):
        collect_batch(chain, pol, 1, np.random.default_rng(0))


def test_visit_frequencies_match_stationary(chain):
    pol = TabularSoftmaxPolicy(10, 3, np.random.default_rng(1).normal(size=30))
    b = collect_batch(chain, pol, 100_000, np.random.default_rng(2))
    freq = np.bincount(b.states, minlength=10) / len(b)
    assert np.abs(freq - exact.policy_chain(chain, pol.matrix()).d_pi).sum() < 0.02


def test_continuous_batch_is_contiguous():
    env = make_env(EnvSpec(kind="point-circle", num_costs=1, limits=(0.2,)))
    pol = GaussianMLPPolicy(4, 2, (4,), seed=0)
    b = collect_batch(env, pol, 20, np.random.default_rng(0))
    np.testing.assert_array_equal(b.next_states[:-1], b.states[1:])
    assert b.states.shape == (20, 4) and b.actions.shape == (20, 2)


def test_sampling_cdf_pins_trailing_zeros():
    cdf = sampling_cdf(np.array([0.1, 0.2, 0.7 - 1e-17, 0.0]))
    assert cdf[2] == 1.0 and cdf[3] == 1.0
    assert sampling_cdf(np.array([0.0, 1.0]))[0] == 0.0


def test_estimate_gains():
    b = RolloutBatch(np.zeros(4, int), np.zeros(4, int), np.array([0.0, 1.0, 1.0, 0.0]),
                     np.array([[1.0], [1.0], [0.0], [0.0]]), np.zeros(4, int), np.zeros(4))
    J, C = estimate_gains(b)
    assert J == 0.5 and C.tolist() == [0.5]


def test_gain_estimate_close_to_exact_at_large_n(chain):
    pol = TabularSoftmaxPolicy(10, 3, np.random.default_rng(5).normal(size=30))
    J_hat, C_hat = estimate_gains(collect_batch(chain, pol, 100_000, np.random.default_rng(5)))
    J, C = exact.evaluate(chain, pol.matrix())
    assert abs(J_hat - J) < 0.01 and abs(C_hat[0] - C[0]) < 0.01


def test_gae_hand_case():
    adv, _, _ = gae_stream(np.array([1.0, 2.0, 4.0]), np.zeros(3), np.zeros(3), 0.0, 0.5)
    np.testing.assert_array_equal(adv, [3.0, 4.0, 4.0])
    with pytest.raises(ValueError):
        gae_stream(np.zeros(3), np.zeros(3), np.zeros(3), 0.0, 1.5)


dyadic = st.integers(-64, 64).map(lambda k: k / 8.0)


@settings(max_examples=60, deadline=None)
@given(rewards=st.lists(dyadic, min_size=2, max_size=64), seed=st.integers(0, 1000))
def test_lambda_reductions_bit_exact_on_dyadic_batches(rewards, seed):
    """lambda = 0 gives delta_t; lambda = 1 gives the telescoped sum. Dyadic data keeps every float sum exact."""
    n = len(rewards)
    rng = np.random.default_rng(seed)
    states = rng.integers(0, 4, size=n + 1)
    critic = TabularCritic(4, rng.integers(-16, 16, size=4) / 4.0)
    batch = RolloutBatch(states[:-1], np.zeros(n, int), np.array(rewards), np.zeros((n, 0)), states[1:],
                         np.zeros(n))
    J_hat = 0.125 * int(rng.integers(-8, 8))
    v, v_next = critic.values(batch.states), critic.values(batch.next_states)
    zero = average_gae(batch, critic, J_hat, 0.0)
    assert np.array_equal(zero.reward, batch.rewards - J_hat + v_next - v)
    one = average_gae(batch, critic, J_hat, 1.0)
    tail = np.cumsum((batch.rewards - J_hat)[::-1])[::-1]
    assert np.array_equal(one.reward, tail + v_next[-1] - v)
    # value target = V(s_t) + A_t
    assert np.array_equal(one.reward_targets, v + one.reward)


def test_lambda_zero_exact_on_any_batch(chain):
    pol = TabularSoftmaxPolicy(10, 3)
    b = collect_batch(chain, pol, 300, np.random.default_rng(0))
    critic = TabularCritic(10, np.random.default_rng(1).normal(size=10))
    J_hat, C_hat = estimate_gains(b)
    est = average_gae(b, critic, J_hat, 0.0, [TabularCritic(10)], C_hat)
    assert np.array_equal(est.reward, b.rewards - J_hat + critic.values(b.next_states) - critic.values(b.states))
    one = average_gae(b, critic, J_hat, 1.0, [TabularCritic(10)], C_hat)
    tele = np.cumsum((b.rewards - J_hat)[::-1])[::-1] + critic.values(b.next_states)[-1] - critic.values(b.states)
    np.testing.assert_allclose(one.reward, tele, atol=1e-10)


def test_cost_path_matches_reward_path(chain):
    pol = TabularSoftmaxPolicy(10, 3)
    b = collect_batch(chain, pol, 200, np.random.default_rng(0))
    mirrored = RolloutBatch(b.states, b.actions, b.rewards, b.rewards[:, None], b.next_states, b.log_probs)
    critic = TabularCritic(10, np.random.default_rng(2).normal(size=10))
    est = average_gae(mirrored, critic, 0.3, 0.9, [critic], [0.3])
    assert np.array_equal(est.costs[0], est.reward)
    assert np.array_equal(est.cost_targets[0], est.reward_targets)
    with pytest.raises(ValueError):
        average_gae(mirrored, critic, 0.3, 0.9)


def test_fit_critic_examples():
    states = np.array([0, 1, 1, 2, 2, 2])
    critic = TabularCritic(3)
    assert fit_critic(critic, states, np.zeros(6), 0.1, 3) == [0.0, 0.0, 0.0]
    assert np.all(critic.theta == 0.0)
    targets = np.array([1.0, 2.0, 4.0, 0.0, 3.0, 6.0])
    trace = fit_critic(critic, states, targets, 0.5, 400)
    np.testing.assert_allclose(critic.theta, [1.0, 3.0, 3.0], atol=1e-3)
    assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))
    shifted = TabularCritic(3)
    fit_critic(shifted, states, targets + 5.0, 0.5, 400)
    np.testing.assert_allclose(shifted.theta, critic.theta + 5.0, atol=1e-3)


@pytest.mark.parametrize("critic", [LinearCritic(1 + 2 * 2), MLPCritic(2, (8,), seed=0)])
def test_fit_critic_function_approximators_reduce_loss(critic):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 2))
    y = x[:, 0] ** 2 - 0.5 * x[:, 1]
    trace = fit_critic(critic, x, y, 0.01, 300, optimizer="adam", minibatch=50, rng=rng)
    assert trace[-1] < 0.2 * trace[0]


def test_fit_critic_rejects_bad_optimizer_and_divergence():
    with pytest.raises(ValueError):
        fit_critic(TabularCritic(2), np.array([0, 1]), np.zeros(2), 0.1, 1, optimizer="sgd")
    with pytest.raises(FloatingPointError):
        fit_critic(TabularCritic(2), np.array([0, 1]), np.array([np.inf, 0.0]), 0.1, 1)


def test_running_normalizer_matches_numpy():
    rng = np.random.default_rng(0)
    data = rng.normal(2.0, 3.0, size=(500, 3))
    norm = RunningNormalizer(3)
    for chunk in np.array_split(data, 7):
        norm.update(chunk)
    np.testing.assert_allclose(norm.mean, data.mean(0), atol=1e-12)
    np.testing.assert_allclose(norm.std, data.std(0), atol=1e-12)


def test_batch_csv_dump(tmp_path, chain):
    b = collect_batch(chain, TabularSoftmaxPolicy(10, 3), 5, np.random.default_rng(0))
    path = tmp_path / "batch.csv"
    b.to_csv(path)
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "s", "a", "r", "c1", "next_s", "log_prob"]
    assert len(rows) == 6
    assert int(rows[2][1]) == b.states[1] and float(rows[2][6]) == b.log_probs[1]
