import numpy as np
import pytest

from acpo import bounds, exact
from acpo.cmdp import EnvSpec, TabularCmdp, make_env

from conftest import two_state_model


def reversible(seed, nS=5, nA=3):
    return make_env(EnvSpec(kind="birth-death", seed=seed, num_states=nS, num_actions=nA, limits=(0.5,)))


def pair(model, seed):
    rng = np.random.default_rng(seed)
    return (exact.random_policy(rng, model.num_states, model.num_actions),
            exact.random_policy(rng, model.num_states, model.num_actions))


def test_report_holds_uses_tolerance():
    assert bounds.BoundReport("x", 1.0, 1.0 - 5e-10).holds
    assert not bounds.BoundReport("x", 1.0, 1.0 - 2e-9).holds
    assert bounds.BoundReport("x", 0.5, 2.0).slack == 1.5


@pytest.mark.parametrize("check", [bounds.check_policy_difference_identity, bounds.check_surrogate_error_bound])
def test_identical_policies_give_zero(garnet, check):
    pi, _ = pair(garnet, 0)
    rep = check(garnet, pi, pi)
    assert rep.lhs == pytest.approx(0.0, abs=1e-15)
    if check is bounds.check_surrogate_error_bound:
        assert rep.rhs == 0.0


def test_identity_random_pairs(garnet):
    for seed in range(20):
        rep = bounds.check_policy_difference_identity(garnet, *pair(garnet, seed))
        assert rep.lhs < 1e-9 and rep.holds


def test_identity_two_state_closed_form():
    model = two_state_model()
    pi, pi_new = np.array([[0.3, 0.7], [0.6, 0.4]]), np.array([[0.8, 0.2], [0.1, 0.9]])

    def hand(p):
        P = np.einsum("sa,sat->st", p, model.transition)
        r = (p * model.expected_reward()).sum(1)
        d0 = P[1, 0] / (P[0, 1] + P[1, 0])
        d = np.array([d0, 1 - d0])
        J = d @ r
        h = (r[0] - r[1]) / (P[0, 1] + P[1, 0])  # V(0) - V(1)
        V = np.array([d[1] * h, -d[0] * h])  # E_d[V] = 0
        return d, J, V

    d, J, V = hand(pi)
    d_new, J_new, _ = hand(pi_new)
    A = model.expected_reward() - J + model.transition @ V - V[:, None]
    assert J_new - J == pytest.approx(d_new @ (pi_new * A).sum(1), abs=1e-14)
    ev = exact.gain_bias_advantage(model, pi)
    np.testing.assert_allclose(ev.advantage, A, atol=1e-13)
    assert bounds.check_policy_difference_identity(model, pi, pi_new).lhs < 1e-14


def test_surrogate_error_on_random_pairs_and_perturbation(garnet):
    for seed in range(30):
        assert bounds.check_surrogate_error_bound(garnet, *pair(garnet, seed)).holds
    pi, _ = pair(garnet, 99)
    near = 0.99 * pi + 0.01 / 3
    assert bounds.check_surrogate_error_bound(garnet, pi, near).slack > 0


def test_stationary_tv_on_reversible_draws():
    for seed in range(20):
        model = reversible(seed)
        rep = bounds.check_stationary_tv_bound(model, *pair(model, seed), rng=np.random.default_rng(seed),
                                               num_samples=30)
        assert rep.holds, rep
        assert rep.context["kappa_rhs"] >= rep.lhs - 1e-9


def test_stationary_tv_identical_is_zero(garnet):
    pi, _ = pair(garnet, 1)
    rep = bounds.check_stationary_tv_bound(garnet, pi, pi, num_samples=5)
    assert rep.lhs == 0.0 and rep.rhs == 0.0


def test_stationary_tv_sigma_form_counterexample():
    """A slow two-state reversible chain where the sigma form fails but the Kemeny form holds."""
    P = np.zeros((2, 2, 2))
    P[0, 0] = [0.99, 0.01]
    P[0, 1] = [0.01, 0.99]
    P[1, :] = [0.01, 0.99]
    model = TabularCmdp(P, np.zeros((2, 2, 2)), np.zeros((0, 2, 2, 2)), [], [0.5, 0.5])
    policy = lambda p: np.array([[1 - p, p], [0.5, 0.5]])
    grid = [exact.policy_chain(model, policy(p)) for p in np.linspace(0, 1, 1001)]
    sigma_star, kappa_star = max(c.sigma for c in grid), max(c.kemeny for c in grid)
    rep = bounds.check_stationary_tv_bound(model, policy(0.01), policy(0.02), sigma_star, kappa_star)
    assert rep.lhs == pytest.approx(0.083, abs=1e-3)
    assert rep.rhs == pytest.approx(0.024, abs=1e-3)
    assert not rep.holds
    assert rep.context["triage"] == "sigma-form-only" and rep.context["kappa_holds"]


def test_injected_zero_sigma_fails(garnet):
    rep = bounds.check_stationary_tv_bound(garnet, *pair(garnet, 2), sigma_star=0.0, kappa_star=0.0)
    assert not rep.holds and rep.name == "stationary-tv"


def test_improvement_sandwich_on_reversible_pair():
    model = reversible(4)
    pi, pi_new = pair(model, 4)
    res = bounds.improvement_bounds(model, pi, pi_new, rng=np.random.default_rng(0), num_samples=30)
    assert all(r.holds for r in res.reports), [r for r in res.reports if not r.holds]
    ev, ev_new = exact.gain_bias_advantage(model, pi), exact.gain_bias_advantage(model, pi_new)
    assert res.L_minus <= ev_new.gain - ev.gain <= res.L_plus
    by = {r.name: r for r in res.reports}
    # the KL relaxation only loosens
    assert by["improvement-lower-kl"].lhs <= by["improvement-lower"].lhs
    assert by["improvement-upper-kl"].rhs >= by["improvement-upper"].rhs
    assert by["pinsker-relaxation"].holds


def test_trust_region_identical_feasible_policy(chain):
    pi = np.full((10, 3), 1 / 3)
    limits = exact.evaluate(chain, pi)[1] + 0.1
    reps = bounds.trust_region_guarantees(chain, pi, pi, 1e-3, limits)
    assert all(r.holds for r in reps)
    ctx = reps[0].context
    assert ctx["beta"] == [0.0] and ctx["vmax_beta"] == 0.0 and ctx["vmax_alpha_beta"] == 0.0


def test_trust_region_infeasible_reports_both_variants(chain):
    pi = np.tile([0.1, 0.2, 0.7], (10, 1))
    limits = exact.evaluate(chain, pi)[1] - 0.05
    reps = {r.name: r for r in bounds.trust_region_guarantees(chain, pi, pi, 1e-3, limits)}
    ctx = reps["trust-region-degradation[beta]"].context
    assert ctx["beta"][0] == pytest.approx(0.05)
    alpha = ctx["alpha"][0]
    plain, scaled = reps["trust-region-degradation[beta]"].rhs, reps["trust-region-degradation[alpha-beta]"].rhs
    assert (scaled >= plain) == (alpha >= 1.0)


def exact_step_case(seed, delta=1e-3, spread=(-0.02, 0.05)):
    rng = np.random.default_rng(seed)
    model = make_env(EnvSpec(kind="garnet", seed=seed, num_states=int(rng.integers(2, 7)),
                             num_actions=int(rng.integers(2, 4)), branching=2, limits=(0.5,)))
    pi = exact.random_policy(rng, model.num_states, model.num_actions)
    limits = exact.evaluate(model, pi)[1] + rng.uniform(*spread)
    return model, pi, limits, bounds.exact_trust_region_step(model, pi, delta, limits)


def test_exact_trust_region_step_from_feasible_policy():
    for seed in range(10):
        model, pi, limits, step = exact_step_case(seed, spread=(0.0, 0.05))
        assert step.method == "direct"
        assert step.mean_kl <= 1e-3 + 1e-9
        assert np.all(step.linearized_costs <= 1e-9)
        assert step.surrogate >= -1e-12
        reps = bounds.trust_region_guarantees(model, pi, step.policy, 1e-3, limits)
        assert all(r.holds for r in reps)


def test_exact_trust_region_step_beats_feasible_mixtures():
    model, pi, limits, step = exact_step_case(3, spread=(0.01, 0.02))
    ev = exact.gain_bias_advantage(model, pi)
    d = ev.chain.d_pi
    rng = np.random.default_rng(0)
    for _ in range(200):
        cand = (1 - 0.03) * pi + 0.03 * exact.random_policy(rng, *pi.shape)
        kl = d @ (cand * np.log(cand / pi)).sum(1)
        lin = ev.cost_gains + np.einsum("s,sa,isa->i", d, cand, ev.cost_advantage) - limits
        if kl <= 1e-3 and np.all(lin <= 0):
            assert d @ (cand * ev.advantage).sum(1) <= step.surrogate + 1e-9


def test_degradation_bound_fails_from_infeasible_start():
    """From an infeasible policy the exact optimum can lose more reward than the radius allows."""
    found = False
    for seed in range(60):
        model, pi, limits, step = exact_step_case(seed, spread=(-0.02, -0.01))
        reps = {r.name: r for r in bounds.trust_region_guarantees(model, pi, step.policy, 1e-3, limits)}
        if not reps["trust-region-degradation[alpha-beta]"].holds:
            assert reps["trust-region-degradation[beta]"].context["exact_surrogate"] < 0
            found = True
            break
    assert found


def test_trivialization_series():
    model = make_env(EnvSpec(kind="garnet", seed=1, num_states=5, num_actions=3, limits=(0.5,)))
    pi, pi_new = pair(model, 1)
    series = bounds.trivialization_demo(model, pi, pi_new, [0.9, 0.99, 0.999])
    pens = [p.penalty for p in series]
    assert pens[0] < pens[1] < pens[2]
    assert series[2].factor / series[1].factor == pytest.approx(999 / 99)
    zero = bounds.trivialization_demo(model, pi, pi, [0.9, 0.99])
    assert all(p.penalty == 0.0 for p in zero)
    with pytest.raises(ValueError):
        bounds.trivialization_demo(model, pi, pi_new, [0.9, 1.0])
    with pytest.raises(ValueError):
        bounds.trivialization_demo(model, pi, pi_new, [0.99, 0.9])
