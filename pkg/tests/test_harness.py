import csv
import json

import numpy as np
import pytest

from acpo import exact
from acpo.cli import main, parse_seed_range
from acpo.cmdp import EnvSpec, make_env
from acpo.harness import (EvalProtocol, ExperimentConfig, chain_benchmark_config, evaluate_policy,
                          iteration_columns, run_experiment, suite_failures, summarize, verify_bounds_suite)
from acpo.policy import TabularSoftmaxPolicy


def small_config(**kw):
    base = dict(seeds=(0, 1), iterations=6, batch_size=300, eval_every=3, eval_trajectories=2, eval_horizon=50,
                fresh_kl_states=50, delta=0.01, critic_lr=0.05, cost_critic_lr=0.05)
    base.update(kw)
    return chain_benchmark_config(**base)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


def test_config_round_trip_and_digest():
    config = small_config(hidden=(8, 4), limits=(0.4,))
    again = ExperimentConfig.loads(config.dumps())
    assert again == config and again.digest() == config.digest()
    assert small_config(delta=0.02).digest() != config.digest()
    with pytest.raises(ValueError):
        ExperimentConfig.loads("[experiment]\nbogus = 1\n")
    with pytest.raises(ValueError):
        ExperimentConfig(algorithm="ppo")


def test_zero_iterations_give_header_only_iteration_csv(tmp_path):
    art = run_experiment(small_config(iterations=0), root=tmp_path)
    rows = read_csv(art.iterations_csv)
    assert rows == [iteration_columns(1)]
    assert read_csv(art.evaluations_csv)[0] == ["seed", "iteration", "trajectory", "average_reward",
                                                "average_cost_1"]


def test_same_config_gives_identical_artifacts(tmp_path):
    config = small_config()
    a = run_experiment(config, root=tmp_path / "a")
    b = run_experiment(config, root=tmp_path / "b")
    for name in ("iterations.csv", "evaluations.csv", "summary.json", "params_seed0.txt", "config.ini"):
        assert (a.run_dir / name).read_bytes() == (b.run_dir / name).read_bytes()
    assert a.run_dir.name == b.run_dir.name == f"acpo-chain-{config.digest()}"


def test_summary_recomputes_from_csv(tmp_path):
    config = small_config()
    art = run_experiment(config, root=tmp_path)
    stored = json.loads(art.summary_json.read_text(encoding="utf-8"))
    again = summarize(config, art.iterations_csv, art.evaluations_csv, stored["oracle_gain"])
    rows = [r for r in csv.DictReader(open(art.iterations_csv, encoding="utf-8")) if r["seed"] == "1"]
    assert stored["seeds"]["1"]["final_exact_gain"] == pytest.approx(float(rows[-1]["exact_gain"]), abs=1e-12)
    for key in ("final_exact_gain", "final_eval_reward"):
        assert again[key]["mean"] == pytest.approx(stored[key]["mean"], abs=1e-12)
    assert len(rows) == config.iterations
    header = read_csv(art.iterations_csv)[0]
    assert header[:2] == ["seed", "iteration"] and "kind" in header


def test_evaluate_policy_protocol(chain, garnet):
    env = make_env(EnvSpec(kind="chain", num_states=10, num_actions=3, limits=(0.5,)))
    env.reward[...] = 1.0
    r, c, rows = evaluate_policy(env, TabularSoftmaxPolicy(10, 3))
    assert r == 1.0 and len(rows) == 10
    # fast-mixing deterministic policies: the default 10 x 1000 protocol lands within 0.02 of exact J
    rng = np.random.default_rng(0)
    cases = [(chain, np.tile([0.0, 0.0, 5.0], (10, 1)))]
    cases += [(garnet, 5.0 * np.eye(3)[rng.integers(3, size=6)]) for _ in range(5)]
    for env, logits in cases:
        policy = TabularSoftmaxPolicy(env.num_states, 3, logits)
        gain = exact.evaluate(env, np.eye(3)[np.argmax(logits, 1)])[0]
        assert abs(evaluate_policy(env, policy)[0] - gain) < 0.02


def test_suite_identical_pairs_pass_and_zero_sigma_fails():
    rows = verify_bounds_suite(range(3), identical=True, num_policy_samples=10)
    assert not suite_failures(rows)
    failures = suite_failures(verify_bounds_suite(range(3), sigma_override=0.0, num_policy_samples=10))
    assert failures and any("stationary-tv" in f.report.name for f in failures)


def test_seed_range_parsing():
    assert list(parse_seed_range("3..5")) == [3, 4, 5]
    assert list(parse_seed_range("7")) == [7]
    with pytest.raises(Exception):
        parse_seed_range("5..3")


def test_cli_commands(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ACPO_RUN_ROOT", str(tmp_path / "runs"))
    assert main(["print-default-config"]) == 0
    default = capsys.readouterr().out
    assert ExperimentConfig.loads(default) == ExperimentConfig()

    cfg = tmp_path / "small.ini"
    cfg.write_text(small_config(seeds=(0,), iterations=2).dumps(), encoding="utf-8")
    assert main(["train", "--config", str(cfg)]) == 0
    run_dir = capsys.readouterr().out.splitlines()[0]
    assert run_dir.startswith(str(tmp_path / "runs"))
    assert main(["eval", "--run", run_dir]) == 0
    assert "seed 0: reward" in capsys.readouterr().out

    assert main(["solve-exact", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("J* = ") and "constraint 1:" in out

    out_csv = tmp_path / "bounds.csv"
    assert main(["verify-bounds", "--seeds", "0..1", "--out", str(out_csv)]) == 0
    rows = read_csv(out_csv)
    assert rows[0] == ["name", "seed", "lhs", "rhs", "slack", "holds", "asserted"] and len(rows) > 10
    assert main(["verify-bounds", "--seeds", "0..1", "--out", str(out_csv), "--sigma-override", "0"]) == 1
    assert "FAIL" in capsys.readouterr().out
