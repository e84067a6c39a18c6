"""Command-line entry point: ``acpo <command> ...``."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import exact
from .cmdp import TabularCmdp, make_env
from .harness import (RUN_ROOT_ENV, ExperimentConfig, evaluate_run, run_experiment, suite_failures,
                      verify_bounds_suite, write_suite_csv)


def parse_seed_range(text):
    """``"A..B"`` (inclusive) or a single integer."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return range(lo, hi + 1)
    return range(int(text), int(text) + 1)


def _train(args):
    config = ExperimentConfig.load(args.config)

    def progress(seed, k, rep, ex, tr):
        if args.verbose:
            print(f"seed {seed} iter {k} {rep.kind} kl={rep.kl:.3g} gain={rep.gain_before:.4f}", file=sys.stderr)

    art = run_experiment(config, root=args.run_root, on_iteration=progress)
    print(art.run_dir)
    print(json.dumps({"final_exact_gain": art.summary["final_exact_gain"],
                      "final_eval_reward": art.summary["final_eval_reward"]}, indent=2))
    return 1 if any(s["error"] for s in art.summary["seeds"].values()) else 0


def _eval(args):
    results = evaluate_run(args.run)
    for seed, (r, c) in results.items():
        costs = " ".join(f"{x:.6f}" for x in np.atleast_1d(c))
        print(f"seed {seed}: reward {r:.6f} costs {costs}")
    return 0


def _verify(args):
    rows = verify_bounds_suite(args.seeds, sigma_override=args.sigma_override)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_suite_csv(rows, out)
    failures = suite_failures(rows)
    print(f"{len(rows)} reports, {len(failures)} asserted failures; written to {out}")
    for row in failures:
        print(f"FAIL seed {row.seed} {row.report.name}: lhs {float(row.report.lhs)!r} rhs {float(row.report.rhs)!r}")
    return 1 if failures else 0


def _solve_exact(args):
    config = ExperimentConfig.load(args.config)
    env = TabularCmdp.load(args.model) if args.model else make_env(config.env_spec)
    if not hasattr(env, "transition"):
        print("solve-exact needs a tabular environment", file=sys.stderr)
        return 2
    sol = exact.solve_constrained_optimal(env)
    if not sol.feasible:
        print("infeasible: no stationary policy meets the limits")
        return 1
    print(f"J* = {sol.gain:.12g}")
    for i, s in enumerate(sol.slack(env.limits)):
        print(f"constraint {i + 1}: value {sol.cost_values[i]:.12g} limit {env.limits[i]:.12g} slack {s:.6g}")
    print("policy (rows = states, columns = actions):")
    for s, row in enumerate(sol.policy):
        print(f"{s:4d} " + " ".join(f"{p:.6f}" for p in row))
    return 0


def _print_default(args):
    sys.stdout.write(ExperimentConfig().dumps())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="acpo", description="Constrained average-reward policy optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--run-root", default=None, help=f"output root (default: ${RUN_ROOT_ENV} or ./runs)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="re-evaluate the saved policies of a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_eval)

    p = sub.add_parser("verify-bounds", help="run the bound-certification suite over a seed range")
    p.add_argument("--seeds", required=True, type=parse_seed_range, help="A..B, inclusive")
    p.add_argument("--out", default="bounds.csv")
    p.add_argument("--sigma-override", type=float, default=None, help="replace the sampled sigma* constant")
    p.set_defaults(func=_verify)

    p = sub.add_parser("solve-exact", help="solve the tabular model exactly by linear programming")
    p.add_argument("--config", required=True)
    p.add_argument("--model", default=None, help="tabular model text file instead of the config's environment")
    p.set_defaults(func=_solve_exact)

    p = sub.add_parser("print-default-config", help="print a config file with every default")
    p.set_defaults(func=_print_default)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
