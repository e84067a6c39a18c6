"""Compiled versus pure-Python kernels: timing and bit-identity.

    python benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from acpo import kernels
from acpo.cmdp import EnvSpec, make_env
from acpo.estimation import sampling_cdf
from acpo.exact import random_policy


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=100_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    env = make_env(EnvSpec(kind="garnet", seed=0, num_states=50, num_actions=4, branching=5, num_costs=1,
                           limits=(0.5,)))
    pcdf = sampling_cdf(random_policy(rng, env.num_states, env.num_actions))
    tcdf = np.ascontiguousarray(sampling_cdf(env.transition))
    uniforms = rng.random(2 * args.steps)
    deltas = rng.standard_normal(args.steps)

    cases = {
        "tabular_rollout": lambda b: b.tabular_rollout(pcdf, tcdf, 0, uniforms),
        "backward_accumulate": lambda b: b.backward_accumulate(deltas, 0.95),
    }
    print(f"{'kernel':<22}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}  identical")
    for name, call in cases.items():
        py = min(timeit.repeat(lambda: call(kernels.python_backend), number=1, repeat=args.repeat))
        cy = min(timeit.repeat(lambda: call(kernels.compiled_backend), number=1, repeat=args.repeat))
        a, b = call(kernels.python_backend), call(kernels.compiled_backend)
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
        print(f"{name:<22}{py:>12.4f}{cy:>12.5f}{py / cy:>10.1f}  {same}")


if __name__ == "__main__":
    main()
