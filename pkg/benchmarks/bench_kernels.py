"""Benchmark the compiled policy kernels against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Times `policy_logits` (single 32x82 policy forward pass) and
`greedy_actions` (greedy argmax over a stack of policies, the MoS voting
kernel) under both backends and reports the speedup.
"""

import timeit

import numpy as np

from policydiff import backend
from policydiff.policy import OBS_DIM, PARAM_SHAPE

REPEAT = 5


def bench(label, fn, number):
    best = min(timeit.repeat(fn, number=number, repeat=REPEAT)) / number
    print(f"  {label:<28} {best * 1e6:10.2f} us/call")
    return best


def main():
    rng = np.random.default_rng(0)
    mat = rng.normal(0, 0.5, PARAM_SHAPE)
    stack = rng.normal(0, 0.5, (16, *PARAM_SHAPE))
    obs = rng.random(OBS_DIM)

    if backend.BACKEND != "cython":
        print(
            "compiled extension not importable; only the numpy fallback "
            "is measured"
        )

    print(f"policy_logits (one {PARAM_SHAPE} policy):")
    py = bench("python (numpy)", lambda: backend._py_policy_logits(mat, obs), 20_000)
    if backend.BACKEND == "cython":
        cy = bench("cython", lambda: backend.policy_logits(mat, obs), 20_000)
        print(f"  speedup: {py / cy:.2f}x")
        assert np.allclose(
            backend.policy_logits(mat, obs), backend._py_policy_logits(mat, obs)
        )

    print(f"greedy_actions (stack of {stack.shape[0]} policies):")
    py = bench(
        "python (numpy)", lambda: backend._py_greedy_actions(stack, obs), 5_000
    )
    if backend.BACKEND == "cython":
        cy = bench("cython", lambda: backend.greedy_actions(stack, obs), 5_000)
        print(f"  speedup: {py / cy:.2f}x")
        assert np.array_equal(
            backend.greedy_actions(stack, obs),
            backend._py_greedy_actions(stack, obs),
        )


if __name__ == "__main__":
    main()
