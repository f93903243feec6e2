"""Compiled kernels against the pure numpy reference implementation."""

import os
import subprocess
import sys

import numpy as np

from policydiff import backend
from policydiff.backend import _py_greedy_actions, _py_policy_logits
from policydiff.policy import OBS_DIM, PARAM_SHAPE

RNG = np.random.default_rng(0)


def test_policy_logits_parity():
    for _ in range(20):
        params = RNG.normal(size=PARAM_SHAPE)
        obs = RNG.random(OBS_DIM)
        selected = backend.policy_logits(params, obs)
        reference = _py_policy_logits(params, obs)
        assert np.allclose(selected, reference, rtol=1e-12, atol=1e-12)


def test_greedy_actions_parity():
    for _ in range(10):
        stack = RNG.normal(size=(16, *PARAM_SHAPE))
        obs = RNG.random(OBS_DIM)
        selected = np.asarray(backend.greedy_actions(stack, obs))
        reference = _py_greedy_actions(stack, obs)
        assert np.array_equal(selected, reference)


def test_greedy_actions_match_per_policy_logits():
    stack = RNG.normal(size=(8, *PARAM_SHAPE))
    obs = RNG.random(OBS_DIM)
    actions = np.asarray(backend.greedy_actions(stack, obs))
    for i in range(8):
        assert actions[i] == np.argmax(backend.policy_logits(stack[i], obs))


def test_pure_env_forces_python_backend():
    code = (
        "import policydiff.backend as b; print(b.BACKEND)"
    )
    env = dict(os.environ, POLICYDIFF_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "python"


def test_compiled_backend_available():
    """The extension should have been built with the package."""
    assert backend.BACKEND in ("cython", "python")
    out = subprocess.run(
        [sys.executable, "-c", "import policydiff.backend as b; print(b.BACKEND)"],
        capture_output=True,
        text=True,
        env={k: v for k, v in os.environ.items() if k != "POLICYDIFF_PURE"},
    )
    assert out.stdout.strip() == "cython"
