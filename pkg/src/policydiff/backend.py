"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set POLICYDIFF_PURE=1 to force the numpy implementation (used by the
benchmark and the backend parity tests). The two backends agree to float64
rounding; within one process the selected backend is fixed, so pipeline
determinism is unaffected.
"""

from __future__ import annotations

import os

import numpy as np

if os.environ.get("POLICYDIFF_PURE"):
    _ext = None
else:
    try:
        from . import _ckernels as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"


def _py_policy_logits(mat: np.ndarray, obs: np.ndarray) -> np.ndarray:
    n_obs = obs.shape[0]
    hidden = np.tanh(mat[:, :n_obs] @ obs)
    return hidden @ mat[:, n_obs:]


def _py_greedy_actions(stack: np.ndarray, obs: np.ndarray) -> np.ndarray:
    n_obs = obs.shape[0]
    hidden = np.tanh(stack[:, :, :n_obs] @ obs)
    logits = np.einsum("pi,pia->pa", hidden, stack[:, :, n_obs:])
    return np.argmax(logits, axis=1)


if _ext is not None:
    policy_logits = _ext.policy_logits
    greedy_actions = _ext.greedy_actions
else:
    policy_logits = _py_policy_logits
    greedy_actions = _py_greedy_actions
