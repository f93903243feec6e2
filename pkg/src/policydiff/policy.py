"""Fixed-shape policy: 75-dim observation -> 32 tanh hidden -> 7 action logits.

Parameters live in a single 32x82 float64 matrix. Columns 0..74 hold the
input weights W1 (hidden i <- observation j); columns 75..81 hold the output
weights transposed (hidden i -> action a). There are no bias terms: the
32x82 accounting leaves no room for them.
"""

from __future__ import annotations

import struct

import numpy as np

from . import backend
from .errors import DimensionError, FormatError, NumericError
from .nn import softmax

HIDDEN = 32
OBS_DIM = 75
N_ACTIONS = 7
PARAM_COLS = OBS_DIM + N_ACTIONS  # 82
PARAM_SHAPE = (HIDDEN, PARAM_COLS)

_MAGIC = b"PDPF"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, rows, cols


def check_params(params: np.ndarray) -> np.ndarray:
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.shape != PARAM_SHAPE:
        raise DimensionError(f"policy params must be {PARAM_SHAPE}, got {params.shape}")
    return params


def unflatten(params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the 32x82 matrix into W1 (32x75) and W2 (7x32)."""
    params = check_params(params)
    return params[:, :OBS_DIM].copy(), params[:, OBS_DIM:].T.copy()


def flatten(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Inverse of unflatten; round trips bitwise."""
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.shape != (HIDDEN, OBS_DIM) or w2.shape != (N_ACTIONS, HIDDEN):
        raise DimensionError(f"flatten: got W1 {w1.shape}, W2 {w2.shape}")
    return np.concatenate([w1, w2.T], axis=1)


def act_logits(params: np.ndarray, obs: np.ndarray) -> np.ndarray:
    params = check_params(params)
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    if obs.shape != (OBS_DIM,):
        raise DimensionError(f"observation must be ({OBS_DIM},), got {obs.shape}")
    logits = backend.policy_logits(params, obs)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite policy logits")
    return logits


def act_probs(params: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """softmax(W2 . tanh(W1 . obs))"""
    return softmax(act_logits(params, obs))


def act(params: np.ndarray, obs: np.ndarray, mode: str = "greedy", seed=None) -> int:
    """Greedy argmax (lowest index on ties) or seeded sampling."""
    if mode == "greedy":
        return int(np.argmax(act_logits(params, obs)))
    if mode == "sample":
        rng = np.random.default_rng(seed)
        return int(rng.choice(N_ACTIONS, p=act_probs(params, obs)))
    raise ValueError(f"unknown action mode: {mode}")


def save_policy(params: np.ndarray, path) -> None:
    params = check_params(params)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, HIDDEN, PARAM_COLS))
        fh.write(params.astype("<f8").tobytes())


def load_policy(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"policy file truncated at byte {len(blob)} (header incomplete)")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise FormatError("policy file magic mismatch at byte 0")
    if version != _VERSION:
        raise FormatError(f"unsupported policy file version {version} at byte 4")
    if (rows, cols) != PARAM_SHAPE:
        raise FormatError(f"unexpected policy shape {(rows, cols)} at byte 8")
    expected = _HEADER.size + rows * cols * 8
    if len(blob) != expected:
        raise FormatError(
            f"policy file truncated at byte {len(blob)}, expected {expected}"
        )
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    return data.reshape(rows, cols).astype(np.float64)
