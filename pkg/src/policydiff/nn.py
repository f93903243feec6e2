"""Dense layers, an Adam optimizer and gradient checking.

Everything is float64. Networks are small, fixed-shape MLPs built on the
autodiff tape; the denoiser transformer lives in `denoiser.py` on the same
tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError


def dense_forward(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Plain matrix-vector product out[i] = sum_j weights[i, j] * x[j]."""
    weights = np.asarray(weights, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if weights.ndim != 2 or x.ndim != 1 or weights.shape[1] != x.shape[0]:
        raise DimensionError(
            f"dense_forward: weights {weights.shape} incompatible with input {x.shape}"
        )
    return weights @ x


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Linear:
    """y = x @ W.T (+ b). Weight shape (out_dim, in_dim)."""

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True, *, rng=None, scale=None):
        rng = rng or np.random.default_rng(0)
        if scale is None:
            scale = 1.0 / np.sqrt(in_dim)
        self.weight = Tensor(rng.normal(0.0, scale, size=(out_dim, in_dim)))
        self.bias = Tensor(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, ad.transpose(self.weight))
        if self.bias is not None:
            y = ad.add(y, self.bias)
        return y

    def parameters(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class MLP:
    """Fully-connected net with tanh hidden activations."""

    def __init__(self, sizes: list[int], bias: bool = True, *, rng=None):
        rng = rng or np.random.default_rng(0)
        self.layers = [
            Linear(sizes[i], sizes[i + 1], bias=bias, rng=rng)
            for i in range(len(sizes) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if not np.all(np.isfinite(x.value)):
                raise NumericError(f"non-finite activation at layer {i}")
            if i < len(self.layers) - 1:
                x = ad.tanh(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def backprop(net, inputs, targets, loss_kind: str):
    """Loss and per-parameter gradients for a network on one batch.

    loss kinds: "cross_entropy" (integer targets), "mse" (float targets),
    "diffusion_hybrid" (net must expose hybrid_loss(*inputs); targets unused).
    """
    if loss_kind == "diffusion_hybrid":
        loss, _parts = net.hybrid_loss(*inputs)
    else:
        logits = net(Tensor(np.asarray(inputs, dtype=np.float64)))
        if loss_kind == "cross_entropy":
            loss = ad.cross_entropy(logits, targets)
        elif loss_kind == "mse":
            diff = ad.sub(logits, np.asarray(targets, dtype=np.float64))
            loss = ad.tmean(ad.square(diff))
        else:
            raise ValueError(f"unknown loss kind: {loss_kind}")
    if not np.isfinite(loss.value):
        raise NumericError(f"non-finite {loss_kind} loss")
    ad.backward(loss)
    grads = [
        p.grad if p.grad is not None else np.zeros_like(p.value)
        for p in net.parameters()
    ]
    return float(loss.value), grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one parameter array."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), **kwargs)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One bias-corrected Adam update; returns (new_params, state)."""
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise DimensionError(
            f"adam_step: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}"
        )
    state.step_count += 1
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    state.second_moment = (
        state.beta2 * state.second_moment + (1 - state.beta2) * grads * grads
    )
    m_hat = state.first_moment / (1 - state.beta1**state.step_count)
    v_hat = state.second_moment / (1 - state.beta2**state.step_count)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, state


class Adam:
    """Adam over a list of tape tensors (reads .grad, updates .value in place)."""

    def __init__(self, params: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.states = [
            AdamState.for_params(
                p.value, learning_rate=lr, beta1=beta1, beta2=beta2, epsilon=eps
            )
            for p in params
        ]

    def step(self) -> None:
        for p, state in zip(self.params, self.states):
            grad = p.grad if p.grad is not None else np.zeros_like(p.value)
            p.value, _ = adam_step(p.value, grad, state)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn,
    params: list[Tensor],
    perturbation: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    Relative error per coordinate: |analytic - numeric| /
    max(1e-8, |analytic| + |numeric|). When `max_coords_per_tensor` is set,
    a seeded random subset of coordinates is checked per tensor (the full
    sweep is quadratic in parameter count and only needed for small nets).
    """
    loss = loss_fn()
    ad.backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params
    ]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a_grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        a_flat = a_grad.reshape(-1)
        for i in coords:
            original = flat[i]
            flat[i] = original + perturbation
            up = float(loss_fn().value)
            flat[i] = original - perturbation
            down = float(loss_fn().value)
            flat[i] = original
            numeric = (up - down) / (2 * perturbation)
            denom = max(1e-8, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
