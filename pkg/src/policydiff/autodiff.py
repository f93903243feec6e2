"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape: every operation returns a new Tensor holding its value and
closures that push the upstream gradient to each parent. `backward` runs a
topological sweep and accumulates gradients on every reachable tensor.
Only the operations the package's architectures need are provided.
"""

from __future__ import annotations

import math

import numpy as np

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_COEF = 0.044715


class Tensor:
    """Node of the computation graph.

    `value` is always a float64 ndarray (possibly zero-dimensional).
    Leaves (parameters, inputs) have no parents; after `backward` every
    reachable tensor carries its gradient in `grad`.
    """

    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(
        a.value + b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value - b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value * b.value,
        parents=(
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    inv = 1.0 / b.value
    return Tensor(
        a.value * inv,
        parents=(
            (a, lambda g: _unbroadcast(g * inv, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value * inv * inv, b.value.shape)),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.value.shape)

    def grad_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.value.shape)

    return Tensor(np.matmul(a.value, b.value), parents=((a, grad_a), (b, grad_b)))


def transpose(a: Tensor, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.value.ndim - 2)) + (a.value.ndim - 1, a.value.ndim - 2)
    inverse = tuple(np.argsort(axes))
    return Tensor(
        np.transpose(a.value, axes), parents=((a, lambda g: np.transpose(g, inverse)),)
    )


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(
        a.value.reshape(shape), parents=((a, lambda g: g.reshape(a.value.shape)),)
    )


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return Tensor(y, parents=((a, lambda g: g * (1.0 - y * y)),))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.value))
    return Tensor(y, parents=((a, lambda g: g * y * (1.0 - y)),))


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    return Tensor(y, parents=((a, lambda g: g * y),))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.value), parents=((a, lambda g: g / a.value),))


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value * a.value, parents=((a, lambda g: g * 2.0 * a.value),))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU (keeps the derivative self-contained)."""
    a = as_tensor(a)
    x = a.value
    inner = _SQRT_2_OVER_PI * (x + _GELU_COEF * x**3)
    t = np.tanh(inner)

    def grad_fn(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_COEF * x * x)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)

    return Tensor(0.5 * x * (1.0 + t), parents=((a, grad_fn),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return Tensor(y, parents=((a, grad_fn),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - logz
    p = np.exp(y)

    def grad_fn(g):
        return g - p * g.sum(axis=axis, keepdims=True)

    return Tensor(y, parents=((a, grad_fn),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return Tensor(a.value.sum(axis=axis, keepdims=keepdims), parents=((a, grad_fn),))


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.value.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.value.shape[ax] for ax in axis]))
    else:
        n = a.value.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = a.value <= b.value
    return Tensor(
        np.minimum(a.value, b.value),
        parents=(
            (a, lambda g: _unbroadcast(g * mask, a.value.shape)),
            (b, lambda g: _unbroadcast(g * ~mask, b.value.shape)),
        ),
    )


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return Tensor(np.clip(a.value, lo, hi), parents=((a, lambda g: g * inside),))


def take_per_row(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[i] = a[i, idx[i]] for a 2-D tensor."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.value.shape[0])

    def grad_fn(g):
        out = np.zeros_like(a.value)
        out[rows, idx] = g
        return out

    return Tensor(a.value[rows, idx], parents=((a, grad_fn),))


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        out = np.zeros_like(a.value)
        out[..., start:stop] = g
        return out

    return Tensor(a.value[..., start:stop].copy(), parents=((a, grad_fn),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.value.mean(axis=-1, keepdims=True)
    var = x.value.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv_std

    def grad_x(g):
        gx = g * gamma.value
        return inv_std * (
            gx
            - gx.mean(axis=-1, keepdims=True)
            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )

    def grad_gamma(g):
        return _unbroadcast(g * xhat, gamma.value.shape)

    def grad_beta(g):
        return _unbroadcast(g, beta.value.shape)

    return Tensor(
        gamma.value * xhat + beta.value,
        parents=((x, grad_x), (gamma, grad_gamma), (beta, grad_beta)),
    )


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.value.shape[0]
    shifted = logits.value - logits.value.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), targets].mean()

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(n), targets] -= 1.0
        return g * p / n

    return Tensor(loss, parents=((logits, grad_fn),))


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar `root` into every reachable tensor."""
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    for node in topo:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, grad_fn in node._parents:
            contribution = grad_fn(g)
            if parent.grad is None:
                parent.grad = contribution
            else:
                parent.grad = parent.grad + contribution
