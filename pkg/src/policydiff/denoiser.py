"""Transformer denoiser: 32 parameter-row tokens, additive conditioning.

Each 32x82 parameter matrix enters as 32 tokens of width 82, projected to the
model width. A sinusoidal timestep embedding and a projected task embedding
are added to every token. Pre-LN transformer blocks (multi-head attention +
GELU MLP) follow, and an output head maps every token back to 82 noise
predictions plus 82 variance-interpolation coefficients squashed to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .policy import PARAM_SHAPE

N_TOKENS, TOKEN_WIDTH = PARAM_SHAPE  # 32, 82


@dataclass
class DenoiserConfig:
    width: int = 128
    depth: int = 2
    heads: int = 4
    cond_len: int = 32

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise DimensionError(
                f"width {self.width} not divisible by heads {self.heads}"
            )


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (len(t), dim)."""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.shape[0], 1))], axis=1)
    return emb


class _Block:
    """Pre-LN transformer block: attention then GELU MLP, both residual."""

    def __init__(self, config: DenoiserConfig, rng):
        w = config.width
        s = 0.02
        self.ln1_g = Tensor(np.ones(w))
        self.ln1_b = Tensor(np.zeros(w))
        self.wq = Tensor(rng.normal(0.0, s, (w, w)))
        self.wk = Tensor(rng.normal(0.0, s, (w, w)))
        self.wv = Tensor(rng.normal(0.0, s, (w, w)))
        self.wo = Tensor(rng.normal(0.0, s, (w, w)))
        self.ln2_g = Tensor(np.ones(w))
        self.ln2_b = Tensor(np.zeros(w))
        self.w_mlp1 = Tensor(rng.normal(0.0, s, (w, 4 * w)))
        self.b_mlp1 = Tensor(np.zeros(4 * w))
        self.w_mlp2 = Tensor(rng.normal(0.0, s, (4 * w, w)))
        self.b_mlp2 = Tensor(np.zeros(w))
        self.heads = config.heads
        self.width = w

    def parameters(self) -> list[Tensor]:
        return [
            self.ln1_g, self.ln1_b, self.wq, self.wk, self.wv, self.wo,
            self.ln2_g, self.ln2_b,
            self.w_mlp1, self.b_mlp1, self.w_mlp2, self.b_mlp2,
        ]

    def _attention(self, h: Tensor) -> Tensor:
        b, n, w = h.shape
        hd = w // self.heads

        def split(x: Tensor) -> Tensor:
            # (B, N, W) -> (B, heads, N, head_dim)
            return ad.transpose(ad.reshape(x, (b, n, self.heads, hd)), (0, 2, 1, 3))

        q = split(ad.matmul(h, self.wq))
        k = split(ad.matmul(h, self.wk))
        v = split(ad.matmul(h, self.wv))
        scores = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(hd))
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(attn, v)  # (B, heads, N, head_dim)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, n, w))
        return ad.matmul(merged, self.wo)

    def __call__(self, h: Tensor) -> Tensor:
        h = ad.add(h, self._attention(ad.layer_norm(h, self.ln1_g, self.ln1_b)))
        m = ad.layer_norm(h, self.ln2_g, self.ln2_b)
        m = ad.add(ad.matmul(m, self.w_mlp1), self.b_mlp1)
        m = ad.add(ad.matmul(ad.gelu(m), self.w_mlp2), self.b_mlp2)
        return ad.add(h, m)


class Denoiser:
    def __init__(self, config: DenoiserConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1F]))
        w = config.width
        s = 0.02
        self.w_in = Tensor(rng.normal(0.0, s, (TOKEN_WIDTH, w)))
        self.b_in = Tensor(np.zeros(w))
        self.w_time = Tensor(rng.normal(0.0, s, (w, w)))
        self.b_time = Tensor(np.zeros(w))
        self.w_cond = Tensor(rng.normal(0.0, s, (config.cond_len, w)))
        self.b_cond = Tensor(np.zeros(w))
        self.pos = Tensor(rng.normal(0.0, s, (N_TOKENS, w)))
        self.blocks = [_Block(config, rng) for _ in range(config.depth)]
        self.lnf_g = Tensor(np.ones(w))
        self.lnf_b = Tensor(np.zeros(w))
        self.w_out = Tensor(rng.normal(0.0, s, (w, 2 * TOKEN_WIDTH)))
        self.b_out = Tensor(np.zeros(2 * TOKEN_WIDTH))

    def parameters(self) -> list[Tensor]:
        params = [
            self.w_in, self.b_in, self.w_time, self.b_time,
            self.w_cond, self.b_cond, self.pos,
        ]
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend([self.lnf_g, self.lnf_b, self.w_out, self.b_out])
        return params

    def forward(
        self, x: Tensor | np.ndarray, t: np.ndarray, cond: Tensor | np.ndarray
    ) -> tuple[Tensor, Tensor]:
        """x: (B, 32, 82) noisy params; t: (B,) step indices; cond: (B, L).
        Returns (epsilon_hat, v_hat), both (B, 32, 82), v_hat in [0, 1]."""
        x = ad.as_tensor(x)
        cond = ad.as_tensor(cond)
        if x.shape[1:] != (N_TOKENS, TOKEN_WIDTH):
            raise DimensionError(f"denoiser input shape {x.shape}")
        if cond.shape[-1] != self.config.cond_len:
            raise DimensionError(
                f"condition length {cond.shape[-1]}, expected {self.config.cond_len}"
            )
        b = x.shape[0]
        temb_np = timestep_embedding(t, self.config.width)
        temb = ad.add(ad.matmul(Tensor(temb_np), self.w_time), self.b_time)
        cemb = ad.add(ad.matmul(cond, self.w_cond), self.b_cond)
        h = ad.add(ad.matmul(x, self.w_in), self.b_in)
        h = ad.add(h, self.pos)
        h = ad.add(h, ad.reshape(temb, (b, 1, self.config.width)))
        h = ad.add(h, ad.reshape(cemb, (b, 1, self.config.width)))
        for block in self.blocks:
            h = block(h)
        h = ad.layer_norm(h, self.lnf_g, self.lnf_b)
        out = ad.add(ad.matmul(h, self.w_out), self.b_out)
        eps_hat = ad.slice_last(out, 0, TOKEN_WIDTH)
        v_hat = ad.sigmoid(ad.slice_last(out, TOKEN_WIDTH, 2 * TOKEN_WIDTH))
        return eps_hat, v_hat

    def weight_arrays(self) -> dict[str, np.ndarray]:
        return {f"p{i}": p.value for i, p in enumerate(self.parameters())}

    def load_weight_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.parameters()):
            src = arrays[f"p{i}"]
            if src.shape != p.value.shape:
                raise DimensionError(
                    f"checkpoint tensor p{i} shape {src.shape}, "
                    f"expected {p.value.shape}"
                )
            p.value = src.copy()
