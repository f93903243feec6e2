"""Cosine noise schedule for the diffusion process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

DEFAULT_T = 1000
BETA_CLIP = 0.999


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray  # (T,)
    alpha: np.ndarray  # (T,) = 1 - beta
    alpha_bar: np.ndarray  # (T,) cumulative products
    posterior_beta_tilde: np.ndarray  # (T,)

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar", "posterior_beta_tilde"):
            arr = getattr(self, name)
            if arr.shape != (self.T,):
                raise ContractError(f"schedule field {name} shape {arr.shape}")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ContractError("alpha_bar must be strictly decreasing")
        if np.any(self.beta <= 0) or np.any(self.beta > BETA_CLIP):
            raise ContractError(f"beta must lie in (0, {BETA_CLIP}]")


def cosine_schedule(
    T: int = DEFAULT_T, offset: float = 0.008, beta_clip: float = BETA_CLIP
) -> NoiseSchedule:
    """f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2); alpha_bar_t = f(t)/f(0);
    beta_t = min(1 - alpha_bar_t / alpha_bar_{t-1}, beta_clip). Index t runs
    1..T internally; arrays are 0-based with entry i holding step t = i + 1,
    and the implied alpha_bar at t = 0 is exactly 1."""
    if T < 1:
        raise ContractError(f"schedule needs T >= 1, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + offset) / (1.0 + offset)) * np.pi / 2.0) ** 2
    alpha_bar_full = f / f[0]  # alpha_bar_full[0] == 1 exactly
    beta = np.minimum(1.0 - alpha_bar_full[1:] / alpha_bar_full[:-1], beta_clip)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_beta_tilde = beta * (1.0 - prev) / (1.0 - alpha_bar)
    return NoiseSchedule(
        T=T,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        posterior_beta_tilde=posterior_beta_tilde,
    )


def log_posterior_variance(schedule: NoiseSchedule) -> np.ndarray:
    """log beta_tilde with the t=1 entry clipped to the t=2 value, because
    beta_tilde_1 = 0 and its log is undefined."""
    bt = schedule.posterior_beta_tilde.copy()
    if schedule.T > 1:
        bt[0] = bt[1]
    else:
        bt[0] = schedule.beta[0]
    return np.log(bt)
