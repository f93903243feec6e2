"""Conditional diffusion over normalized 32x82 policy parameter matrices.

Gaussian forward process on a cosine schedule; the denoiser predicts noise
and a variance-interpolation coefficient, trained with the hybrid loss
(epsilon MSE plus a small KL term with the mean frozen); ancestral sampling
with optional stride subsampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import io_bin
from .autodiff import Tensor
from .denoiser import Denoiser, DenoiserConfig
from .errors import ContractError, NumericError
from .nn import Adam
from .policy import PARAM_SHAPE, check_params
from .schedule import NoiseSchedule, cosine_schedule, log_posterior_variance
from .store import NormStats, ParamDataset, denormalize, normalize

VLB_LAMBDA = 0.001
DEFAULT_BATCH = 128


@dataclass
class DiffusionModel:
    denoiser: Denoiser
    schedule: NoiseSchedule
    norm_stats: NormStats
    loss_curve: list = field(default_factory=list)  # (epoch, simple, vlb, total)

    @property
    def cond_len(self) -> int:
        return self.denoiser.config.cond_len


def q_sample(
    x0: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise, t in 1..T."""
    if not 1 <= t <= schedule.T:
        raise ContractError(f"q_sample: t={t} outside 1..{schedule.T}")
    if x0.shape != noise.shape:
        raise ContractError(f"q_sample: shapes {x0.shape} vs {noise.shape}")
    ab = schedule.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def _posterior_mean_coefs(schedule: NoiseSchedule, t: np.ndarray):
    """Coefficients (c0, ct) with q-posterior mean = c0*x0 + ct*xt, t 1..T."""
    ab = schedule.alpha_bar[t - 1]
    ab_prev = np.where(t > 1, schedule.alpha_bar[np.maximum(t - 2, 0)], 1.0)
    beta = schedule.beta[t - 1]
    alpha = schedule.alpha[t - 1]
    c0 = beta * np.sqrt(ab_prev) / (1.0 - ab)
    ct = (1.0 - ab_prev) * np.sqrt(alpha) / (1.0 - ab)
    return c0, ct


def hybrid_loss(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    x0: np.ndarray,
    t: np.ndarray,
    noise: np.ndarray,
    cond: np.ndarray,
    vlb_lambda: float = VLB_LAMBDA,
) -> tuple[Tensor, dict]:
    """simple = MSE(noise, eps_hat); vlb = KL(q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t))
    with the model mean frozen (no gradient through eps_hat in the KL), model
    variance log Sigma = v*log beta_t + (1-v)*log beta_tilde_t.
    Returns (loss tensor, {"simple": float, "vlb": float})."""
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ContractError(f"hybrid_loss: t outside 1..{schedule.T}")
    b = x0.shape[0]
    ab = schedule.alpha_bar[t - 1]
    xt = (
        np.sqrt(ab)[:, None, None] * x0 + np.sqrt(1.0 - ab)[:, None, None] * noise
    )
    eps_hat, v_hat = denoiser.forward(Tensor(xt), t, Tensor(cond))
    simple = ad.tmean(ad.square(ad.sub(eps_hat, noise)))

    # KL between the q-posterior and the model's Gaussian, mean frozen
    log_beta = np.log(schedule.beta[t - 1])[:, None, None]
    log_beta_tilde = log_posterior_variance(schedule)[t - 1][:, None, None]
    model_logvar = ad.add(
        ad.mul(v_hat, log_beta), ad.mul(ad.sub(1.0, v_hat), log_beta_tilde)
    )
    c0, ct = _posterior_mean_coefs(schedule, t)
    true_mean = c0[:, None, None] * x0 + ct[:, None, None] * xt
    # model mean from eps_hat, detached so only the variance trains on the KL
    eps_frozen = eps_hat.value
    alpha = schedule.alpha[t - 1][:, None, None]
    abm = ab[:, None, None]
    model_mean = (xt - eps_frozen * (1.0 - alpha) / np.sqrt(1.0 - abm)) / np.sqrt(
        alpha
    )
    true_logvar = log_beta_tilde
    diff2 = (true_mean - model_mean) ** 2
    # KL(N(m_q, v_q) || N(m_p, v_p))
    #   = 0.5 * (log(v_p/v_q) + v_q/v_p + (m_q - m_p)^2/v_p - 1)
    kl = ad.mul(
        ad.add(
            ad.sub(model_logvar, true_logvar),
            ad.add(
                ad.exp(ad.sub(true_logvar, model_logvar)),
                ad.mul(ad.exp(ad.mul(model_logvar, -1.0)), diff2),
            ),
        ),
        0.5,
    )
    kl = ad.sub(kl, 0.5)
    vlb = ad.tmean(kl)
    loss = ad.add(simple, ad.mul(vlb, vlb_lambda))
    if not np.isfinite(loss.value):
        raise NumericError(f"non-finite hybrid loss at t={t.tolist()}")
    return loss, {"simple": float(simple.value), "vlb": float(vlb.value)}


def train_diffusion(
    dataset: ParamDataset,
    config: DenoiserConfig | None = None,
    epochs: int = 200,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH,
    learning_rate: float = 1e-3,
    schedule: NoiseSchedule | None = None,
    vlb_lambda: float = VLB_LAMBDA,
) -> DiffusionModel:
    """Adam on the hybrid loss over minibatches of (params, embedding) pairs.
    Deterministic under (dataset, config, seed)."""
    if len(dataset) == 0:
        raise ContractError("train_diffusion: empty dataset")
    if config is None:
        config = DenoiserConfig(cond_len=dataset.embedding_length)
    if schedule is None:
        schedule = cosine_schedule()
    if len(dataset) >= 2:
        x_norm, stats = normalize(dataset)
    else:
        stats = NormStats(
            mean=dataset.records[0].params.copy(),
            std=np.ones(PARAM_SHAPE),
        )
        dataset.norm_stats = stats
        x_norm = np.zeros((1, *PARAM_SHAPE))
    conds = np.stack([r.embedding for r in dataset.records])
    denoiser = Denoiser(config, seed=seed)
    opt = Adam(denoiser.parameters(), lr=learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1FF]))
    model = DiffusionModel(denoiser=denoiser, schedule=schedule, norm_stats=stats)
    n = x_norm.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        simple_sum = vlb_sum = total_sum = 0.0
        batches = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            noise = rng.standard_normal((len(idx), *PARAM_SHAPE))
            loss, parts = hybrid_loss(
                denoiser, schedule, x_norm[idx], t, noise, conds[idx], vlb_lambda
            )
            ad.backward(loss)
            opt.step()
            simple_sum += parts["simple"]
            vlb_sum += parts["vlb"]
            total_sum += float(loss.value)
            batches += 1
        model.loss_curve.append(
            (epoch, simple_sum / batches, vlb_sum / batches, total_sum / batches)
        )
    return model


def p_sample_loop(
    model: DiffusionModel,
    condition: np.ndarray,
    seed: int,
    stride: int = 1,
) -> np.ndarray:
    """Ancestral sampling from seeded noise; returns denormalized 32x82 params.

    stride > 1 subsamples the schedule for speed (off for acceptance runs)."""
    schedule = model.schedule
    if condition.shape != (model.cond_len,):
        raise ContractError(
            f"condition shape {condition.shape}, expected ({model.cond_len},)"
        )
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A3]))
    x = rng.standard_normal((1, *PARAM_SHAPE))
    cond = condition[None, :]
    steps = list(range(schedule.T, 0, -stride))
    if steps[-1] != 1:
        steps.append(1)
    log_bt = log_posterior_variance(schedule)
    for t in steps:
        ts = np.array([t])
        eps_hat, v_hat = model.denoiser.forward(Tensor(x), ts, Tensor(cond))
        eps = eps_hat.value
        v = v_hat.value
        alpha = schedule.alpha[t - 1]
        ab = schedule.alpha_bar[t - 1]
        mean = (x - eps * (1.0 - alpha) / np.sqrt(1.0 - ab)) / np.sqrt(alpha)
        if t > 1:
            logvar = v * np.log(schedule.beta[t - 1]) + (1.0 - v) * log_bt[t - 1]
            x = mean + np.exp(0.5 * logvar) * rng.standard_normal(x.shape)
        else:
            x = mean
    sampled = denormalize(x[0], model.norm_stats)
    return check_params(sampled)


_CKPT_KIND = "policydiff-diffusion-checkpoint"


def save_checkpoint(model: DiffusionModel, path) -> None:
    cfg = model.denoiser.config
    meta = {
        "kind": _CKPT_KIND,
        "width": cfg.width,
        "depth": cfg.depth,
        "heads": cfg.heads,
        "cond_len": cfg.cond_len,
        "T": model.schedule.T,
        "loss_curve": model.loss_curve,
    }
    arrays = {
        "schedule.beta": model.schedule.beta,
        "stats.mean": model.norm_stats.mean,
        "stats.std": model.norm_stats.std,
    }
    arrays.update(
        {f"w.{k}": v for k, v in model.denoiser.weight_arrays().items()}
    )
    io_bin.write_blob(path, meta, arrays)


def load_checkpoint(path) -> DiffusionModel:
    meta, arrays = io_bin.read_blob(path)
    if meta.get("kind") != _CKPT_KIND:
        raise ContractError(f"not a diffusion checkpoint: kind={meta.get('kind')!r}")
    config = DenoiserConfig(
        width=meta["width"],
        depth=meta["depth"],
        heads=meta["heads"],
        cond_len=meta["cond_len"],
    )
    beta = arrays["schedule.beta"]
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    schedule = NoiseSchedule(
        T=meta["T"],
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        posterior_beta_tilde=beta * (1.0 - prev) / (1.0 - alpha_bar),
    )
    stats = NormStats(mean=arrays["stats.mean"], std=arrays["stats.std"])
    denoiser = Denoiser(config, seed=0)
    denoiser.load_weight_arrays(
        {k[2:]: v for k, v in arrays.items() if k.startswith("w.")}
    )
    model = DiffusionModel(denoiser=denoiser, schedule=schedule, norm_stats=stats)
    model.loss_curve = [tuple(row) for row in meta.get("loss_curve", [])]
    return model


def export_loss_curve(model: DiffusionModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,simple,vlb,total\n")
        for epoch, simple, vlb, total in model.loss_curve:
            fh.write(f"{epoch},{simple:.8f},{vlb:.8f},{total:.8f}\n")
