"""Evaluation harness: sampled policies, baselines, and Mixture-of-Samples.

Per task: greedy returns of a single diffusion sample over seeded episodes;
a uniform-random policy; elementwise mean/median/mode baselines over that
task's stored parameter matrices; and MoS plurality voting over m fresh
samples. Aggregated as mean +/- std across tasks, Table-style.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import gridworld
from .backend import greedy_actions
from .diffusion import DiffusionModel, p_sample_loop
from .errors import ContractError, MissionLookupError
from .policy import act
from .rollout import run_episode
from .store import ParamDataset, embed_task

EVAL_SEED_BASE = 3_000_000
SAMPLE_SEED_BASE = 4_000_000
MODE_BINS = 101


@dataclass
class EvalConfig:
    runs_per_task: int = 10
    mos_sizes: tuple = (4, 8, 16)
    seed: int = 0

    def __post_init__(self):
        if self.runs_per_task < 1:
            raise ContractError("runs_per_task must be >= 1")
        if any(m < 1 for m in self.mos_sizes):
            raise ContractError("every MoS size must be >= 1")


@dataclass
class EvalReport:
    conditions: dict = field(default_factory=dict)  # name -> (mean, std)
    per_task: list = field(default_factory=list)  # (condition, task_id, mean, std)
    metadata: dict = field(default_factory=dict)


def evaluate_policy(params: np.ndarray, task, config: EvalConfig) -> tuple[float, float]:
    """Greedy rollouts on runs_per_task seeded resets."""
    seeds = [EVAL_SEED_BASE + config.seed * 100_000 + i for i in range(config.runs_per_task)]
    returns = np.array(
        [run_episode(task, s, lambda o: act(params, o, mode="greedy")) for s in seeds]
    )
    return float(returns.mean()), float(returns.std())


def evaluate_action_fn(action_fn, task, config: EvalConfig) -> tuple[float, float]:
    seeds = [EVAL_SEED_BASE + config.seed * 100_000 + i for i in range(config.runs_per_task)]
    returns = np.array([run_episode(task, s, action_fn) for s in seeds])
    return float(returns.mean()), float(returns.std())


def _task_params(dataset: ParamDataset, task_id: str) -> np.ndarray:
    stack = [r.params for r in dataset.records if r.task_id == task_id]
    if not stack:
        raise MissionLookupError(f"no stored policies for task {task_id!r}")
    return np.stack(stack)


def _binned_mode(stack: np.ndarray) -> np.ndarray:
    """Elementwise mode: center of the most populated of MODE_BINS equal-width
    bins over each coordinate's observed range; ties go to the lower bin."""
    n, rows, cols = stack.shape
    lo = stack.min(axis=0)
    hi = stack.max(axis=0)
    span = hi - lo
    degenerate = span == 0.0
    width = np.where(degenerate, 1.0, span) / MODE_BINS
    idx = np.clip(
        ((stack - lo[None]) / width[None]).astype(np.int64), 0, MODE_BINS - 1
    )
    # count per (coordinate, bin) with a vectorized bincount
    flat = idx.reshape(n, -1)
    coord = np.arange(flat.shape[1])
    counts = np.zeros((flat.shape[1], MODE_BINS), dtype=np.int64)
    for i in range(n):
        np.add.at(counts, (coord, flat[i]), 1)
    best = counts.argmax(axis=1).reshape(rows, cols)  # argmax takes lowest tie
    centers = lo + (best + 0.5) * width
    return np.where(degenerate, lo, centers)


def baseline_params(dataset: ParamDataset, task_id: str, kind: str) -> np.ndarray:
    stack = _task_params(dataset, task_id)
    if kind == "mean":
        return stack.mean(axis=0)
    if kind == "median":
        return np.median(stack, axis=0)
    if kind == "mode":
        return _binned_mode(stack)
    raise ContractError(f"unknown baseline kind {kind!r}")


def mos_act(policies: list[np.ndarray], obs: np.ndarray) -> int:
    """Plurality vote over per-policy greedy actions; ties -> lowest index."""
    if len(policies) == 0:
        raise ContractError("mos_act: empty policy list")
    votes = greedy_actions(np.stack(policies), obs)
    counts = np.bincount(votes, minlength=gridworld.N_ACTIONS)
    return int(np.argmax(counts))  # argmax takes the lowest tied action


def _random_action_fn(seed: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A2D]))
    return lambda obs: int(rng.integers(0, gridworld.N_ACTIONS))


def build_report(
    model: DiffusionModel | None,
    dataset: ParamDataset,
    tasks,
    config: EvalConfig,
    sample_fn=None,
) -> EvalReport:
    """Evaluate every condition on every task and aggregate across tasks.

    sample_fn(task, sample_index) -> PolicyParams overrides diffusion
    sampling (test injection hook); by default p_sample_loop(model, ...)."""
    if sample_fn is None:
        if model is None:
            raise ContractError("build_report needs a model or a sample_fn")

        def sample_fn(task, k):
            emb = _condition_for(dataset, task, model.cond_len)
            seed = SAMPLE_SEED_BASE + config.seed + 1000 * k + _stable_key(task)
            return p_sample_loop(model, emb, seed)

    report = EvalReport()
    report.metadata = {
        "runs_per_task": config.runs_per_task,
        "mode_bins": MODE_BINS,
        "n_tasks": len(tasks),
    }
    condition_rows: dict[str, list[float]] = {}

    def record(condition: str, task_id: str, mean: float, std: float):
        condition_rows.setdefault(condition, []).append(mean)
        report.per_task.append((condition, task_id, mean, std))

    for task in tasks:
        single = sample_fn(task, 0)
        mean, std = evaluate_policy(single, task, config)
        record("sample", task.task_id, mean, std)

        mean, std = evaluate_action_fn(
            _random_action_fn(config.seed + _stable_key(task)), task, config
        )
        record("random", task.task_id, mean, std)

        for kind in ("mean", "median", "mode"):
            params = baseline_params(dataset, task.task_id, kind)
            mean, std = evaluate_policy(params, task, config)
            record(kind, task.task_id, mean, std)

        for m in config.mos_sizes:
            policies = [sample_fn(task, k) for k in range(m)]
            mean, std = evaluate_action_fn(
                lambda obs: mos_act(policies, obs), task, config
            )
            record(f"mos_{m}", task.task_id, mean, std)

    for condition, means in condition_rows.items():
        arr = np.array(means)
        report.conditions[condition] = (float(arr.mean()), float(arr.std()))
    return report


def _stable_key(task) -> int:
    import zlib

    return zlib.crc32(task.task_id.encode()) % 100_000


def _condition_for(dataset: ParamDataset, task, cond_len: int) -> np.ndarray:
    for rec in dataset.records:
        if rec.task_id == task.task_id:
            return rec.embedding
    emb = embed_task(task)
    if emb.shape[0] != cond_len:
        raise ContractError(
            f"no stored embedding for {task.task_id} and structured length "
            f"{emb.shape[0]} != model condition length {cond_len}"
        )
    return emb


def export_report(report: EvalReport, summary_path, per_task_path) -> None:
    order = ["sample", "random", "mean", "median", "mode"]
    extras = sorted(
        (c for c in report.conditions if c.startswith("mos_")),
        key=lambda c: int(c.split("_")[1]),
    )
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "mean", "std"])
        for condition in order + extras:
            if condition in report.conditions:
                mean, std = report.conditions[condition]
                writer.writerow([condition, f"{mean:.6f}", f"{std:.6f}"])
    with open(per_task_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "task_id", "mean", "std"])
        for condition, task_id, mean, std in report.per_task:
            writer.writerow([condition, task_id, f"{mean:.6f}", f"{std:.6f}"])
