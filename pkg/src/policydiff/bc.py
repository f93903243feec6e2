"""Behavior-cloning farm: distill experts into many 32x82 policies.

Each converged expert produces greedy demonstration episodes; many small
no-bias tanh policies are then fit to (observation, action) pairs from
different random initializations and demo subsamples. A task is kept only
when enough of its clones clear the return threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gridworld
from .autodiff import Tensor
from .errors import ContractError
from .nn import AdamState, adam_step
from .policy import OBS_DIM, PARAM_SHAPE, act
from .ppo import FRESH_EVAL_SEED_BASE, ExpertAgent
from .rollout import run_episode
from .store import ParamDataset, Record, embed_task

BC_THRESHOLD = 0.85
DEFAULT_DEMO_EPISODES = 300
DEFAULT_EPOCHS = 200
DEFAULT_LR = 1e-3
DEFAULT_BATCH = 64
EVAL_SEEDS = 20
SUBSAMPLE_FRACTION = 0.8
KEEP_PASS_RATE = 0.5


@dataclass
class DemoDataset:
    observations: np.ndarray  # (N, 75)
    actions: np.ndarray  # (N,) int
    task: gridworld.TaskSpec
    episode_count: int

    def __post_init__(self):
        if self.observations.ndim != 2 or self.observations.shape[1] != OBS_DIM:
            raise ContractError(f"demo observations shape {self.observations.shape}")
        if np.any(self.actions < 0) or np.any(self.actions >= gridworld.N_ACTIONS):
            raise ContractError("demo action index out of range")


@dataclass
class TaskFarmResult:
    task_id: str
    kept: bool
    n_policies: int
    mean_return: float
    std_return: float
    seeds: list = field(default_factory=list)


@dataclass
class FarmManifest:
    per_task: list[TaskFarmResult] = field(default_factory=list)


def collect_demos(
    expert: ExpertAgent,
    task: gridworld.TaskSpec,
    episodes: int = DEFAULT_DEMO_EPISODES,
    seed: int = 0,
) -> DemoDataset:
    """Greedy expert rollouts on seeded resets; only successful episodes kept."""
    if not expert.converged:
        raise ContractError(f"collect_demos: expert for {task.task_id} not converged")
    obs_rows: list[np.ndarray] = []
    act_rows: list[int] = []
    kept_episodes = 0
    for ep in range(episodes):
        state, obs = gridworld.reset(task, seed + ep)
        ep_obs: list[np.ndarray] = []
        ep_act: list[int] = []
        while True:
            action = expert.greedy_action(obs)
            ep_obs.append(obs)
            ep_act.append(action)
            outcome = gridworld.step(state, action)
            if outcome.done:
                if outcome.success:
                    obs_rows.extend(ep_obs)
                    act_rows.extend(ep_act)
                    kept_episodes += 1
                break
            obs = outcome.observation
    observations = (
        np.array(obs_rows) if obs_rows else np.zeros((0, OBS_DIM))
    )
    return DemoDataset(
        observations=observations,
        actions=np.array(act_rows, dtype=np.int64),
        task=task,
        episode_count=kept_episodes,
    )


def train_bc(
    demos: DemoDataset,
    init_seed: int,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LR,
    batch_size: int = DEFAULT_BATCH,
    subsample: float = 1.0,
) -> tuple[np.ndarray, float]:
    """Fit a 32x82 policy to the demos by cross-entropy from a seeded random
    init (normal, scale 0.1); returns (params, greedy mean return over
    EVAL_SEEDS fresh seeds)."""
    if demos.observations.shape[0] == 0:
        raise ContractError("train_bc: empty demo dataset")
    rng = np.random.default_rng(np.random.SeedSequence([init_seed, 0xBC]))
    n = demos.observations.shape[0]
    if subsample < 1.0:
        keep = rng.random(n) < subsample
        if not np.any(keep):
            keep[rng.integers(0, n)] = True
        obs, acts = demos.observations[keep], demos.actions[keep]
    else:
        obs, acts = demos.observations, demos.actions
    mat = Tensor(rng.normal(0.0, 0.1, PARAM_SHAPE))
    opt_state = AdamState.for_params(mat.value, learning_rate=lr)
    m = obs.shape[0]
    for _ in range(epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            idx = order[start : start + batch_size]
            w1 = ad.slice_last(mat, 0, OBS_DIM)
            w2 = ad.slice_last(mat, OBS_DIM, PARAM_SHAPE[1])
            hidden = ad.tanh(ad.matmul(Tensor(obs[idx]), ad.transpose(w1)))
            logits = ad.matmul(hidden, w2)
            loss = ad.cross_entropy(logits, acts[idx])
            ad.backward(loss)
            mat.value, _ = adam_step(mat.value, mat.grad, opt_state)
    params = mat.value.copy()

    def action_fn(o: np.ndarray) -> int:
        return act(params, o, mode="greedy")

    returns = [
        run_episode(demos.task, FRESH_EVAL_SEED_BASE + i, action_fn)
        for i in range(EVAL_SEEDS)
    ]
    return params, float(np.mean(returns))


def build_policy_farm(
    tasks,
    experts: dict[str, ExpertAgent],
    per_task: int = 50,
    threshold: float = BC_THRESHOLD,
    demo_episodes: int = DEFAULT_DEMO_EPISODES,
    epochs: int = DEFAULT_EPOCHS,
    seed: int = 0,
    workers: int = 1,
) -> tuple[ParamDataset, FarmManifest]:
    """Train per_task clones per task; store those above threshold; keep the
    task when at least KEEP_PASS_RATE of its attempts pass."""
    jobs = []
    for task in tasks:
        expert = experts.get(task.task_id)
        if expert is None or not expert.converged:
            continue
        for k in range(per_task):
            jobs.append((task, expert, seed + 7919 * k))
    results = _run_bc_jobs(jobs, demo_episodes, epochs, seed, workers)

    dataset = ParamDataset()
    manifest = FarmManifest()
    for task in tasks:
        expert = experts.get(task.task_id)
        if expert is None or not expert.converged:
            manifest.per_task.append(
                TaskFarmResult(task.task_id, False, 0, 0.0, 0.0)
            )
            continue
        rows = results[task.task_id]
        passed = [(p, r, s) for p, r, s in rows if r > threshold]
        kept = len(passed) >= KEEP_PASS_RATE * len(rows)
        rets = [r for _, r, _ in passed]
        manifest.per_task.append(
            TaskFarmResult(
                task_id=task.task_id,
                kept=kept,
                n_policies=len(passed) if kept else 0,
                mean_return=float(np.mean(rets)) if passed else 0.0,
                std_return=float(np.std(rets)) if passed else 0.0,
                seeds=[s for _, _, s in passed] if kept else [],
            )
        )
        if kept:
            emb = embed_task(task)
            for params, ret, _ in passed:
                dataset.records.append(
                    Record(
                        task_id=task.task_id,
                        embedding=emb.copy(),
                        params=params,
                        eval_return=ret,
                    )
                )
    return dataset, manifest


def _bc_job(args):
    task, demos, init_seed, epochs = args
    params, ret = train_bc(
        demos, init_seed, epochs=epochs, subsample=SUBSAMPLE_FRACTION
    )
    return task.task_id, params, ret, init_seed


def _run_bc_jobs(jobs, demo_episodes, epochs, seed, workers):
    demo_cache: dict[str, DemoDataset] = {}
    work = []
    for task, expert, init_seed in jobs:
        if task.task_id not in demo_cache:
            demo_cache[task.task_id] = collect_demos(
                expert, task, episodes=demo_episodes, seed=seed
            )
        work.append((task, demo_cache[task.task_id], init_seed, epochs))
    results: dict[str, list] = {t.task_id: [] for t, _, _ in jobs}
    if workers > 1:
        import multiprocessing as mp

        with mp.Pool(workers) as pool:
            for task_id, params, ret, init_seed in pool.map(_bc_job, work):
                results[task_id].append((params, ret, init_seed))
    else:
        for item in work:
            task_id, params, ret, init_seed = _bc_job(item)
            results[task_id].append((params, ret, init_seed))
    for rows in results.values():
        rows.sort(key=lambda row: row[2])
    return results


def export_manifest(manifest: FarmManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "kept", "n_policies", "mean_return", "std_return"])
        for row in manifest.per_task:
            writer.writerow(
                [
                    row.task_id,
                    str(row.kept).lower(),
                    row.n_policies,
                    f"{row.mean_return:.6f}",
                    f"{row.std_return:.6f}",
                ]
            )
