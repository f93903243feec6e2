"""PPO training of per-task expert agents.

The expert actor is a tanh MLP with biases plus a separate value net; only
behavior cloning later has to respect the 32x82 policy shape, so the expert
is free to consume a richer input. Each expert sees the 75 raw observation
values plus a task-aware feature expansion decoded from them (direction
one-hot, offset to the target, facing/adjacent flags). Training uses sampled
actions; convergence is judged by periodic greedy evaluation over 100 seeded
episodes against the > 0.98 mean reward bar.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gridworld
from .autodiff import Tensor
from .errors import DimensionError, NumericError
from .nn import MLP, Adam
from .rollout import run_episode

OBS_DIM = gridworld.OBS_SIZE
N_ACTIONS = gridworld.N_ACTIONS
N_EXTRA_FEATURES = 12
FEATURE_DIM = OBS_DIM + N_EXTRA_FEATURES

# seed-stream offsets so training, convergence-check and fresh-eval episodes
# never share grid layouts
TRAIN_SEED_BASE = 0
EVAL_SEED_BASE = 1_000_000
FRESH_EVAL_SEED_BASE = 2_000_000


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    epochs_per_update: int = 4
    minibatch_size: int = 64
    rollout_length: int = 128
    parallel_envs: int = 8
    entropy_coef: float = 0.01
    entropy_coef_final: float = 0.0001
    entropy_anneal_steps: int = 300_000
    train_max_steps: int = 100
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    total_step_budget: int = 1_000_000
    target_mean_reward: float = 0.98
    eval_episodes: int = 100
    eval_every_updates: int = 20
    normalize_advantages: bool = True
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must be in (0, 1]")
        if self.clip_ratio <= 0:
            raise ValueError("clip_ratio must be positive")
        if self.total_step_budget < 0:
            raise ValueError("step budget must be non-negative")


def expand_features(obs: np.ndarray, task) -> np.ndarray:
    """Append task-aware features decoded from a batch of observations.

    The observation is fully observed, so this is a pure function of it:
    direction one-hot (4), signed offset to the nearest target cell (2),
    normalized Manhattan distance (1), facing-target flag (1),
    adjacent-to-target flag (1), blocked flags for the cells ahead, to the
    left and to the right (3).
    """
    obs = np.atleast_2d(obs)
    n = obs.shape[0]
    if obs.shape[1] != OBS_DIM:
        raise DimensionError(f"expand_features: obs shape {obs.shape}")
    tt = gridworld.TYPE_ID[task.target_type]
    tc = gridworld.COLOR_ID[task.target_color]
    out = np.zeros((n, FEATURE_DIM))
    out[:, :OBS_DIM] = obs
    grids = obs.reshape(n, gridworld.DEFAULT_SIZE, gridworld.DEFAULT_SIZE, 3)
    type_id = np.rint(grids[..., 0] * gridworld.MAX_TYPE_ID).astype(np.int64)
    color_id = np.rint(grids[..., 1] * gridworld.MAX_COLOR_ID).astype(np.int64)
    dir_codes = np.asarray(gridworld.DIR_CODE)
    for i in range(n):
        ays, axs = np.nonzero(type_id[i] == gridworld.AGENT)
        if len(axs) != 1:
            continue  # malformed observation: leave extras at zero
        ax, ay = int(axs[0]), int(ays[0])
        direction = int(np.argmin(np.abs(dir_codes - grids[i, ay, ax, 2])))
        out[i, OBS_DIM + direction] = 1.0
        size = gridworld.DEFAULT_SIZE
        for slot, turn in ((9, 0), (10, -1), (11, 1)):
            dx, dy = gridworld.DIR_VEC[(direction + turn) % 4]
            cx, cy = ax + dx, ay + dy
            blocked = (
                not (0 <= cx < size and 0 <= cy < size)
                or type_id[i, cy, cx] != gridworld.EMPTY
            )
            out[i, OBS_DIM + slot] = float(blocked)
        tys, txs = np.nonzero((type_id[i] == tt) & (color_id[i] == tc))
        if len(txs) == 0:
            continue
        dists = np.abs(txs - ax) + np.abs(tys - ay)
        j = int(np.argmin(dists))
        tx, ty = int(txs[j]), int(tys[j])
        span = gridworld.DEFAULT_SIZE - 1
        out[i, OBS_DIM + 4] = (tx - ax) / span
        out[i, OBS_DIM + 5] = (ty - ay) / span
        out[i, OBS_DIM + 6] = dists[j] / (2 * span)
        dx, dy = gridworld.DIR_VEC[direction]
        out[i, OBS_DIM + 7] = float((ax + dx, ay + dy) == (tx, ty))
        out[i, OBS_DIM + 8] = float(dists[j] == 1)
    return out


@dataclass
class ExpertAgent:
    actor: MLP
    critic: MLP
    task: gridworld.TaskSpec
    training_curve: list = field(default_factory=list)  # (env_steps, greedy mean)
    converged: bool = False

    def greedy_action(self, obs: np.ndarray) -> int:
        feats = expand_features(obs[None, :], self.task)
        return int(np.argmax(_forward_np(self.actor, feats)[0]))

    def weight_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for net_name, net in (("actor", self.actor), ("critic", self.critic)):
            for i, layer in enumerate(net.layers):
                out[f"{net_name}.{i}.w"] = layer.weight.value
                out[f"{net_name}.{i}.b"] = layer.bias.value
        return out

    def load_weight_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for net_name, net in (("actor", self.actor), ("critic", self.critic)):
            for i, layer in enumerate(net.layers):
                layer.weight.value = arrays[f"{net_name}.{i}.w"].copy()
                layer.bias.value = arrays[f"{net_name}.{i}.b"].copy()


def _forward_np(net: MLP, x: np.ndarray) -> np.ndarray:
    """Tape-free forward for action selection during rollouts."""
    for i, layer in enumerate(net.layers):
        x = x @ layer.weight.value.T + layer.bias.value
        if i < len(net.layers) - 1:
            x = np.tanh(x)
    return x


def compute_gae(rewards, values, dones, gamma: float, lam: float) -> np.ndarray:
    """GAE: A_t = d_t + gamma*lam*(1-done_t)*A_{t+1},
    d_t = r_t + gamma*(1-done_t)*V_{t+1} - V_t."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = rewards.shape[0]
    if values.shape[0] != n + 1 or dones.shape[0] != n:
        raise DimensionError(
            f"compute_gae: rewards {rewards.shape}, values {values.shape}, "
            f"dones {dones.shape}"
        )
    advantages = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * not_done * values[t + 1] - values[t]
        running = delta + gamma * lam * not_done * running
        advantages[t] = running
    return advantages


@dataclass
class Rollout:
    obs: np.ndarray  # (N, 75)
    actions: np.ndarray  # (N,) int
    logp_old: np.ndarray  # (N,)
    advantages: np.ndarray  # (N,)
    returns: np.ndarray  # (N,) value targets
    episode_returns: list = field(default_factory=list)  # finished this rollout


class _EnvPool:
    """Fixed-size pool of episodes with a deterministic reset-seed counter.

    `max_steps` optionally truncates training episodes well below the
    environment default: optimal solutions take only a handful of steps, so
    a tight training horizon just recycles stuck episodes faster."""

    def __init__(self, task, n_envs: int, seed_base: int, max_steps: int | None = None):
        self.task = task
        self.seed_base = seed_base
        self.max_steps = max_steps
        self.episode_counter = 0
        self.states = []
        self.obs = np.zeros((n_envs, OBS_DIM))
        for i in range(n_envs):
            self._reset_env(i)

    def _reset_env(self, i: int):
        seed = self.seed_base + self.episode_counter
        self.episode_counter += 1
        if len(self.states) <= i:
            self.states.append(None)
        self.states[i], obs = gridworld.reset(self.task, seed)
        if self.max_steps is not None:
            self.states[i].max_steps = self.max_steps
        self.obs[i] = obs

    def step(self, actions: np.ndarray):
        """Step every env; auto-reset finished ones. Returns (rewards, dones)."""
        n = len(self.states)
        rewards = np.zeros(n)
        dones = np.zeros(n, dtype=bool)
        for i in range(n):
            outcome = gridworld.step(self.states[i], int(actions[i]))
            rewards[i] = outcome.reward
            dones[i] = outcome.done
            if outcome.done:
                self._reset_env(i)
            else:
                self.obs[i] = outcome.observation
        return rewards, dones


def collect_rollout(agent: ExpertAgent, pool: _EnvPool, config: PpoConfig, rng) -> Rollout:
    T, E = config.rollout_length, len(pool.states)
    obs_buf = np.zeros((T, E, FEATURE_DIM))
    act_buf = np.zeros((T, E), dtype=np.int64)
    logp_buf = np.zeros((T, E))
    rew_buf = np.zeros((T, E))
    done_buf = np.zeros((T, E))
    val_buf = np.zeros((T + 1, E))
    episode_returns = []

    for t in range(T):
        obs_buf[t] = expand_features(pool.obs, pool.task)
        logits = _forward_np(agent.actor, obs_buf[t])
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        gumbel = -np.log(-np.log(rng.random((E, N_ACTIONS))))
        actions = np.argmax(logp + gumbel, axis=1)
        act_buf[t] = actions
        logp_buf[t] = logp[np.arange(E), actions]
        val_buf[t] = _forward_np(agent.critic, obs_buf[t])[:, 0]
        rewards, dones = pool.step(actions)
        rew_buf[t] = rewards
        done_buf[t] = dones
        episode_returns.extend(rewards[dones])
    val_buf[T] = _forward_np(agent.critic, expand_features(pool.obs, pool.task))[:, 0]

    adv = np.zeros((T, E))
    for e in range(E):
        adv[:, e] = compute_gae(
            rew_buf[:, e], val_buf[:, e], done_buf[:, e],
            config.gamma, config.gae_lambda,
        )
    returns = adv + val_buf[:T]
    return Rollout(
        obs=obs_buf.reshape(T * E, FEATURE_DIM),
        actions=act_buf.reshape(-1),
        logp_old=logp_buf.reshape(-1),
        advantages=adv.reshape(-1),
        returns=returns.reshape(-1),
        episode_returns=episode_returns,
    )


def ppo_update(
    agent: ExpertAgent,
    rollout: Rollout,
    config: PpoConfig,
    rng,
    actor_opt: Adam,
    critic_opt: Adam,
    entropy_coef: float | None = None,
) -> dict:
    """Clipped-surrogate actor update + value MSE critic update."""
    if entropy_coef is None:
        entropy_coef = config.entropy_coef
    adv = rollout.advantages
    if config.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = rollout.obs.shape[0]
    diagnostics = {"actor_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "kl": 0.0}
    batches = 0
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            logits = agent.actor(Tensor(rollout.obs[idx]))
            logp_all = ad.log_softmax(logits)
            logp = ad.take_per_row(logp_all, rollout.actions[idx])
            ratio = ad.exp(ad.sub(logp, rollout.logp_old[idx]))
            adv_mb = adv[idx]
            surrogate = ad.minimum(
                ad.mul(ratio, adv_mb),
                ad.mul(
                    ad.clip(ratio, 1 - config.clip_ratio, 1 + config.clip_ratio),
                    adv_mb,
                ),
            )
            entropy = -ad.tmean(ad.tsum(ad.mul(ad.exp(logp_all), logp_all), axis=1))
            actor_loss = ad.sub(
                -ad.tmean(surrogate), ad.mul(entropy, entropy_coef)
            )
            if not np.isfinite(actor_loss.value):
                raise NumericError("non-finite PPO actor loss")
            ad.backward(actor_loss)
            actor_opt.step()

            v = agent.critic(Tensor(rollout.obs[idx]))
            value_loss = ad.mul(
                ad.tmean(ad.square(ad.sub(ad.reshape(v, (-1,)), rollout.returns[idx]))),
                config.value_coef,
            )
            if not np.isfinite(value_loss.value):
                raise NumericError("non-finite PPO value loss")
            ad.backward(value_loss)
            critic_opt.step()

            diagnostics["actor_loss"] += float(actor_loss.value)
            diagnostics["value_loss"] += float(value_loss.value)
            diagnostics["entropy"] += float(entropy.value)
            diagnostics["kl"] += float(np.mean(rollout.logp_old[idx] - logp.value))
            batches += 1
    for k in diagnostics:
        diagnostics[k] /= max(batches, 1)
    return diagnostics


def greedy_eval(agent: ExpertAgent, task, n_episodes: int, seed_base: int) -> float:
    returns = [
        run_episode(task, seed_base + i, agent.greedy_action)
        for i in range(n_episodes)
    ]
    return float(np.mean(returns))


def make_agent(config: PpoConfig, seed: int, task=None) -> ExpertAgent:
    sizes = [FEATURE_DIM, *config.hidden]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAC]))
    actor = MLP(sizes + [N_ACTIONS], rng=rng)
    critic = MLP(sizes + [1], rng=rng)
    return ExpertAgent(actor=actor, critic=critic, task=task)


def train_task(task, config: PpoConfig, seed: int) -> ExpertAgent:
    """Rollout/update loop until the greedy bar is met or the budget runs out."""
    task_key = zlib.crc32(task.task_id.encode())
    agent = make_agent(config, seed=task_key ^ (seed * 2654435761 % 2**32), task=task)
    actor_opt = Adam(agent.actor.parameters(), lr=config.learning_rate)
    critic_opt = Adam(agent.critic.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([task_key, seed, 1]))
    pool = _EnvPool(
        task, config.parallel_envs, TRAIN_SEED_BASE, max_steps=config.train_max_steps
    )

    env_steps = 0
    updates = 0
    recent: list[float] = []
    while env_steps < config.total_step_budget:
        rollout = collect_rollout(agent, pool, config, rng)
        env_steps += config.rollout_length * config.parallel_envs
        recent.extend(rollout.episode_returns)
        recent = recent[-100:]
        # anneal the entropy bonus so the greedy policy catches up with the
        # stochastic one once exploration has paid off
        frac = min(1.0, env_steps / max(config.entropy_anneal_steps, 1))
        coef = config.entropy_coef + frac * (
            config.entropy_coef_final - config.entropy_coef
        )
        ppo_update(agent, rollout, config, rng, actor_opt, critic_opt, coef)
        updates += 1

        gate = len(recent) >= 20 and np.mean(recent) > 0.9 * config.target_mean_reward
        if (gate and updates % 5 == 0) or updates % config.eval_every_updates == 0:
            # cheap 20-episode screen first; the full greedy evaluation only
            # runs when the screen already clears the bar
            screen = greedy_eval(agent, task, 20, EVAL_SEED_BASE)
            score = screen
            if screen > config.target_mean_reward:
                score = greedy_eval(agent, task, config.eval_episodes, EVAL_SEED_BASE)
            agent.training_curve.append((env_steps, score))
            if score > config.target_mean_reward:
                agent.converged = True
                break
    return agent


def export_curve(agent: ExpertAgent, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("steps,mean_reward\n")
        for steps, score in agent.training_curve:
            fh.write(f"{steps},{score:.6f}\n")
