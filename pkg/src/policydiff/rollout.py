"""Episode rollout helpers shared by training and evaluation."""

from __future__ import annotations

import numpy as np

from . import gridworld


def run_episode(task, seed: int, action_fn) -> float:
    """Play one episode; action_fn maps a 75-float observation to an action.

    Returns the episode return (the single success reward, or 0).
    """
    state, obs = gridworld.reset(task, seed)
    while True:
        outcome = gridworld.step(state, action_fn(obs))
        if outcome.done:
            return outcome.reward
        obs = outcome.observation


def mean_return(task, seeds, action_fn) -> tuple[float, float]:
    """Mean and std of episode returns over a list of seeds."""
    returns = np.array([run_episode(task, s, action_fn) for s in seeds])
    return float(returns.mean()), float(returns.std())
