"""Shared test utilities: an exact shortest-path solver for the grid world.

The grid is static while the agent only turns and moves, so an episode can
be solved by breadth-first search over (position, direction) nodes, ending
with `pickup` (Fetch) or `done` (GoToDoor) once the target is faced;
GoToObject succeeds passively on the action that first faces the target.
The solver doubles as a scripted oracle expert for the behavior-cloning
tests: it is optimal by construction, no RL training required.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from policydiff import gridworld
from policydiff.gridworld import (
    ACTIONS,
    COLOR_ID,
    DIR_VEC,
    EMPTY,
    TYPE_ID,
    TaskSpec,
)

_TURN_LEFT = ACTIONS.index("turn_left")
_TURN_RIGHT = ACTIONS.index("turn_right")
_FORWARD = ACTIONS.index("forward")
_PICKUP = ACTIONS.index("pickup")
_TOGGLE = ACTIONS.index("toggle")
_DONE = ACTIONS.index("done")

_FINAL_ACTION = {"Fetch": _PICKUP, "GoToDoor": _DONE, "GoToObject": None}


def solve(task: TaskSpec, seed: int) -> list[int]:
    """Shortest action sequence reaching success from reset(task, seed)."""
    state, _ = gridworld.reset(task, seed)
    return solve_from(
        state, task.target_type, task.target_color, _FINAL_ACTION[task.family]
    )


def solve_from(
    state, target_type_name: str, target_color_name: str, final: int | None
) -> list[int]:
    """Shortest turn/forward sequence to face the given object, then `final`.

    With final=None (passive success) the sequence ends on the action that
    first faces the target; if the start already faces it, a single no-op
    `toggle` triggers the success check.
    """
    target_type = TYPE_ID[target_type_name]
    target_color = COLOR_ID[target_color_name]
    targets = {
        (x, y)
        for y in range(state.height)
        for x in range(state.width)
        if state.type_id[y, x] == target_type
        and state.color_id[y, x] == target_color
    }
    if not targets:
        raise AssertionError(
            f"no {target_color_name} {target_type_name} on the grid"
        )

    start = (state.agent_pos, state.agent_dir)
    parents: dict = {start: None}
    queue = deque([start])
    while queue:
        pos, direction = queue.popleft()
        dx, dy = DIR_VEC[direction]
        front = (pos[0] + dx, pos[1] + dy)
        if front in targets:
            actions = [] if final is None else [final]
            node = (pos, direction)
            while parents[node] is not None:
                node, action = parents[node]
                actions.append(action)
            if not actions:
                actions.append(_TOGGLE)
            return actions[::-1]
        for action in (_TURN_LEFT, _TURN_RIGHT, _FORWARD):
            if action == _FORWARD:
                fx, fy = front
                if not (0 <= fx < state.width and 0 <= fy < state.height):
                    continue
                if state.type_id[fy, fx] != EMPTY:
                    continue
                nxt = (front, direction)
            else:
                turn = -1 if action == _TURN_LEFT else 1
                nxt = (pos, (direction + turn) % 4)
            if nxt not in parents:
                parents[nxt] = ((pos, direction), action)
                queue.append(nxt)
    raise AssertionError("target unreachable")


class ScriptedExpert:
    """Oracle expert: a lookup from observation bytes to the optimal action.

    The environment is fully observed, so an observation determines the
    state and the table is consistent. Covers the episodes whose reset
    seeds were passed in; any other observation raises KeyError.
    """

    def __init__(self, task: TaskSpec, seeds):
        self.task = task
        self.converged = True
        self.table: dict[bytes, int] = {}
        for seed in seeds:
            state, obs = gridworld.reset(task, seed)
            actions = solve(task, seed)
            for i, action in enumerate(actions):
                self.table[obs.tobytes()] = action
                outcome = gridworld.step(state, action)
                assert outcome.done == (i == len(actions) - 1)
                obs = outcome.observation
            assert state.success, f"solver failed on {task.task_id} seed {seed}"

    def greedy_action(self, obs: np.ndarray) -> int:
        return self.table[np.asarray(obs).tobytes()]
