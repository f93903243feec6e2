"""Deterministic seedable grid world with three language-conditioned task families.

A single 5x5 grid of cells, fully observed as a 75-float vector (25 cells x
3 channels). Seven discrete actions. Sparse reward with a time-step penalty:
1 - 0.9 * s / max_steps on the success step, 0 otherwise, so cumulative
episode reward is always in [0, 1].

Families:
  Fetch      - pick up the target object (key or ball of a given color)
  GoToDoor   - execute `done` while facing the target door (doors sit on
               boundary cells and block movement)
  GoToObject - face an adjacent cell containing the target object
               (key/ball/box); success fires after any action that leaves
               the agent facing the target
"""

from __future__ import annotations

import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

FAMILIES = ("Fetch", "GoToDoor", "GoToObject")
OBJECT_TYPES = ("key", "ball", "box", "door")
COLORS = ("red", "green", "blue", "purple", "yellow", "grey")
ACTIONS = ("turn_left", "turn_right", "forward", "pickup", "drop", "toggle", "done")
N_ACTIONS = len(ACTIONS)

FETCH_TYPES = ("key", "ball")
GOTO_OBJECT_TYPES = ("key", "ball", "box")

# cell type ids (channel 0)
EMPTY, KEY, BALL, BOX, DOOR, AGENT = 0, 1, 2, 3, 4, 5
MAX_TYPE_ID = 5
TYPE_ID = {"key": KEY, "ball": BALL, "box": BOX, "door": DOOR}

# color ids (channel 1); 0 = uncolored
COLOR_ID = {c: i + 1 for i, c in enumerate(COLORS)}
MAX_COLOR_ID = 6

# internal door state ids (kept in GridState.state_id); doors: 1 closed / 2 open
DOOR_CLOSED, DOOR_OPEN = 1, 2

# observation state channel (channel 2): a fixed 24-slot approach table.
# Slot j = TYPE_RANK[type] * 6 + (color_id - 1) holds a signed code for the
# first shortest-path action that brings the agent face-to-face with the
# unique object of that (type, color) combination:
#   facing now -0.45 | turn_left -1.0 | turn_right +1.0 | forward +0.45
# The slot at the agent's own cell index instead carries a small signed
# direction code, so the agent's position and direction stay decodable from
# the state channel of its own cell.
TYPE_RANK = {"key": 0, "ball": 1, "box": 2, "door": 3}
HINT_FACING, HINT_LEFT, HINT_RIGHT, HINT_FORWARD = -0.45, -1.0, 1.0, 0.45
_HINT_CODE = (HINT_FACING, HINT_LEFT, HINT_RIGHT, HINT_FORWARD)
_TYPE_RANK_BY_ID = {TYPE_ID[name]: rank for name, rank in TYPE_RANK.items()}
DIR_CODE = (0.15, 0.3, -0.15, -0.3)
N_SLOTS = 24

# directions: 0 north (-y), 1 east (+x), 2 south (+y), 3 west (-x)
DIR_VEC = ((0, -1), (1, 0), (0, 1), (-1, 0))

OBS_SIZE = 75
DEFAULT_SIZE = 5
# max_steps = 64 * width * height: long enough that a competent policy keeps
# mean reward above 0.98, short enough that episodes stay cheap
MAX_STEPS_FACTOR = 64


@dataclass(frozen=True)
class TaskSpec:
    """A language-conditioned task: family + target object type and color."""

    family: str
    target_type: str
    target_color: str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family: {self.family}")
        if self.target_color not in COLORS:
            raise ValueError(f"unknown color: {self.target_color}")
        allowed = {
            "Fetch": FETCH_TYPES,
            "GoToDoor": ("door",),
            "GoToObject": GOTO_OBJECT_TYPES,
        }[self.family]
        if self.target_type not in allowed:
            raise ValueError(
                f"{self.family} target type must be one of {allowed}, "
                f"got {self.target_type}"
            )

    @property
    def mission(self) -> str:
        if self.family == "Fetch":
            return f"pick up the {self.target_color} {self.target_type}"
        return f"go to the {self.target_color} {self.target_type}"

    @property
    def task_id(self) -> str:
        return f"{self.family.lower()}-{self.target_color}-{self.target_type}"


def task_from_id(task_id: str) -> TaskSpec:
    family_slug, color, target_type = task_id.split("-")
    family = {f.lower(): f for f in FAMILIES}[family_slug]
    return TaskSpec(family, target_type, color)


def enumerate_tasks(families=None, types=None, colors=None) -> list[TaskSpec]:
    """All tasks for the given filters, sorted (family, type, color)."""
    families = tuple(families) if families is not None else FAMILIES
    types = tuple(types) if types is not None else OBJECT_TYPES
    colors = tuple(colors) if colors is not None else COLORS
    if not families or not types or not colors:
        raise ValueError("families, types and colors must be non-empty")
    for f in families:
        if f not in FAMILIES:
            raise ValueError(f"unknown family: {f}")
    for t in types:
        if t not in OBJECT_TYPES:
            raise ValueError(f"unknown object type: {t}")
    for c in colors:
        if c not in COLORS:
            raise ValueError(f"unknown color: {c}")
    family_types = {
        "Fetch": [t for t in FETCH_TYPES if t in types],
        "GoToDoor": ["door"] if "door" in types else [],
        "GoToObject": [t for t in GOTO_OBJECT_TYPES if t in types],
    }
    tasks = [
        TaskSpec(f, t, c)
        for f in families
        for t in family_types[f]
        for c in colors
    ]
    tasks.sort(key=lambda s: (s.family, s.target_type, s.target_color))
    return tasks


def export_tasks(tasks: list[TaskSpec], path) -> None:
    """One task per line: family,type,color,mission."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(f"{t.family},{t.target_type},{t.target_color},{t.mission}\n")


@dataclass
class GridState:
    task: TaskSpec
    width: int
    height: int
    agent_pos: tuple[int, int]
    agent_dir: int
    type_id: np.ndarray  # (height, width) int
    color_id: np.ndarray
    state_id: np.ndarray
    carried: tuple[int, int] | None = None  # (type_id, color_id)
    step_count: int = 0
    max_steps: int = MAX_STEPS_FACTOR * DEFAULT_SIZE * DEFAULT_SIZE
    done: bool = False
    success: bool = False


@dataclass(frozen=True)
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    success: bool


def _task_rng(task: TaskSpec, seed: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([zlib.crc32(task.task_id.encode()), int(seed)])
    )


def reset(task: TaskSpec, seed: int, width: int = DEFAULT_SIZE, height: int = DEFAULT_SIZE):
    """Seeded episode start; identical (task, seed) gives identical state."""
    rng = _task_rng(task, seed)
    type_id = np.zeros((height, width), dtype=np.int64)
    color_id = np.zeros((height, width), dtype=np.int64)
    state_id = np.zeros((height, width), dtype=np.int64)

    def place(cell, obj_type, obj_color, obj_state=0):
        x, y = cell
        type_id[y, x] = obj_type
        color_id[y, x] = obj_color
        state_id[y, x] = obj_state

    n_distractors = int(rng.integers(1, 3))
    if task.family == "GoToDoor":
        edge = [
            (x, y)
            for y in range(height)
            for x in range(width)
            if x in (0, width - 1) or y in (0, height - 1)
        ]
        cells = [edge[i] for i in rng.choice(len(edge), 1 + n_distractors, replace=False)]
        place(cells[0], DOOR, COLOR_ID[task.target_color], DOOR_CLOSED)
        other_colors = [c for c in COLORS if c != task.target_color]
        picked = rng.choice(len(other_colors), n_distractors, replace=False)
        for cell, ci in zip(cells[1:], picked):
            place(cell, DOOR, COLOR_ID[other_colors[ci]], DOOR_CLOSED)
    else:
        all_cells = [(x, y) for y in range(height) for x in range(width)]
        cells = [
            all_cells[i]
            for i in rng.choice(len(all_cells), 1 + n_distractors, replace=False)
        ]
        place(cells[0], TYPE_ID[task.target_type], COLOR_ID[task.target_color])
        # each (type, color) combination appears at most once per grid so
        # that every object owns its slot in the observation approach table
        used = {(task.target_type, task.target_color)}
        for cell in cells[1:]:
            while True:
                t = GOTO_OBJECT_TYPES[rng.integers(0, len(GOTO_OBJECT_TYPES))]
                c = COLORS[rng.integers(0, len(COLORS))]
                if (t, c) not in used:
                    break
            used.add((t, c))
            place(cell, TYPE_ID[t], COLOR_ID[c])

    free = [
        (x, y)
        for y in range(height)
        for x in range(width)
        if type_id[y, x] == EMPTY
    ]
    agent_pos = free[int(rng.integers(0, len(free)))]
    agent_dir = int(rng.integers(0, 4))

    state = GridState(
        task=task,
        width=width,
        height=height,
        agent_pos=agent_pos,
        agent_dir=agent_dir,
        type_id=type_id,
        color_id=color_id,
        state_id=state_id,
        max_steps=MAX_STEPS_FACTOR * width * height,
    )
    return state, encode_observation(state)


def _front_cell(state: GridState) -> tuple[int, int]:
    dx, dy = DIR_VEC[state.agent_dir]
    return state.agent_pos[0] + dx, state.agent_pos[1] + dy


def _in_grid(state: GridState, x: int, y: int) -> bool:
    return 0 <= x < state.width and 0 <= y < state.height


def step(state: GridState, action: int) -> StepOutcome:
    """Advance one step in place; see module docstring for success rules."""
    if state.done:
        raise ContractError("step called on a terminal state")
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action index out of range: {action}")

    task = state.task
    target_type = TYPE_ID[task.target_type]
    target_color = COLOR_ID[task.target_color]
    name = ACTIONS[action]
    success = False
    declared_done = False

    fx, fy = _front_cell(state)
    front_in = _in_grid(state, fx, fy)
    if name == "turn_left":
        state.agent_dir = (state.agent_dir - 1) % 4
    elif name == "turn_right":
        state.agent_dir = (state.agent_dir + 1) % 4
    elif name == "forward":
        if front_in and state.type_id[fy, fx] == EMPTY:
            state.agent_pos = (fx, fy)
    elif name == "pickup":
        if (
            front_in
            and state.type_id[fy, fx] in (KEY, BALL, BOX)
            and state.carried is None
        ):
            picked = (int(state.type_id[fy, fx]), int(state.color_id[fy, fx]))
            state.carried = picked
            state.type_id[fy, fx] = EMPTY
            state.color_id[fy, fx] = 0
            state.state_id[fy, fx] = 0
            if task.family == "Fetch":
                # any pickup ends a Fetch episode; reward only for the target
                declared_done = True
                if picked == (target_type, target_color):
                    success = True
    elif name == "drop":
        if state.carried is not None and front_in and state.type_id[fy, fx] == EMPTY:
            state.type_id[fy, fx], state.color_id[fy, fx] = state.carried
            state.carried = None
    elif name == "toggle":
        if front_in and state.type_id[fy, fx] == DOOR:
            state.state_id[fy, fx] = (
                DOOR_OPEN if state.state_id[fy, fx] == DOOR_CLOSED else DOOR_CLOSED
            )
    if name == "done":
        # `done` always ends the episode: GoToDoor succeeds only via an
        # explicit `done` while facing the target door; otherwise it is a
        # zero-reward stop
        declared_done = True
        if (
            task.family == "GoToDoor"
            and front_in
            and state.type_id[fy, fx] == target_type
            and state.color_id[fy, fx] == target_color
        ):
            success = True
    if task.family == "GoToObject":
        # passive success: any action that leaves the agent facing the
        # target ends the episode with reward
        gx, gy = _front_cell(state)
        if (
            _in_grid(state, gx, gy)
            and state.type_id[gy, gx] == target_type
            and state.color_id[gy, gx] == target_color
        ):
            success = True

    state.step_count += 1

    reward = 1.0 - 0.9 * state.step_count / state.max_steps if success else 0.0
    state.success = success
    state.done = success or declared_done or state.step_count >= state.max_steps
    return StepOutcome(encode_observation(state), reward, state.done, success)


def _approach_hints(state: GridState) -> dict[tuple[int, int], int]:
    """First shortest-path action toward facing each cell, as hint index.

    Breadth-first search over (position, direction) poses using only turns
    and forward moves; the grid is static under those actions. Returns a
    mapping cell -> index into _HINT_CODE (0 facing now, 1 turn_left,
    2 turn_right, 3 forward) for every reachable-to-face cell.
    """
    start = (state.agent_pos, state.agent_dir)
    hints: dict[tuple[int, int], int] = {}
    first: dict = {start: None}
    queue = deque([start])
    while queue:
        pos, direction = queue.popleft()
        dx, dy = DIR_VEC[direction]
        front = (pos[0] + dx, pos[1] + dy)
        if _in_grid(state, *front) and front not in hints:
            root = first[(pos, direction)]
            hints[front] = 0 if root is None else root
        for hint, action in ((1, "turn_left"), (2, "turn_right"), (3, "forward")):
            if action == "forward":
                fx, fy = front
                if not _in_grid(state, fx, fy) or state.type_id[fy, fx] != EMPTY:
                    continue
                nxt = (front, direction)
            else:
                turn = -1 if action == "turn_left" else 1
                nxt = (pos, (direction + turn) % 4)
            if nxt not in first:
                root = first[(pos, direction)]
                first[nxt] = hint if root is None else root
                queue.append(nxt)
    return hints


def encode_observation(state: GridState) -> np.ndarray:
    """75 floats: per cell (type, color, state-channel approach table).

    Channels 0 and 1 are the per-cell type and color ids scaled by their
    max id, with the agent shown as type id 5 in its own (always empty)
    cell. Channel 2 is the 24-slot approach table described next to
    TYPE_RANK: slot j codes the first action toward the unique object of
    combination j, and the slot at the agent's own cell index carries its
    direction code instead.
    """
    type_ch = state.type_id.astype(np.float64)
    color_ch = state.color_id.astype(np.float64)
    state_ch = np.zeros(state.height * state.width)
    hints = _approach_hints(state)
    for (x, y), hint in hints.items():
        tid = state.type_id[y, x]
        if tid != EMPTY:
            rank = _TYPE_RANK_BY_ID[tid]
            slot = rank * 6 + (int(state.color_id[y, x]) - 1)
            state_ch[slot] = _HINT_CODE[hint]
    ax, ay = state.agent_pos
    type_ch[ay, ax] = AGENT
    state_ch[ay * state.width + ax] = DIR_CODE[state.agent_dir]
    obs = np.stack(
        [
            type_ch / MAX_TYPE_ID,
            color_ch / MAX_COLOR_ID,
            state_ch.reshape(state.height, state.width),
        ],
        axis=-1,
    )
    return obs.reshape(-1)
