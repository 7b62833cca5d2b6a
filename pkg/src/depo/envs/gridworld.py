"""A small partially observable grid world.

The hidden state is a square grid with interior walls, an agent position
and a goal cell; the task seed determines the layout. The agent observes
the direction toward the goal plus which adjacent cells are blocked, never
the full map. Episodes end on reaching the goal or after ``max_steps``.

Reward shape
------------
- success: ``1 - 0.9 * (steps_taken / max_steps)``, so faster solutions
  score strictly higher and slow successes drift toward 0.1;
- failure: ``0.5 * (subgoals satisfied / 2)`` where the two subgoals are
  "ended nearer to the goal than the start" and "was adjacent to the goal
  at some point". Failures therefore never exceed 0.5.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from ..vocab import Vocabulary, default_vocab
from .base import ConfigurationError, EnvAction, EnvKind, Environment, StepOutcome, Task

# Directions in fixed N, E, S, W order; north increases y.
DIRECTIONS = (("north", (0, 1)), ("east", (1, 0)), ("south", (0, -1)), ("west", (-1, 0)))
_DELTAS = dict(DIRECTIONS)

INSTRUCTION_WORDS = ("go", "to", "the", "goal")


@dataclass(frozen=True)
class GridState:
    walls: frozenset
    agent: tuple[int, int]
    goal: tuple[int, int]
    start_distance: int
    been_adjacent: bool
    goal_reached: bool
    step_counter: int
    terminal: bool


def _manhattan(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def shortest_path_steps(size: int, walls, start, goal) -> int | None:
    """BFS step count from start to goal, or None when unreachable."""
    if start == goal:
        return 0
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        (x, y), d = frontier.popleft()
        for _, (dx, dy) in DIRECTIONS:
            nxt = (x + dx, y + dy)
            if not (0 <= nxt[0] < size and 0 <= nxt[1] < size):
                continue
            if nxt in walls or nxt in seen:
                continue
            if nxt == goal:
                return d + 1
            seen.add(nxt)
            frontier.append((nxt, d + 1))
    return None


def generate_layout(seed: int, size: int, wall_density: float):
    """Derive (walls, start, goal) from the seed; always solvable."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x6772)))
    cells = [(x, y) for x in range(size) for y in range(size)]
    while True:
        mask = rng.random(len(cells)) < wall_density
        walls = frozenset(c for c, m in zip(cells, mask) if m)
        free = [c for c in cells if c not in walls]
        if len(free) < 2:
            continue
        start_i = int(rng.integers(len(free)))
        goal_i = int(rng.integers(len(free)))
        start, goal = free[start_i], free[goal_i]
        if start == goal:
            continue
        if shortest_path_steps(size, walls, start, goal) is not None:
            return walls, start, goal


class GridWorld(Environment):
    kind = EnvKind.GRID_WORLD

    def __init__(self, size: int = 8, wall_density: float = 0.12, max_steps: int = 64,
                 vocab: Vocabulary | None = None) -> None:
        if size < 2:
            raise ConfigurationError("grid size must be at least 2")
        if max_steps < 1:
            raise ConfigurationError("max_steps must be positive")
        self.size = size
        self.wall_density = wall_density
        self.max_steps = max_steps
        self.vocab = vocab or default_vocab()

    def reset(self, task: Task):
        if task.env_kind is not EnvKind.GRID_WORLD:
            raise ConfigurationError(f"task kind {task.env_kind} not supported by GridWorld")
        walls, start, goal = generate_layout(task.seed, self.size, self.wall_density)
        state = GridState(
            walls=walls,
            agent=start,
            goal=goal,
            start_distance=_manhattan(start, goal),
            been_adjacent=_manhattan(start, goal) == 1,
            goal_reached=False,
            step_counter=0,
            terminal=False,
        )
        return state, self.observe(state)

    def observe(self, state: GridState) -> tuple[int, ...]:
        v = self.vocab
        ax, ay = state.agent
        gx, gy = state.goal
        xdir = "east" if gx > ax else ("west" if gx < ax else "here")
        ydir = "north" if gy > ay else ("south" if gy < ay else "here")
        tokens = [v.id("goal"), v.id(xdir), v.id(ydir)]
        blocked = self.blocked_directions(state)
        if blocked:
            tokens.append(v.id("wall"))
            tokens += [v.id(name) for name in blocked]
        return tuple(tokens)

    def _open(self, state: GridState, direction: str) -> bool:
        dx, dy = _DELTAS[direction]
        nxt = (state.agent[0] + dx, state.agent[1] + dy)
        if not (0 <= nxt[0] < self.size and 0 <= nxt[1] < self.size):
            return False
        return nxt not in state.walls

    def blocked_directions(self, state: GridState) -> list[str]:
        return [name for name, _ in DIRECTIONS if not self._open(state, name)]

    def legal_actions(self, state: GridState) -> list[EnvAction]:
        if state.terminal:
            return []
        v = self.vocab
        return [EnvAction("move", (v.id(name),))
                for name, _ in DIRECTIONS if self._open(state, name)]

    def step(self, state: GridState, action: EnvAction) -> StepOutcome:
        if state.terminal:
            raise ConfigurationError("step called on a terminal state")
        direction = self._parse_move(action)
        legal = direction is not None and self._open(state, direction)
        agent = state.agent
        if legal:
            dx, dy = _DELTAS[direction]
            agent = (agent[0] + dx, agent[1] + dy)
        steps = state.step_counter + 1
        reached = agent == state.goal
        nxt = replace(
            state,
            agent=agent,
            been_adjacent=state.been_adjacent or _manhattan(agent, state.goal) == 1,
            goal_reached=reached,
            step_counter=steps,
            terminal=reached or steps >= self.max_steps,
        )
        return StepOutcome(nxt, self.observe(nxt), nxt.terminal, legal)

    def _parse_move(self, action: EnvAction) -> str | None:
        if action.verb != "move" or len(action.args) != 1:
            return None
        name = self.vocab.word(action.args[0]) if 0 <= action.args[0] < len(self.vocab.symbols) else ""
        return name if name in _DELTAS else None

    def snapshot(self, state: GridState) -> GridState:
        return replace(state)

    def success(self, state: GridState) -> bool:
        return state.goal_reached

    def failure_reward(self, state: GridState) -> float:
        subgoals = 0
        if _manhattan(state.agent, state.goal) < state.start_distance:
            subgoals += 1
        if state.been_adjacent:
            subgoals += 1
        return 0.5 * (subgoals / 2)

    def _reward(self, state: GridState) -> float:
        if state.goal_reached:
            return 1.0 - 0.9 * (state.step_counter / self.max_steps)
        return self.failure_reward(state)

    def goal_direction_words(self, observation: tuple[int, ...]) -> tuple[str, str]:
        """Extract the (xdir, ydir) words from an observation."""
        words = self.vocab.words(observation)
        i = words.index("goal")
        return words[i + 1], words[i + 2]
