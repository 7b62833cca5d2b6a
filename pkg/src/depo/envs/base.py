"""Common environment types and the interaction contract.

Environments are deterministic simulators: a task seed fully determines the
hidden episode state, observations are pure functions of that state, and
``step`` never mutates its input state (it returns a fresh copy). Illegal
actions are absorbed instead of raising, because trained policies emit
free-form actions: the step counter advances, the state is otherwise
unchanged (so the observation reads as if nothing happened), and the
outcome carries ``legal=False``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

from ..vocab import Vocabulary, default_vocab


class EnvKind(str, Enum):
    GRID_WORLD = "grid"
    SHOP_SIM = "shop"


class ConfigurationError(ValueError):
    """Raised for unsupported environment kinds or invalid parameters."""


class ContractViolation(RuntimeError):
    """Raised when an operation's precondition is violated."""


@dataclass(frozen=True)
class Task:
    """One episode specification: the seed determines the hidden state."""

    id: str
    instruction_tokens: tuple[int, ...]
    env_kind: EnvKind
    seed: int

    def __post_init__(self) -> None:
        if not self.instruction_tokens:
            raise ConfigurationError("task instruction must be non-empty")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("task seed must fit in 64 bits")


@dataclass(frozen=True)
class EnvAction:
    """A structured action: verb plus argument tokens."""

    verb: str
    args: tuple[int, ...] = ()

    def tokens(self, vocab: Vocabulary | None = None) -> tuple[int, ...]:
        """Serialize to (verb token, *arg tokens)."""
        vocab = vocab or default_vocab()
        return (vocab.id(self.verb),) + self.args


NOOP = EnvAction("noop")


@dataclass(frozen=True)
class StepOutcome:
    """Result of applying one action."""

    state: Any
    observation: tuple[int, ...]
    terminal: bool
    legal: bool


class Environment:
    """Interface shared by all simulated environments."""

    kind: EnvKind
    max_steps: int

    def reset(self, task: Task):
        """Start an episode; returns (initial state, initial observation)."""
        raise NotImplementedError

    def step(self, state, action: EnvAction) -> StepOutcome:
        raise NotImplementedError

    def legal_actions(self, state) -> list[EnvAction]:
        raise NotImplementedError

    def snapshot(self, state):
        """Deep, independent copy of the state."""
        raise NotImplementedError

    def observe(self, state) -> tuple[int, ...]:
        """Render the visible portion of the state as tokens."""
        raise NotImplementedError

    def final_reward(self, state) -> float:
        """Terminal reward in [0, 1]; requires a terminal state."""
        if not state.terminal:
            raise ContractViolation("final_reward called on a non-terminal state")
        return self._reward(state)

    def failure_reward(self, state) -> float:
        """The horizon-rule reward the state would earn if truncated now."""
        raise NotImplementedError

    def success(self, state) -> bool:
        """Whether the environment's success predicate holds."""
        raise NotImplementedError

    def _reward(self, state) -> float:
        raise NotImplementedError
