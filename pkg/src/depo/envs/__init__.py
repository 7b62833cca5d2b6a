"""Simulated POMDP environments and the task factory."""

from __future__ import annotations

from ..vocab import Vocabulary, default_vocab
from .base import (ConfigurationError, ContractViolation, EnvAction, EnvKind,
                   Environment, NOOP, StepOutcome, Task)
from .gridworld import GridWorld
from .shopsim import ShopSim
from . import gridworld, shopsim


def make_env(kind: EnvKind | str, vocab: Vocabulary | None = None, **params) -> Environment:
    """Build an environment of the requested kind.

    Raises ConfigurationError for kinds outside the enum.
    """
    try:
        kind = EnvKind(kind)
    except ValueError:
        raise ConfigurationError(f"unknown environment kind: {kind!r}") from None
    if kind is EnvKind.GRID_WORLD:
        return GridWorld(vocab=vocab, **params)
    return ShopSim(vocab=vocab, **params)


def make_task(kind: EnvKind | str, seed: int, vocab: Vocabulary | None = None) -> Task:
    """Build the task whose hidden episode state is determined by ``seed``."""
    try:
        kind = EnvKind(kind)
    except ValueError:
        raise ConfigurationError(f"unknown environment kind: {kind!r}") from None
    vocab = vocab or default_vocab()
    if kind is EnvKind.GRID_WORLD:
        instruction = vocab.ids(*gridworld.INSTRUCTION_WORDS)
    else:
        target = shopsim.generate_target(seed, vocab)
        instruction = vocab.ids(*shopsim.INSTRUCTION_WORDS) + target
    return Task(id=f"{kind.value}-{seed}", instruction_tokens=instruction,
                env_kind=kind, seed=int(seed))


__all__ = [
    "ConfigurationError", "ContractViolation", "EnvAction", "EnvKind",
    "Environment", "GridWorld", "NOOP", "ShopSim", "StepOutcome", "Task",
    "make_env", "make_task",
]
