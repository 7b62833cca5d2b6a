"""Desirable/undesirable labeling: reward bands, step filter, rephrasing.

A trajectory is desirable when its reward reaches the upper threshold and
undesirable when it falls in the intermediate band; everything below the
lower threshold is discarded. Reward-desirable trajectories that took too
many steps are demoted to the undesirable set, which is exactly the
contrast the efficiency-aware preference loss feeds on. A rephrasing hook
can then shorten thoughts; for desirable trajectories the mean tokens per
step is guaranteed not to increase (a longer rephrased thought is dropped
in favor of the original).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from .envs import ContractViolation, Task
from .trajectory import AgentStep, Label, Trajectory
from .vocab import Vocabulary, default_vocab

# rephraser: (thought_tokens, step, task) -> thought_tokens
RephraseFn = Callable[[tuple[int, ...], AgentStep, Task], tuple[int, ...]]


@dataclass(frozen=True)
class LabelConfig:
    kappa0: float = 0.9
    kappa1: float = 0.9
    kappa2: float = 0.7
    step_threshold: int = 7
    require_strict_margin: bool = False
    rephrase_budget: int = 12

    def __post_init__(self) -> None:
        if not (1.0 >= self.kappa0 >= self.kappa1 > self.kappa2 > 0.0):
            raise ValueError(
                "thresholds must satisfy 1 >= kappa0 >= kappa1 > kappa2 > 0")
        if self.require_strict_margin and not self.kappa0 > self.kappa1:
            raise ValueError("strict margin requires kappa0 > kappa1")
        if self.step_threshold < 1:
            raise ValueError("step_threshold must be positive")


# The grid world scores slow successes into [0.7, 0.9); the shop only
# reaches 1.0 on an exact attribute match, so its desirable cut sits at 1.
GRIDWORLD_PRESET = LabelConfig(kappa0=0.9, kappa1=0.9, kappa2=0.7, step_threshold=7)
SHOPSIM_PRESET = LabelConfig(kappa0=1.0, kappa1=0.9, kappa2=0.7, step_threshold=7,
                             require_strict_margin=True)


@dataclass(frozen=True)
class LabeledDataset:
    desirable: tuple[Trajectory, ...]
    undesirable: tuple[Trajectory, ...]
    discarded_count: int

    def __len__(self) -> int:
        return len(self.desirable) + len(self.undesirable)


def label_by_reward(traj: Trajectory, cfg: LabelConfig) -> Label:
    if traj.final_reward is None:
        raise ContractViolation("cannot label a trajectory without a final reward")
    r = traj.final_reward
    if r >= cfg.kappa0:
        return Label.DESIRABLE
    if cfg.kappa2 <= r < cfg.kappa1:
        return Label.UNDESIRABLE
    return Label.DISCARD


def filter_by_steps(label: Label, traj: Trajectory, cfg: LabelConfig) -> Label:
    """Demote slow reward-desirable trajectories; never promote."""
    if label is Label.DESIRABLE and traj.num_steps >= cfg.step_threshold:
        return Label.UNDESIRABLE
    return label


def truncating_rephraser(budget: int) -> RephraseFn:
    """Deterministic default: keep the first ``budget`` thought tokens."""

    def rephrase_fn(thought, step, task):
        return tuple(thought[:budget])

    return rephrase_fn


def identity_rephraser(thought, step, task):
    return tuple(thought)


def rephrase(traj: Trajectory, rephraser: RephraseFn,
             vocab: Vocabulary | None = None) -> Trajectory:
    """Apply the rephraser to every thought; actions and observations stay
    byte-identical. For desirable trajectories a rephrased thought that got
    longer is discarded in favor of the original, so the mean tokens per
    step cannot increase."""
    vocab = vocab or default_vocab()
    enforce = traj.label is Label.DESIRABLE
    new_steps = []
    for step in traj.steps:
        new_thought = tuple(rephraser(step.thought, step, traj.task))
        if not vocab.contains_ids(new_thought):
            raise ValueError("rephraser emitted tokens outside the vocabulary")
        if enforce and len(new_thought) > len(step.thought):
            new_thought = step.thought
        new_steps.append(replace(step, thought=new_thought))
    return replace(traj, steps=tuple(new_steps))


def build_dataset(trajs, cfg: LabelConfig, rephraser: RephraseFn | None = None,
                  vocab: Vocabulary | None = None) -> LabeledDataset:
    """Label, step-filter, rephrase and de-duplicate a trajectory pool.

    De-duplication is by (task id, action sequence) within each output set,
    keeping the first occurrence; dropped duplicates count as discarded so
    that the three counts always partition the input.
    """
    rephraser = rephraser or truncating_rephraser(cfg.rephrase_budget)
    desirable: dict = {}
    undesirable: dict = {}
    discarded = 0
    for traj in trajs:
        label = filter_by_steps(label_by_reward(traj, cfg), traj, cfg)
        if label is Label.DISCARD:
            discarded += 1
            continue
        labeled = rephrase(traj.with_label(label), rephraser, vocab)
        bucket = desirable if label is Label.DESIRABLE else undesirable
        key = (traj.task.id, labeled.action_signature())
        if key in bucket:
            discarded += 1
        else:
            bucket[key] = labeled
    return LabeledDataset(desirable=tuple(desirable.values()),
                          undesirable=tuple(undesirable.values()),
                          discarded_count=discarded)
