"""Trajectory data model, token accounting and dataset persistence.

A trajectory is an ordered list of agent steps (thought, action, the
observation returned after acting) plus the terminal reward. Token
accounting counts agent-emitted content only: thought tokens plus the
serialized action tokens. Observation tokens are environment-emitted and
never counted; the end-of-thought / end-of-step sentinels are emitted by
the policy (and are modeled by the losses) but are excluded here so that
per-step counts match the efficiency metrics.

Datasets are stored one record per line in JSON with a fixed field order,
which makes serialization canonical: writing the same trajectory twice
yields byte-identical lines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

from .envs import ContractViolation, EnvAction, EnvKind, Task, make_task
from .vocab import Vocabulary, default_vocab


class Label(str, Enum):
    DESIRABLE = "desirable"
    UNDESIRABLE = "undesirable"
    DISCARD = "discard"


class Provenance(str, Enum):
    MCTS = "mcts"
    ROLLOUT = "rollout"
    EVAL = "eval"


@dataclass(frozen=True)
class AgentStep:
    thought: tuple[int, ...]
    action: EnvAction
    observation: tuple[int, ...]
    legal: bool = True


@dataclass(frozen=True)
class Trajectory:
    task: Task
    steps: tuple[AgentStep, ...]
    final_reward: float | None
    label: Label | None = None
    provenance: Provenance = Provenance.MCTS
    # Runtime-only success flag set by evaluation rollouts; not serialized.
    success: bool | None = field(default=None, compare=False)

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    def action_signature(self) -> tuple:
        """Key used to de-duplicate trajectories of the same task."""
        return tuple((s.action.verb, s.action.args) for s in self.steps)

    def with_label(self, label: Label) -> "Trajectory":
        return replace(self, label=label)


@dataclass(frozen=True)
class TokenStats:
    mean_tokens_per_step: float
    total_steps: int
    total_tokens: int


def step_token_count(step: AgentStep, vocab: Vocabulary | None = None) -> int:
    return len(step.thought) + len(step.action.tokens(vocab))


def token_stats(traj: Trajectory, vocab: Vocabulary | None = None) -> TokenStats:
    """Agent-emitted token totals; observations never contribute."""
    if not traj.steps:
        raise ContractViolation("token_stats requires a non-empty trajectory")
    vocab = vocab or default_vocab()
    total = sum(step_token_count(s, vocab) for s in traj.steps)
    steps = len(traj.steps)
    return TokenStats(mean_tokens_per_step=total / steps, total_steps=steps,
                      total_tokens=total)


class DatasetError(ValueError):
    """Raised for malformed dataset files; carries the offending line."""

    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def _step_record(step: AgentStep) -> dict:
    return {
        "thought": list(step.thought),
        "action": {"verb": step.action.verb, "args": list(step.action.args)},
        "observation": list(step.observation),
        "legal": step.legal,
    }


def trajectory_record(traj: Trajectory) -> dict:
    return {
        "task_id": traj.task.id,
        "env_kind": traj.task.env_kind.value,
        "seed": traj.task.seed,
        "steps": [_step_record(s) for s in traj.steps],
        "final_reward": traj.final_reward,
        "label": traj.label.value if traj.label is not None else None,
        "provenance": traj.provenance.value,
    }


def record_line(traj: Trajectory) -> str:
    return json.dumps(trajectory_record(traj), separators=(",", ":"))


def parse_record(rec: dict, vocab: Vocabulary | None = None) -> Trajectory:
    kind = EnvKind(rec["env_kind"])
    task = make_task(kind, int(rec["seed"]), vocab)
    if rec["task_id"] != task.id:
        task = replace(task, id=rec["task_id"])
    steps = []
    for s in rec["steps"]:
        action = EnvAction(s["action"]["verb"], tuple(s["action"]["args"]))
        steps.append(AgentStep(thought=tuple(s["thought"]), action=action,
                               observation=tuple(s["observation"]),
                               legal=bool(s["legal"])))
    label = Label(rec["label"]) if rec.get("label") is not None else None
    reward = rec["final_reward"]
    return Trajectory(task=task, steps=tuple(steps),
                      final_reward=float(reward) if reward is not None else None,
                      label=label, provenance=Provenance(rec["provenance"]))


def write_dataset(trajs, path) -> int:
    """Write one record per line; returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajs:
            fh.write(record_line(traj))
            fh.write("\n")
            count += 1
    return count


def read_dataset(path, vocab: Vocabulary | None = None) -> list[Trajectory]:
    """Read a line-delimited dataset; unknown record fields are ignored."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(parse_record(rec, vocab))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(str(exc), number) from None
    return out
