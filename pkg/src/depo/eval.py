"""Policy evaluation: greedy rollouts and the six summary metrics.

Success comes from the environment's own predicate at termination (goal
reached in the grid, exact attribute match in the shop), not from a reward
cutoff; trajectories loaded from disk fall back to a reward threshold.
Means are computed with exact summation so metric values are invariant
under any reordering of the episode list.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .envs import Environment, Task, make_task
from .policy import PolicyModel, encode_history, parse_step_tokens
from .trajectory import AgentStep, Provenance, Trajectory, token_stats
from .vocab import Vocabulary, default_vocab

LOW_SUCCESS_CUTOFF = 0.2


@dataclass(frozen=True)
class MetricsReport:
    success_rate: float
    mean_reward: float
    tokens_all: float
    steps_all: float
    tokens_succ: float
    steps_succ: float
    episodes: int
    seed: int
    no_success: bool
    low_success: bool


class _Episode:
    __slots__ = ("task", "state", "initial_obs", "steps", "history", "buffer", "done",
                 "trajectory")

    def __init__(self, task: Task, state, initial_obs) -> None:
        self.task = task
        self.state = state
        self.initial_obs = initial_obs
        self.steps: list[AgentStep] = []
        self.history: tuple[int, ...] = ()
        self.buffer: list[int] = []
        self.done = False
        self.trajectory: Trajectory | None = None


def run_episodes(model: PolicyModel, params, env: Environment, n: int, seed: int,
                 max_step_tokens: int = 24, vocab: Vocabulary | None = None,
                 forward_batch: int = 64) -> list[Trajectory]:
    """Roll out ``n`` greedy episodes on task seeds seed, seed+1, ...

    Episodes advance in lock step so the per-token forward passes are
    batched; causal attention keeps right-padding inert, and temperature-0
    decoding with lowest-index tie-breaking makes runs reproducible.
    """
    if n < 1:
        raise ValueError("n must be positive")
    vocab = vocab or default_vocab()
    limit = model.cfg.context - max_step_tokens
    episodes = []
    for i in range(n):
        task = make_task(env.kind, seed + i, vocab)
        state, obs = env.reset(task)
        ep = _Episode(task, state, obs)
        ep.history = encode_history(vocab, task.instruction_tokens, obs, (), limit)
        episodes.append(ep)

    while True:
        active = [ep for ep in episodes if not ep.done]
        if not active:
            break
        for start in range(0, len(active), forward_batch):
            chunk = active[start:start + forward_batch]
            rows = [tuple(ep.history) + tuple(ep.buffer) for ep in chunk]
            longest = max(len(r) for r in rows)
            ids = np.zeros((len(chunk), longest), dtype=np.int64)
            for j, row in enumerate(rows):
                ids[j, :len(row)] = row
            lengths = np.array([len(r) for r in rows], dtype=np.int64)
            logits = model.next_token_logits(params, ids, lengths)
            for j, ep in enumerate(chunk):
                tok = int(np.argmax(logits[j]))
                if len(ep.buffer) == max_step_tokens - 1 and tok != vocab.eos:
                    tok = vocab.eos
                ep.buffer.append(tok)
                if tok == vocab.eos:
                    _finish_step(ep, env, vocab, limit)
    return [ep.trajectory for ep in episodes]


def _finish_step(ep: _Episode, env: Environment, vocab: Vocabulary, limit: int) -> None:
    thought, action, parsed = parse_step_tokens(vocab, ep.buffer)
    ep.buffer = []
    outcome = env.step(ep.state, action)
    ep.state = outcome.state
    ep.steps.append(AgentStep(thought=thought, action=action,
                              observation=tuple(outcome.observation),
                              legal=parsed and outcome.legal))
    if outcome.terminal:
        ep.done = True
        ep.trajectory = Trajectory(task=ep.task, steps=tuple(ep.steps),
                                   final_reward=env.final_reward(ep.state),
                                   provenance=Provenance.EVAL,
                                   success=env.success(ep.state))
    else:
        ep.history = encode_history(vocab, ep.task.instruction_tokens, ep.initial_obs,
                                    tuple(ep.steps), limit)


def _is_success(traj: Trajectory, threshold: float | None) -> bool:
    if traj.success is not None:
        return traj.success
    if threshold is None:
        raise ValueError("trajectory has no success flag and no threshold was given")
    if traj.final_reward is None:
        raise ValueError("cannot score a trajectory without a final reward")
    return traj.final_reward >= threshold


def compute_metrics(trajs, success_threshold: float | None = None, seed: int = 0,
                    vocab: Vocabulary | None = None) -> MetricsReport:
    """The six summary metrics over a list of terminal trajectories."""
    trajs = list(trajs)
    if not trajs:
        raise ValueError("compute_metrics requires at least one trajectory")
    vocab = vocab or default_vocab()
    n = len(trajs)
    stats = [token_stats(t, vocab) for t in trajs]
    success = [_is_success(t, success_threshold) for t in trajs]
    wins = [i for i, s in enumerate(success) if s]
    succ_rate = len(wins) / n
    mean_reward = math.fsum(t.final_reward for t in trajs) / n
    tokens_all = math.fsum(s.total_tokens for s in stats) / n
    steps_all = math.fsum(s.total_steps for s in stats) / n
    if wins:
        tokens_succ = math.fsum(stats[i].total_tokens for i in wins) / len(wins)
        steps_succ = math.fsum(stats[i].total_steps for i in wins) / len(wins)
    else:
        tokens_succ = steps_succ = 0.0
    return MetricsReport(
        success_rate=succ_rate,
        mean_reward=mean_reward,
        tokens_all=tokens_all,
        steps_all=steps_all,
        tokens_succ=tokens_succ,
        steps_succ=steps_succ,
        episodes=n,
        seed=seed,
        no_success=not wins,
        low_success=succ_rate < LOW_SUCCESS_CUTOFF,
    )


_FIELDS = (("Succ.", "success_rate", "{:.4f}"), ("Re.", "mean_reward", "{:.4f}"),
           ("T@All", "tokens_all", "{:.2f}"), ("S@All", "steps_all", "{:.2f}"),
           ("T@Succ.", "tokens_succ", "{:.2f}"), ("S@Succ.", "steps_succ", "{:.2f}"))


def report_text(report: MetricsReport, title: str = "evaluation") -> str:
    lines = [f"# {title} ({report.episodes} episodes, seed {report.seed})"]
    for label, attr, fmt in _FIELDS:
        lines.append(f"{label:<9} {fmt.format(getattr(report, attr))}")
    if report.no_success:
        lines.append("note: no successful episodes; T@Succ./S@Succ. reported as 0")
    if report.low_success:
        lines.append(f"note: success rate below {LOW_SUCCESS_CUTOFF} "
                     "(efficiency numbers are not meaningful)")
    return "\n".join(lines) + "\n"


def comparison_text(report: MetricsReport, baseline: MetricsReport) -> str:
    """Side-by-side deltas against a baseline, in percent where defined."""
    lines = ["# comparison against baseline (delta% = (current - base) / base * 100)"]
    for label, attr, fmt in _FIELDS:
        cur, base = getattr(report, attr), getattr(baseline, attr)
        if base == 0:
            delta = "n/a" if cur != 0 else "+0.00%"
        else:
            delta = f"{(cur - base) / base * 100:+.2f}%"
        lines.append(f"{label:<9} {fmt.format(cur):>10} vs {fmt.format(base):>10}  {delta}")
    return "\n".join(lines) + "\n"


def report_record(report: MetricsReport, name: str = "") -> str:
    rec = {"name": name, "episodes": report.episodes, "seed": report.seed,
           "success_rate": report.success_rate, "mean_reward": report.mean_reward,
           "tokens_all": report.tokens_all, "steps_all": report.steps_all,
           "tokens_succ": report.tokens_succ, "steps_succ": report.steps_succ,
           "no_success": report.no_success, "low_success": report.low_success}
    return json.dumps(rec, separators=(",", ":"))
