"""Monte Carlo tree search over environment states.

Standard UCT search: selection down the tree by upper confidence bound,
expansion of one untried action, rollout with a pluggable actor until the
task terminates or the depth cap is hit, and backpropagation of the final
reward as a running mean. Every complete root-to-terminal path encountered
(tree prefix plus rollout tail) is harvested as a candidate trajectory and
de-duplicated by action sequence, because the labeling stage needs both
high- and mid-reward samples, not just the best one.

Unvisited children are selected before any visited sibling, the standard
convention for the visit-count singularity in the UCT formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .actors import RolloutActor, StyleProfile, filler_tokens, make_actor, thought_core
from .envs import ContractViolation, EnvAction, Environment, Task
from .trajectory import AgentStep, Provenance, Trajectory
from .vocab import Vocabulary, default_vocab


@dataclass
class SearchConfig:
    exploration_weight: float = 1.0
    max_depth: int = 64
    simulations: int = 500
    rollout_policy: str = "heuristic"  # uniform_random | heuristic | learned
    seed: int = 0
    noise: float = 0.25

    def __post_init__(self) -> None:
        if self.exploration_weight < 0:
            raise ValueError("exploration_weight must be non-negative")
        if self.max_depth < 1 or self.simulations < 1:
            raise ValueError("max_depth and simulations must be positive")


@dataclass
class SearchNode:
    state: object
    incoming_action: EnvAction | None = None
    thought_core: tuple[int, ...] = ()
    observation: tuple[int, ...] = ()
    q_value: float = 0.0
    visits: int = 0
    parent: "SearchNode | None" = None
    children: list = field(default_factory=list)
    untried_actions: list = field(default_factory=list)

    @property
    def fully_expanded(self) -> bool:
        return not self.untried_actions


def uct_score(q: float, parent_visits: int, visits: int, w: float) -> float:
    """Upper confidence bound: q + w * sqrt(ln(parent_visits) / visits)."""
    if visits < 1:
        raise ValueError("uct_score requires visits >= 1; treat unvisited children as +inf")
    if parent_visits < visits:
        raise ValueError("parent_visits must be at least visits")
    return q + w * math.sqrt(math.log(parent_visits) / visits)


class Search:
    """One search instance bound to an environment, a config and an actor."""

    def __init__(self, env: Environment, cfg: SearchConfig,
                 actor: RolloutActor | None = None,
                 vocab: Vocabulary | None = None,
                 style: StyleProfile | None = None) -> None:
        if cfg.max_depth > env.max_steps:
            raise ValueError("max_depth cannot exceed the environment horizon")
        self.env = env
        self.cfg = cfg
        self.actor = actor or make_actor(cfg.rollout_policy, noise=cfg.noise)
        self.vocab = vocab or default_vocab()
        self.style = style or StyleProfile()

    # --- the four MCTS phases -------------------------------------------

    def select(self, root: SearchNode, w: float, rng) -> list[SearchNode]:
        """Path from the root to the first non-fully-expanded or terminal node."""
        path = [root]
        node = root
        while node.fully_expanded and node.children and not node.state.terminal:
            unvisited = [c for c in node.children if c.visits == 0]
            if unvisited:
                candidates = unvisited
            else:
                scores = [uct_score(c.q_value, node.visits, c.visits, w)
                          for c in node.children]
                best = max(scores)
                candidates = [c for c, s in zip(node.children, scores) if s == best]
            node = candidates[int(rng.integers(len(candidates)))] \
                if len(candidates) > 1 else candidates[0]
            path.append(node)
        return path

    def expand(self, node: SearchNode, rng) -> SearchNode:
        if node.state.terminal:
            raise ContractViolation("cannot expand a terminal node")
        if not node.untried_actions:
            raise ContractViolation("cannot expand a fully expanded node")
        action = node.untried_actions.pop(int(rng.integers(len(node.untried_actions))))
        core = thought_core(self.env, node.state, action)
        outcome = self.env.step(self.env.snapshot(node.state), action)
        child = SearchNode(
            state=outcome.state,
            incoming_action=action,
            thought_core=core,
            observation=outcome.observation,
            parent=node,
            untried_actions=list(self.env.legal_actions(outcome.state)),
        )
        node.children.append(child)
        return child

    def rollout(self, node: SearchNode, rng, history=None):
        """Play the actor from the node until terminal or the depth cap.

        ``history`` is (task, initial_obs, steps so far) for history-aware
        actors. Returns (reward, tail, terminal); depth-truncated rollouts
        score by the environment's failure branch, as if the horizon had
        run out.
        """
        state = node.state
        if state.terminal:
            return self.env.final_reward(state), [], True
        task, initial_obs, prior_steps = history if history is not None else (None, (), ())
        state = self.env.snapshot(state)
        steps = list(prior_steps)
        tail = []
        while not state.terminal and state.step_counter < self.cfg.max_depth:
            core, action = self.actor.propose(self.env, state, rng,
                                              (task, initial_obs, steps))
            outcome = self.env.step(state, action)
            step = AgentStep(thought=tuple(core), action=action,
                             observation=tuple(outcome.observation),
                             legal=outcome.legal)
            tail.append(step)
            steps.append(step)
            state = outcome.state
        if state.terminal:
            return self.env.final_reward(state), tail, True
        return self.env.failure_reward(state), tail, False

    def backpropagate(self, path, reward: float) -> None:
        for node in path:
            node.visits += 1
            node.q_value += (reward - node.q_value) / node.visits

    # --- search driver ----------------------------------------------------

    def run(self, task: Task) -> list[Trajectory]:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(int(self.cfg.seed), int(task.seed), 0x6d63)))
        state, initial_obs = self.env.reset(task)
        root = SearchNode(state=state, untried_actions=list(self.env.legal_actions(state)))
        harvested: dict = {}
        for _ in range(self.cfg.simulations):
            path = self.select(root, self.cfg.exploration_weight, rng)
            node = path[-1]
            if not node.state.terminal and node.untried_actions \
                    and node.state.step_counter < self.cfg.max_depth:
                node = self.expand(node, rng)
                path.append(node)
            prior = [AgentStep(thought=n.thought_core, action=n.incoming_action,
                               observation=n.observation, legal=True)
                     for n in path[1:]]
            reward, tail, terminal = self.rollout(node, rng, (task, initial_obs, prior))
            self.backpropagate(path, reward)
            if terminal:
                self._harvest(task, prior + tail, reward, harvested, rng)
        return list(harvested.values())

    def _harvest(self, task, steps, reward, harvested, rng) -> None:
        if not steps:
            return
        signature = tuple((s.action.verb, s.action.args) for s in steps)
        if signature in harvested:
            return
        if self.actor.templated:
            count = self.style.draw_filler_count(rng, len(steps))
            filler = filler_tokens(self.vocab, count)
            steps = [replace(s, thought=s.thought + filler) for s in steps]
        harvested[signature] = Trajectory(task=task, steps=tuple(steps),
                                          final_reward=reward,
                                          provenance=Provenance.MCTS)


def search(task: Task, env: Environment, cfg: SearchConfig,
           actor: RolloutActor | None = None,
           vocab: Vocabulary | None = None,
           style: StyleProfile | None = None) -> list[Trajectory]:
    """Run MCTS for one task and return all unique terminal trajectories."""
    return Search(env, cfg, actor=actor, vocab=vocab, style=style).run(task)
