"""Rollout actors for tree search: scripted solvers, a random actor, and a
learned-policy wrapper.

Scripted actors return a templated "thought core" describing the state and
the chosen action. A per-trajectory verbosity style later appends filler
words to the core: wandering, slow rollouts tend to get the verbose style
while fast ones stay terse, mirroring how overthinking and inefficient
acting go together.
"""

from __future__ import annotations

from dataclasses import dataclass


from .envs import EnvAction, Environment
from .envs.gridworld import GridWorld
from .envs.shopsim import NUM_ATTRIBUTES, ShopSim
from .policy import PolicyModel, encode_history, parse_step_tokens, sample_step
from .vocab import Vocabulary, default_vocab

# Filler suffix shared by all verbosity styles; a style keeps the first k.
FILLER_WORDS = ("indeed", "truly", "yes", "ok", "now", "then", "just")
STYLE_FILLER_COUNTS = (0, 3, 7)


@dataclass(frozen=True)
class StyleProfile:
    """Distribution over filler counts, conditioned on trajectory length."""

    fast_probs: tuple[float, ...] = (0.25, 0.25, 0.50)
    slow_probs: tuple[float, ...] = (0.03, 0.07, 0.90)
    slow_steps: int = 7

    def draw_filler_count(self, rng, num_steps: int) -> int:
        probs = self.slow_probs if num_steps >= self.slow_steps else self.fast_probs
        return STYLE_FILLER_COUNTS[int(rng.choice(len(probs), p=probs))]


def filler_tokens(vocab: Vocabulary, count: int) -> tuple[int, ...]:
    return vocab.ids(*FILLER_WORDS[:count])


class RolloutActor:
    """Proposes (thought core, action) for one rollout step."""

    templated = True

    def propose(self, env: Environment, state, rng, history):
        raise NotImplementedError


def _grid_thought(env: GridWorld, state, action: EnvAction) -> tuple[int, ...]:
    # Restating the adjacent walls before the direction choice means the
    # training data never contains "wall X ... go X", which is what keeps
    # the cloned policy from walking into walls it was told about.
    v = env.vocab
    ax, ay = state.agent
    gx, gy = state.goal
    xdir = "east" if gx > ax else ("west" if gx < ax else "here")
    ydir = "north" if gy > ay else ("south" if gy < ay else "here")
    words = ["goal", xdir, ydir]
    blocked = env.blocked_directions(state)
    if blocked:
        words += ["wall"] + blocked
    move = v.word(action.args[0]) if action.verb == "move" and action.args else "here"
    words += ["go", move]
    return v.ids(*words)


def _shop_thought(env: ShopSim, state, action: EnvAction) -> tuple[int, ...]:
    v = env.vocab
    if action.verb == "search":
        return v.ids("query") + action.args + v.ids("search")
    if action.verb == "add":
        return v.ids("option") + action.args + v.ids("fits", "add")
    if action.verb == "buy":
        return v.ids("this", "one", "fits", "buy")
    return v.ids("think")


def thought_core(env: Environment, state, action: EnvAction) -> tuple[int, ...]:
    if isinstance(env, GridWorld):
        return _grid_thought(env, state, action)
    return _shop_thought(env, state, action)


class UniformRandomActor(RolloutActor):
    def propose(self, env, state, rng, history):
        legal = env.legal_actions(state)
        action = legal[int(rng.integers(len(legal)))]
        return thought_core(env, state, action), action


class HeuristicActor(RolloutActor):
    """Scripted per-environment solver with injected exploration noise.

    Noise keeps mid-reward trajectories in the pool; without it every
    rollout would be near-optimal and the undesirable band would be empty.
    """

    def __init__(self, noise: float = 0.25) -> None:
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must be a probability")
        self.noise = noise

    def propose(self, env, state, rng, history):
        legal = env.legal_actions(state)
        if rng.random() < self.noise:
            action = legal[int(rng.integers(len(legal)))]
        elif isinstance(env, GridWorld):
            action = self._grid_action(env, state, legal, rng)
        else:
            action = self._shop_action(env, state, legal)
        return thought_core(env, state, action), action

    def _grid_action(self, env: GridWorld, state, legal, rng) -> EnvAction:
        ax, ay = state.agent
        gx, gy = state.goal
        horizontal = "east" if gx > ax else "west"
        vertical = "north" if gy > ay else "south"
        if abs(gx - ax) >= abs(gy - ay):
            prefs = [horizontal] * (gx != ax) + [vertical] * (gy != ay)
        else:
            prefs = [vertical] * (gy != ay) + [horizontal] * (gx != ax)
        # Deterministic detour order when the greedy directions are blocked,
        # so the demonstrations teach one consistent recovery rule.
        prefs += [name for name in ("north", "east", "south", "west")
                  if name not in prefs]
        by_dir = {env.vocab.word(a.args[0]): a for a in legal}
        for name in prefs:
            if name in by_dir:
                return by_dir[name]
        return legal[int(rng.integers(len(legal)))]

    def _shop_action(self, env: ShopSim, state, legal) -> EnvAction:
        if state.cart is not None and env.match_count(state, state.cart) == NUM_ATTRIBUTES:
            return EnvAction("buy")
        if state.results:
            counts = [env.match_count(state, i) for i in state.results]
            best = max(range(len(counts)), key=lambda i: (counts[i], -i))
            if state.cart is None or counts[best] > env.match_count(state, state.cart):
                return EnvAction("add", (env.vocab.id(str(best)),))
            return EnvAction("buy")
        return EnvAction("search", (state.target[0],))


class LearnedActor(RolloutActor):
    """Samples steps from a trained policy; thoughts come from the policy."""

    templated = False

    def __init__(self, model: PolicyModel, params, temperature: float = 1.0,
                 max_step_tokens: int = 24, vocab: Vocabulary | None = None) -> None:
        self.model = model
        self.params = params
        self.temperature = temperature
        self.max_step_tokens = max_step_tokens
        self.vocab = vocab or default_vocab()

    def propose(self, env, state, rng, history):
        task, initial_obs, steps = history
        hist = encode_history(self.vocab, task.instruction_tokens, initial_obs, steps,
                              limit=self.model.cfg.context - self.max_step_tokens)
        tokens = sample_step(self.model, self.params, hist, self.temperature,
                             self.max_step_tokens, rng, self.vocab)
        thought, action, _parsed = parse_step_tokens(self.vocab, tokens)
        return thought, action


def make_actor(name: str, noise: float = 0.25, model: PolicyModel | None = None,
               params=None) -> RolloutActor:
    if name == "uniform_random":
        return UniformRandomActor()
    if name == "heuristic":
        return HeuristicActor(noise=noise)
    if name == "learned":
        if model is None or params is None:
            raise ValueError("learned rollout policy needs a model and parameters")
        return LearnedActor(model, params)
    raise ValueError(f"unknown rollout policy: {name!r}")
