"""An item-search shop simulator.

The hidden state is a catalog of items, each a tuple with one value per
attribute slot, plus a 4-attribute purchase target derived from the task
seed. The agent can search by any of the target's attribute values, add a
search result to the cart, and buy. The reward is the attribute-match
fraction of the purchased item (1.0 only for an exact match) and 0 when
nothing was purchased. The catalog itself is never observed; the agent
only sees per-result match counts, slot indices and the cart status.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..vocab import ATTRIBUTE_SLOTS, Vocabulary, default_vocab
from .base import ConfigurationError, EnvAction, EnvKind, Environment, StepOutcome, Task

NUM_ATTRIBUTES = len(ATTRIBUTE_SLOTS)
INSTRUCTION_WORDS = ("looking", "for")


@dataclass(frozen=True)
class ShopState:
    catalog: tuple  # tuple of items; each item is a tuple of 4 value token ids
    target: tuple[int, ...]
    results: tuple[int, ...]  # catalog indices from the last search
    searched: bool
    cart: int | None  # catalog index
    bought: int | None  # catalog index of the purchased item
    step_counter: int
    terminal: bool


def generate_target(seed: int, vocab: Vocabulary) -> tuple[int, ...]:
    """Target attribute values (one per slot) from the task seed."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x73686f)))
    return tuple(vocab.id(slot[int(rng.integers(len(slot)))]) for slot in ATTRIBUTE_SLOTS)


def generate_catalog(seed: int, vocab: Vocabulary, catalog_size: int,
                     num_results: int) -> tuple[tuple, tuple[int, ...]]:
    """Seeded catalog containing exactly one full match of the target.

    The full match is guaranteed to appear among the first ``num_results``
    items sharing any of the target's attribute values, so every task is
    solvable through a single search.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x73686f)))
    target = tuple(vocab.id(slot[int(rng.integers(len(slot)))]) for slot in ATTRIBUTE_SLOTS)
    items = []
    for _ in range(catalog_size - 1):
        item = []
        for s, slot in enumerate(ATTRIBUTE_SLOTS):
            # Bias toward the target value so near-misses are common.
            if rng.random() < 0.45:
                item.append(target[s])
            else:
                item.append(vocab.id(slot[int(rng.integers(len(slot)))]))
        # Keep decoys strictly partial so the full match is unique.
        if tuple(item) == target:
            slot_i = int(rng.integers(NUM_ATTRIBUTES))
            item[slot_i] = _other_value(vocab, rng, target[slot_i], ATTRIBUTE_SLOTS[slot_i])
        items.append(tuple(item))
    exact_pos = int(rng.integers(num_results))
    items.insert(min(exact_pos, len(items)), target)
    return tuple(items), target


def _other_value(vocab: Vocabulary, rng, current: int, slot) -> int:
    choices = [vocab.id(w) for w in slot if vocab.id(w) != current]
    return choices[int(rng.integers(len(choices)))]


class ShopSim(Environment):
    kind = EnvKind.SHOP_SIM

    def __init__(self, catalog_size: int = 10, num_results: int = 3, max_steps: int = 15,
                 vocab: Vocabulary | None = None) -> None:
        if catalog_size < num_results + 1:
            raise ConfigurationError("catalog must be larger than the result page")
        if max_steps < 1:
            raise ConfigurationError("max_steps must be positive")
        self.catalog_size = catalog_size
        self.num_results = num_results
        self.max_steps = max_steps
        self.vocab = vocab or default_vocab()
        self._digit_ids = tuple(self.vocab.id(str(n)) for n in range(16))

    def reset(self, task: Task):
        if task.env_kind is not EnvKind.SHOP_SIM:
            raise ConfigurationError(f"task kind {task.env_kind} not supported by ShopSim")
        catalog, target = generate_catalog(task.seed, self.vocab, self.catalog_size,
                                           self.num_results)
        state = ShopState(
            catalog=catalog,
            target=target,
            results=(),
            searched=False,
            cart=None,
            bought=None,
            step_counter=0,
            terminal=False,
        )
        return state, self.observe(state)

    def match_count(self, state: ShopState, item_index: int) -> int:
        item = state.catalog[item_index]
        return sum(1 for a, b in zip(item, state.target) if a == b)

    def observe(self, state: ShopState) -> tuple[int, ...]:
        v = self.vocab
        tokens = [v.id("shop")]
        tokens += list(state.target)
        tokens.append(v.id("results"))
        if state.searched and state.results:
            for slot, _ in enumerate(state.results):
                tokens.append(self._digit_ids[slot])
                tokens.append(self._digit_ids[self.match_count(state, state.results[slot])])
        else:
            tokens.append(v.id("none"))
        tokens.append(v.id("cart"))
        if state.cart is None:
            tokens.append(v.id("empty"))
        else:
            tokens.append(self._digit_ids[self.match_count(state, state.cart)])
        return tuple(tokens)

    def legal_actions(self, state: ShopState) -> list[EnvAction]:
        if state.terminal:
            return []
        actions = [EnvAction("search", (val,)) for val in state.target]
        for slot in range(len(state.results)):
            actions.append(EnvAction("add", (self._digit_ids[slot],)))
        if state.cart is not None:
            actions.append(EnvAction("buy"))
        return actions

    def step(self, state: ShopState, action: EnvAction) -> StepOutcome:
        if state.terminal:
            raise ConfigurationError("step called on a terminal state")
        new = {}
        legal = True
        if action.verb == "search" and len(action.args) == 1 and action.args[0] in state.target:
            slot = state.target.index(action.args[0])
            matches = [i for i, item in enumerate(state.catalog)
                       if item[slot] == action.args[0]]
            new["results"] = tuple(matches[: self.num_results])
            new["searched"] = True
        elif action.verb == "add" and len(action.args) == 1 \
                and action.args[0] in self._digit_ids[: len(state.results)]:
            new["cart"] = state.results[self._digit_ids.index(action.args[0])]
        elif action.verb == "buy" and not action.args and state.cart is not None:
            new["bought"] = state.cart
        else:
            legal = False
        steps = state.step_counter + 1
        bought = new.get("bought", state.bought)
        nxt = replace(state, **new, step_counter=steps,
                      terminal=bought is not None or steps >= self.max_steps)
        return StepOutcome(nxt, self.observe(nxt), nxt.terminal, legal)

    def snapshot(self, state: ShopState) -> ShopState:
        return replace(state)

    def success(self, state: ShopState) -> bool:
        return state.bought is not None and self.match_count(state, state.bought) == NUM_ATTRIBUTES

    def failure_reward(self, state: ShopState) -> float:
        return 0.0

    def _reward(self, state: ShopState) -> float:
        if state.bought is None:
            return 0.0
        return self.match_count(state, state.bought) / NUM_ATTRIBUTES
