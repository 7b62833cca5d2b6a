"""Serialization of interaction histories and agent steps into token rows.

A step is emitted by the policy as ``thought .. <eot> action .. <eos>``.
A history encodes ``(instruction, o1, step1, o2, ..., ot)`` with role
delimiters. When a history exceeds its length budget, whole blocks are
dropped oldest first (the initial observation counts as the oldest block);
the instruction is never dropped.
"""

from __future__ import annotations

from ..envs import EnvAction, NOOP
from ..trajectory import AgentStep
from ..vocab import Vocabulary

# Verb arity of the shared action grammar.
ACTION_ARITY = {"move": 1, "search": 1, "add": 1, "buy": 0, "noop": 0}


def encode_step(vocab: Vocabulary, thought: tuple[int, ...], action: EnvAction) -> tuple[int, ...]:
    return tuple(thought) + (vocab.eot,) + action.tokens(vocab) + (vocab.eos,)


def encode_agent_step(vocab: Vocabulary, step: AgentStep) -> tuple[int, ...]:
    return encode_step(vocab, step.thought, step.action)


def history_blocks(vocab: Vocabulary, instruction, initial_obs, steps):
    prefix = (vocab.bos, vocab.instr) + tuple(instruction)
    blocks = [(vocab.obs,) + tuple(initial_obs)]
    for step in steps:
        blocks.append(encode_agent_step(vocab, step) + (vocab.obs,) + tuple(step.observation))
    return prefix, blocks


def encode_history(vocab: Vocabulary, instruction, initial_obs, steps,
                   limit: int) -> tuple[int, ...]:
    """Token sequence for (instruction, o1, a1, ..., ot), at most ``limit`` long."""
    prefix, blocks = history_blocks(vocab, instruction, initial_obs, steps)
    total = len(prefix) + sum(len(b) for b in blocks)
    drop = 0
    while total > limit and drop < len(blocks):
        total -= len(blocks[drop])
        drop += 1
    if total > limit:
        raise ValueError(f"history of {total} tokens exceeds the budget of {limit}")
    out = list(prefix)
    for b in blocks[drop:]:
        out.extend(b)
    return tuple(out)


def encode_trajectory_rows(vocab: Vocabulary, instruction, initial_obs, steps,
                           context: int):
    """Rows to evaluate every step's log-probability.

    Returns a list of ``(tokens, spans)`` where each span is
    ``(start, end, step_index)`` delimiting one step's emitted tokens within
    the row. When the fully serialized trajectory fits in the context
    window the result is a single fused row (each step's history is then
    literally the row prefix); otherwise one row per step is produced with
    the history truncated under the standard rule.
    """
    prefix, blocks = history_blocks(vocab, instruction, initial_obs, steps)
    encoded_steps = [encode_agent_step(vocab, s) for s in steps]
    # The fused row ends with the last step; the final observation is omitted.
    fused_len = len(prefix) + len(blocks[0]) + sum(len(b) for b in blocks[1:-1]) \
        + len(encoded_steps[-1])
    if fused_len <= context:
        tokens = list(prefix) + list(blocks[0])
        spans = []
        for idx, enc in enumerate(encoded_steps):
            start = len(tokens)
            tokens.extend(enc)
            spans.append((start, len(tokens), idx))
            if idx < len(encoded_steps) - 1:
                tokens.extend((vocab.obs,) + tuple(steps[idx].observation))
        return [(tuple(tokens), spans)]
    rows = []
    for idx, enc in enumerate(encoded_steps):
        hist = encode_history(vocab, instruction, initial_obs, steps[:idx],
                              limit=context - len(enc))
        rows.append((hist + enc, [(len(hist), len(hist) + len(enc), idx)]))
    return rows


def parse_step_tokens(vocab: Vocabulary, tokens) -> tuple[tuple[int, ...], EnvAction, bool]:
    """Split emitted step tokens into (thought, action, parsed_ok).

    Unparseable action segments map to the designated no-op so that the
    episode can continue; the caller records ``legal=False`` for those.
    """
    toks = list(tokens)
    if toks and toks[-1] == vocab.eos:
        toks = toks[:-1]
    if vocab.eot not in toks:
        return tuple(toks), NOOP, False
    cut = toks.index(vocab.eot)
    thought = tuple(toks[:cut])
    seg = toks[cut + 1:]
    if not seg:
        return thought, NOOP, False
    verb = vocab.word(seg[0]) if 0 <= seg[0] < len(vocab.symbols) else ""
    arity = ACTION_ARITY.get(verb)
    if arity is None or len(seg) - 1 != arity:
        return thought, NOOP, False
    return thought, EnvAction(verb, tuple(seg[1:])), True
