"""Shared token vocabulary.

Every token that flows through the system (instructions, observations,
thoughts, actions, sentinels) is an index into one fixed, ordered symbol
table. The table is frozen at build time so that token ids are stable
across processes and platforms; unused tail slots are filled with reserved
symbols to keep the size at exactly ``VOCAB_SIZE``.
"""

from __future__ import annotations

VOCAB_SIZE = 256

# Sentinels and role delimiters. BOS opens every encoded sequence, EOT
# separates a thought from its action, EOS terminates an agent step.
_SENTINELS = ["<pad>", "<bos>", "<eot>", "<eos>", "<instr>", "<obs>"]

_WORDS = [
    # shared / grid-world words
    "go", "to", "the", "goal", "here", "at",
    "north", "south", "east", "west",
    "wall", "open", "blocked", "reached", "lost",
    "i", "see", "will", "move", "grid", "agent", "near", "far",
    "step", "path", "plan", "think", "let", "me",
    # filler words used by verbose thought styles
    "indeed", "truly", "yes", "ok", "now", "then", "just",
    "quickly", "carefully", "really", "very", "so",
    # shop words
    "shop", "item", "items", "cart", "match", "result", "results",
    "empty", "found", "none", "query", "looking", "for", "want",
    "that", "fits", "this", "one", "option", "price", "buying",
    # action verbs
    "noop", "search", "add", "buy",
]

_DIGITS = [str(n) for n in range(16)]

# Shop attribute palette: four slots, six values each.
ATTRIBUTE_SLOTS = (
    ("red", "blue", "green", "black", "white", "amber"),
    ("small", "medium", "large", "mini", "giant", "tall"),
    ("mug", "lamp", "chair", "desk", "clock", "vase"),
    ("acme", "zenco", "orbit", "lumo", "nexa", "pico"),
)


def _build_symbols() -> tuple[str, ...]:
    symbols = list(_SENTINELS) + list(_WORDS) + list(_DIGITS)
    for slot in ATTRIBUTE_SLOTS:
        symbols.extend(slot)
    if len(symbols) > VOCAB_SIZE:
        raise RuntimeError(f"vocabulary overflow: {len(symbols)} > {VOCAB_SIZE}")
    symbols.extend(f"<reserved{n}>" for n in range(VOCAB_SIZE - len(symbols)))
    return tuple(symbols)


class Vocabulary:
    """Fixed, ordered symbol table with stable index assignment."""

    def __init__(self) -> None:
        self.symbols = _build_symbols()
        self._ids = {sym: i for i, sym in enumerate(self.symbols)}
        if len(self._ids) != len(self.symbols):
            raise RuntimeError("duplicate symbols in vocabulary")
        self.pad = self._ids["<pad>"]
        self.bos = self._ids["<bos>"]
        self.eot = self._ids["<eot>"]
        self.eos = self._ids["<eos>"]
        self.instr = self._ids["<instr>"]
        self.obs = self._ids["<obs>"]

    def __len__(self) -> int:
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        return self._ids[symbol]

    def ids(self, *symbols: str) -> tuple[int, ...]:
        return tuple(self._ids[s] for s in symbols)

    def word(self, token_id: int) -> str:
        return self.symbols[token_id]

    def words(self, token_ids) -> list[str]:
        return [self.symbols[t] for t in token_ids]

    def contains_ids(self, token_ids) -> bool:
        n = len(self.symbols)
        return all(0 <= t < n for t in token_ids)


_DEFAULT: Vocabulary | None = None


def default_vocab() -> Vocabulary:
    """The shared 256-symbol vocabulary (built once, cached)."""
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Vocabulary()
    return _DEFAULT
