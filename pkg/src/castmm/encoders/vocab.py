"""Word-level vocabulary and tokenizer with fixed special ids."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

CLS, PAD, MASK, UNK = 0, 1, 2, 3
SPECIALS = ("[CLS]", "[PAD]", "[MASK]", "[UNK]")
MAX_LEN = 512

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def word_tokens(text: str) -> list[str]:
    """Split on whitespace; punctuation characters become their own tokens."""
    return _TOKEN_RE.findall(text)


@dataclass
class Vocab:
    token_to_id: dict[str, int]
    min_freq: int = 2

    def __post_init__(self):
        for i, s in enumerate(SPECIALS):
            if self.token_to_id.get(s) != i:
                raise ValueError(f"special {s} must have id {i}")
        if len(set(self.token_to_id.values())) != len(self.token_to_id):
            raise ValueError("duplicate token ids")
        self._inv = {i: t for t, i in self.token_to_id.items()}

    def __len__(self):
        return len(self.token_to_id)

    def __contains__(self, token):
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._inv[int(idx)]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for tok, i in sorted(self.token_to_id.items(), key=lambda kv: kv[1]):
                if i >= len(SPECIALS):
                    fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path, min_freq: int = 2) -> "Vocab":
        table = {s: i for i, s in enumerate(SPECIALS)}
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    tok, i = line.rstrip("\n").split("\t")
                    table[tok] = int(i)
        return cls(table, min_freq)


def build_vocab(texts: Iterable[str], min_freq: int = 2) -> Vocab:
    """Tokens with count >= min_freq, ordered by (count desc, token asc)."""
    counts = Counter()
    n = 0
    for t in texts:
        counts.update(word_tokens(t))
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((tok for tok, c in counts.items() if c >= min_freq and tok not in SPECIALS),
                  key=lambda tok: (-counts[tok], tok))
    table = {s: i for i, s in enumerate(SPECIALS)}
    for tok in kept:
        table[tok] = len(table)
    return Vocab(table, min_freq)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    attention_allowed: np.ndarray = field(default=None)

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 1 or len(ids) < 1 or ids[0] != CLS:
            raise ValueError("token sequence must start with [CLS]")
        if len(ids) > MAX_LEN:
            raise ValueError(f"token sequence longer than {MAX_LEN}")
        allowed = ids != PAD if self.attention_allowed is None else np.asarray(self.attention_allowed, bool)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "attention_allowed", allowed)

    def __len__(self):
        return len(self.ids)

    def padded(self, length: int) -> "TokenSequence":
        if length < len(self):
            raise ValueError("cannot pad to a shorter length")
        ids = np.concatenate([self.ids, np.full(length - len(self), PAD, dtype=np.int64)])
        return TokenSequence(ids)


def tokenize(text: str, vocab: Vocab, max_len: int = MAX_LEN) -> TokenSequence:
    ids = [CLS] + [vocab.id(t) for t in word_tokens(text)]
    return TokenSequence(np.array(ids[:max_len], dtype=np.int64))
