"""Caption vocabulary, tokenizer, and the bidirectional LSTM text encoder."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError
from .nn import BiLSTM, Embedding, Module
from .tensor import Tensor

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")
MAX_LEN = 16


class Vocab:
    """Token <-> id map. Ids 0..3 are PAD, UNK, BOS, EOS."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        if len(set(tokens)) != len(tokens):
            raise ContractError("vocabulary tokens must be unique")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_words(cls, words) -> "Vocab":
        return cls(list(SPECIALS) + sorted(set(words)))

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.itos)

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def tokenize(caption: str, vocab: Vocab, max_len: int = MAX_LEN) -> np.ndarray:
    """Lowercase, split on whitespace, wrap in BOS/EOS, truncate/pad to ``max_len``."""
    words = caption.lower().split()
    if not words:
        raise ContractError("cannot tokenize an empty caption")
    ids = [BOS] + [vocab.id(w) for w in words[: max_len - 2]] + [EOS]
    return np.array(ids + [PAD] * (max_len - len(ids)), dtype=np.int64)


def tokenize_batch(captions: Sequence[str], vocab: Vocab, max_len: int = MAX_LEN) -> np.ndarray:
    return np.stack([tokenize(c, vocab, max_len) for c in captions])


class TextFeatures(NamedTuple):
    words: Tensor  # (N, L, D_w), PAD rows zero
    sentence: Tensor  # (N, D_s)
    mask: np.ndarray  # (N, L) bool, True on real tokens


class TextEncoder(Module):
    """Embedding -> single-layer bi-LSTM. Word feature i is [fwd_i, bwd_i];
    the sentence vector is [last fwd state, last bwd state]."""

    def __init__(self, vocab_size: int, rng: np.random.Generator, emb_dim: int = 64, hidden: int = 128,
                 max_len: int = MAX_LEN):
        self.max_len = max_len
        self.dim = 2 * hidden
        self.embed = Embedding(vocab_size, emb_dim, rng)
        self.lstm = BiLSTM(emb_dim, hidden, rng)

    def forward(self, tokens) -> TextFeatures:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None]
        if tokens.shape[1] > self.max_len:
            raise ContractError(f"token sequence length {tokens.shape[1]} exceeds max {self.max_len}")
        mask = tokens != PAD
        x = self.embed(tokens)
        words, sentence = self.lstm(x, mask)
        words = words * Tensor(mask[..., None].astype(words.dtype))
        return TextFeatures(words, sentence, mask)
