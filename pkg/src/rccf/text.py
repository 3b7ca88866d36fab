"""Tokenisation and the recurrent expression encoder."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rccf.core import functional as F
from rccf.core.tensor import Tensor, concat
from rccf.errors import EmptyExpressionError, ShapeError
from rccf.nn import Linear, Module, param

PAD, UNK = 0, 1
RESERVED = ("<pad>", "<unk>")

_WORD = re.compile(r"[a-z0-9]+")


def split_words(text: str) -> list:
    """Lowercase and split on whitespace and punctuation."""
    return _WORD.findall(text.lower())


class Vocabulary:
    """Dense token ids with ``PAD = 0`` and ``UNK = 1`` reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = list(RESERVED)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        words = sorted({w for text in texts for w in split_words(text)})
        return cls(words)

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def size(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def save(self, path) -> None:
        # line k holds the token with id k + len(RESERVED)
        Path(path).write_text("".join(tok + "\n" for tok in self.itos[len(RESERVED):]),
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple

    @property
    def length(self) -> int:
        return len(self.ids)


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    words = split_words(text)
    if not words:
        raise EmptyExpressionError(f"expression {text!r} has no tokens")
    return TokenSequence(tuple(vocab.id(w) for w in words))


def pad_batch(sequences: Sequence[TokenSequence]) -> np.ndarray:
    """Right-pad token sequences with PAD into an ``N x T`` int array."""
    longest = max(s.length for s in sequences)
    out = np.full((len(sequences), longest), PAD, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, :s.length] = s.ids
    return out


class RecurrentCell(Module):
    """Elman cell ``h' = tanh(W x + U h + b)``."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int):
        self.w_in = param(rng.normal(0.0, np.sqrt(1.0 / d_in), size=(d_hidden, d_in)))
        self.w_rec = param(rng.normal(0.0, np.sqrt(1.0 / d_hidden), size=(d_hidden, d_hidden)))
        self.bias = param(np.zeros(d_hidden))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return (F.linear(x, self.w_in, self.bias) + F.linear(h, self.w_rec)).tanh()


class ExpressionEncoder(Module):
    """Embedding, linear projection, then a bidirectional recurrent summary.

    The last hidden states of both directions are concatenated and projected
    to ``lang_dim``. With ``mode="bow"`` the recurrent pass is replaced by a
    mean over the projected embeddings.
    """

    def __init__(self, rng: np.random.Generator, vocab_size: int, embed_dim: int = 64,
                 lang_dim: int = 32, mode: str = "birnn"):
        if mode not in ("birnn", "bow"):
            raise ValueError(f"unknown encoder mode {mode!r}")
        self.mode = mode
        self.lang_dim = lang_dim
        self.embedding = param(rng.normal(0.0, 1.0, size=(vocab_size, embed_dim)))
        self.project = Linear(rng, embed_dim, lang_dim)
        self.forward_cell = RecurrentCell(rng, lang_dim, lang_dim)
        self.backward_cell = RecurrentCell(rng, lang_dim, lang_dim)
        self.output = Linear(rng, 2 * lang_dim, lang_dim)

    def __call__(self, ids) -> Tensor:
        """Encode ``N x T`` PAD-padded ids (or one TokenSequence) to ``N x lang_dim``."""
        if isinstance(ids, TokenSequence):
            return self(np.asarray([ids.ids], dtype=np.int64))[0]
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise ShapeError(f"expected an N x T id array, got shape {ids.shape}")
        if ids.max() >= self.embedding.shape[0] or ids.min() < 0:
            raise ShapeError("token id outside the vocabulary")
        x = self.project(F.embedding(self.embedding, ids))  # N x T x P
        mask = (ids != PAD).astype(np.float64)
        if self.mode == "bow":
            weights = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
            return (x * weights[:, :, None]).sum(axis=1)
        n, t = ids.shape
        h_f = Tensor(np.zeros((n, self.lang_dim)))
        h_b = Tensor(np.zeros((n, self.lang_dim)))
        for step in range(t):
            m = mask[:, step:step + 1]
            h_f = self.forward_cell(x[:, step], h_f) * m + h_f * (1.0 - m)
            back = t - 1 - step
            m = mask[:, back:back + 1]
            h_b = self.backward_cell(x[:, back], h_b) * m + h_b * (1.0 - m)
        return self.output(concat([h_f, h_b], axis=1))
