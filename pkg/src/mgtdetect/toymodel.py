"""Tabular context-conditioned scoring model for desk-scale training.

The model maps each context (the previous ``order`` token ids, left-padded at
the sequence start with a dedicated pad symbol) to a row of ``vocab`` logits;
the predictive distribution per context is the softmax of that row.  Being a
plain table it admits exact closed-form gradients, which is the whole point:
the optimization math can be verified against finite differences without any
tensor framework.

Contexts are flattened to a single table index in base ``vocab + 1`` (pad is
the extra symbol).  Serialization is a little-endian binary table: magic
``TSM1``, order as u16, vocab as u32, then the logits as float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .logprob import LogProbMatrix, TokenSequence

MODEL_MAGIC = b"TSM1"


def n_contexts(order: int, vocab: int) -> int:
    return (vocab + 1) ** order


@dataclass
class ToyScoringModel:
    """Context->logits table; ``order`` previous tokens condition each row."""

    order: int
    vocab: int
    logits: np.ndarray  # shape (n_contexts, vocab), float64

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.vocab < 2:
            raise ValueError("vocab must be >= 2")
        want = (n_contexts(self.order, self.vocab), self.vocab)
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.shape != want:
            raise ValueError(f"logits shape {self.logits.shape}, expected {want}")
        if not np.isfinite(self.logits).all():
            raise ValueError("logits must be finite")

    @property
    def pad_token(self) -> int:
        return self.vocab

    @classmethod
    def zeros(cls, order: int, vocab: int) -> "ToyScoringModel":
        return cls(order, vocab, np.zeros((n_contexts(order, vocab), vocab)))

    @classmethod
    def random(cls, order: int, vocab: int, scale: float = 0.1, seed: int = 0) -> "ToyScoringModel":
        rng = np.random.default_rng(seed)
        table = rng.normal(0.0, scale, size=(n_contexts(order, vocab), vocab))
        return cls(order, vocab, table)

    def copy(self) -> "ToyScoringModel":
        return ToyScoringModel(self.order, self.vocab, self.logits.copy())

    def context_indices(self, seq: TokenSequence) -> np.ndarray:
        """Table row index for every position of ``seq``."""
        return context_indices(self.order, self.vocab, seq.as_array())

    def log_rows(self, seq: TokenSequence) -> np.ndarray:
        """(s, vocab) log-softmax rows conditioning each position of ``seq``."""
        z = self.logits[self.context_indices(seq)]
        return z - _logsumexp(z)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return m + np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def context_indices(order: int, vocab: int, tokens: np.ndarray) -> np.ndarray:
    """Flatten each position's left-padded context window to a table index.

    The window at position i is (tokens[i-order], ..., tokens[i-1]) with the
    pad symbol filling slots before the sequence start; the index is the
    base-(vocab+1) value of that window, most recent token in the lowest
    digit.
    """
    s = len(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        raise ValueError("token id outside model vocabulary")
    idx = np.zeros(s, dtype=np.int64)
    base = 1
    for back in range(1, order + 1):
        digit = np.full(s, vocab, dtype=np.int64)  # pad
        if s > back:
            digit[back:] = tokens[:-back]
        idx += digit * base
        base *= vocab + 1
    return idx


def toy_logprob_matrix(model: ToyScoringModel, seq: TokenSequence) -> LogProbMatrix:
    """Dense per-position log-distributions of ``seq`` under the model."""
    return LogProbMatrix.from_dense(model.log_rows(seq))


def save_model(model: ToyScoringModel, path: str | Path) -> None:
    blob = MODEL_MAGIC + struct.pack("<HI", model.order, model.vocab)
    blob += model.logits.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_model(path: str | Path) -> ToyScoringModel:
    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC:
        raise ValueError(f"not a {MODEL_MAGIC.decode()} model file: {path}")
    order, vocab = struct.unpack("<HI", blob[4:10])
    table = np.frombuffer(blob[10:], dtype="<f8").reshape(n_contexts(order, vocab), vocab)
    return ToyScoringModel(order, vocab, table.copy())
