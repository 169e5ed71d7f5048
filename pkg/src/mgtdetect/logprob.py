"""Token sequences and per-position predictive log-distributions.

Everything downstream (discrepancy scoring, baselines, the wire protocol)
consumes the two types defined here: a ``TokenSequence`` of token ids and a
``LogProbMatrix`` holding one predictive distribution per position.  Rows are
either dense (all ``v`` log-probabilities) or top-k (the ``K`` largest entries
plus an aggregate tail).  All log-probabilities are natural logs.

The tail of a top-k row is modeled as ``tail_count`` equal-probability
pseudo-outcomes, each with log-probability ``ln(tail_mass / tail_count)``.
This keeps total mass exact and gives the tail finite entropy and moment
contributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Row probability mass must exp-sum to 1 within this tolerance.  Wide enough
# to absorb float32 transport error, tight enough to catch protocol bugs.
MASS_TOLERANCE = 1e-4


class LengthMismatch(ValueError):
    """Sequence length does not equal the matrix row count."""


class TokenOutOfRange(ValueError):
    """Token id is negative or >= the vocabulary size."""


@dataclass(frozen=True)
class TokenSequence:
    """An ordered sequence of token ids (non-negative ints)."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError("a token sequence holds at least one token")
        if any(t < 0 for t in self.tokens):
            raise TokenOutOfRange("token ids must be non-negative")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.tokens, dtype=np.int64)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DenseRow:
    """All ``v`` log-probabilities of one position."""

    logprobs: np.ndarray  # shape (v,), float64, natural log

    def __post_init__(self):
        object.__setattr__(
            self, "logprobs", _readonly(np.asarray(self.logprobs, dtype=np.float64))
        )
        if self.logprobs.ndim != 1:
            raise ValueError("dense row must be 1-d")


@dataclass(frozen=True)
class TopKRow:
    """The K largest entries of one position plus an aggregate tail.

    ``token_ids`` / ``logprobs`` are parallel arrays sorted by descending
    log-probability.  ``tail_mass`` is the probability not covered by the
    retained entries, spread over ``tail_count`` pseudo-outcomes.
    """

    token_ids: np.ndarray  # shape (K,), int64
    logprobs: np.ndarray  # shape (K,), float64
    tail_mass: float
    tail_count: int

    def __post_init__(self):
        object.__setattr__(
            self, "token_ids", _readonly(np.asarray(self.token_ids, dtype=np.int64))
        )
        object.__setattr__(
            self, "logprobs", _readonly(np.asarray(self.logprobs, dtype=np.float64))
        )
        object.__setattr__(self, "tail_mass", float(self.tail_mass))
        object.__setattr__(self, "tail_count", int(self.tail_count))
        if self.token_ids.shape != self.logprobs.shape or self.token_ids.ndim != 1:
            raise ValueError("token_ids and logprobs must be parallel 1-d arrays")

    def tail_logprob(self) -> float:
        """Log-probability of each of the ``tail_count`` tail pseudo-outcomes."""
        if self.tail_mass <= 0.0 or self.tail_count < 1:
            return -math.inf
        return math.log(self.tail_mass / self.tail_count)


Row = DenseRow | TopKRow


@dataclass(frozen=True)
class LogProbMatrix:
    """Per-position predictive log-distributions for an ``s``-token sequence."""

    rows: tuple[Row, ...]
    vocab_size: int

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "vocab_size", int(self.vocab_size))
        if len(self.rows) < 1:
            raise ValueError("matrix needs at least one row")
        if self.vocab_size < 1:
            raise ValueError("vocabulary size must be positive")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def num_positions(self) -> int:
        return len(self.rows)

    @classmethod
    def from_dense(cls, logprobs: np.ndarray) -> "LogProbMatrix":
        """Build an all-dense matrix from an (s, v) array of log-probs."""
        a = np.asarray(logprobs, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("expected an (s, v) array")
        return cls(rows=tuple(DenseRow(r) for r in a), vocab_size=a.shape[1])

    def is_dense(self) -> bool:
        return all(isinstance(r, DenseRow) for r in self.rows)

    def as_dense_array(self) -> np.ndarray:
        """Stack dense rows into an (s, v) array (fails on top-k rows)."""
        if not self.is_dense():
            raise ValueError("matrix contains top-k rows")
        return np.stack([r.logprobs for r in self.rows])


@dataclass(frozen=True)
class PositionStats:
    """Derived per-position quantities for one observed token."""

    observed_logprob: float
    rank: int  # 1-based; ties share the lower rank
    entropy: float  # nats


@dataclass(frozen=True)
class RowViolation:
    row: int
    reason: str


def _row_mass(row: Row) -> float:
    if isinstance(row, DenseRow):
        return float(np.sum(np.exp(row.logprobs)))
    return float(np.sum(np.exp(row.logprobs)) + max(row.tail_mass, 0.0))


def validate(matrix: LogProbMatrix) -> list[RowViolation]:
    """Report every invariant violation in ``matrix`` (empty list = valid)."""
    v = matrix.vocab_size
    out: list[RowViolation] = []
    for i, row in enumerate(matrix.rows):
        if isinstance(row, DenseRow):
            if row.logprobs.shape[0] != v:
                out.append(RowViolation(i, f"dense row has {row.logprobs.shape[0]} entries, expected {v}"))
                continue
            if np.isnan(row.logprobs).any():
                out.append(RowViolation(i, "NaN log-probability"))
                continue
        else:
            if np.isnan(row.logprobs).any() or math.isnan(row.tail_mass):
                out.append(RowViolation(i, "NaN log-probability"))
                continue
            if row.token_ids.size and (row.token_ids.min() < 0 or row.token_ids.max() >= v):
                out.append(RowViolation(i, "token id out of vocabulary range"))
            if np.unique(row.token_ids).size != row.token_ids.size:
                out.append(RowViolation(i, "duplicate token ids"))
            if row.logprobs.size > 1 and np.any(np.diff(row.logprobs) > 0):
                out.append(RowViolation(i, "entries not sorted by descending log-prob"))
            if row.tail_mass < 0:
                out.append(RowViolation(i, "negative tail mass"))
            if row.tail_mass > 0 and row.tail_count < 1:
                out.append(RowViolation(i, "positive tail mass with tail_count < 1"))
        mass = _row_mass(row)
        if not (1.0 - MASS_TOLERANCE <= mass <= 1.0 + MASS_TOLERANCE):
            kind = "deficit" if mass < 1.0 else "excess"
            out.append(RowViolation(i, f"mass {kind} at row {i}: exp-sum {mass:.6g}"))
    return out


def _dense_entropy(logprobs: np.ndarray) -> float:
    p = np.exp(logprobs)
    nz = p > 0.0
    return float(-np.sum(p[nz] * logprobs[nz]))


def _topk_entropy(row: TopKRow) -> float:
    h = _dense_entropy(row.logprobs)
    if row.tail_mass > 0.0:
        h -= row.tail_mass * row.tail_logprob()
    return h


def row_entropy(row: Row) -> float:
    """Shannon entropy of one row in nats (tail as equal-mass pseudo-outcomes)."""
    if isinstance(row, DenseRow):
        return _dense_entropy(row.logprobs)
    return _topk_entropy(row)


def _stats_for_row(row: Row, token: int, v: int) -> PositionStats:
    if token < 0 or token >= v:
        raise TokenOutOfRange(f"token id {token} outside vocabulary of size {v}")
    if isinstance(row, DenseRow):
        lp = float(row.logprobs[token])
        rank = 1 + int(np.count_nonzero(row.logprobs > lp))
        return PositionStats(lp, rank, _dense_entropy(row.logprobs))

    entropy = _topk_entropy(row)
    hits = np.nonzero(row.token_ids == token)[0]
    tail_lp = row.tail_logprob()
    if hits.size == 0:
        # Absent token: attributed the tail pseudo-outcome.  All tail
        # outcomes receive rank K+1 by convention.
        return PositionStats(tail_lp, row.token_ids.size + 1, entropy)
    lp = float(row.logprobs[hits[0]])
    rank = 1 + int(np.count_nonzero(row.logprobs > lp))
    if tail_lp > lp:
        rank += row.tail_count
    return PositionStats(lp, rank, entropy)


def position_stats(matrix: LogProbMatrix, seq: TokenSequence) -> list[PositionStats]:
    """Observed log-prob, rank, and entropy at every position.

    Pure and deterministic.  Raises :class:`LengthMismatch` if the sequence
    length differs from the row count, :class:`TokenOutOfRange` for token ids
    outside the vocabulary.
    """
    if len(seq) != len(matrix):
        raise LengthMismatch(
            f"sequence of length {len(seq)} against {len(matrix)} matrix rows"
        )
    return [
        _stats_for_row(row, tok, matrix.vocab_size)
        for row, tok in zip(matrix.rows, seq.tokens)
    ]


def topk_project(row: DenseRow, k: int) -> TopKRow:
    """Keep the ``k`` most probable entries, aggregate the rest into the tail.

    Ties at the cut are broken by lower token id first (argsort stability on
    the negated array).  The projected row preserves total mass exactly.
    """
    v = row.logprobs.shape[0]
    k = min(int(k), v)
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.argsort(-row.logprobs, kind="stable")
    keep = order[:k]
    tail_ids = order[k:]
    tail_mass = float(np.sum(np.exp(row.logprobs[tail_ids]))) if tail_ids.size else 0.0
    return TopKRow(
        token_ids=keep.astype(np.int64),
        logprobs=row.logprobs[keep],
        tail_mass=tail_mass,
        tail_count=max(int(v - k), 1),
    )
