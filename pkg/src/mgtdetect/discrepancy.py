"""Conditional probability discrepancy scoring.

The detection statistic is the normalized gap between a text's log-likelihood
under the scoring model and the expected log-likelihood of variants re-sampled
position-independently from the same per-position distributions:

    d = (log f(x|x) - mu) / sigma

with ``mu`` and ``sigma`` the mean and standard deviation of the re-sampled
sequence log-likelihood.  Higher ``d`` means the observed tokens sit further
above the model's own expectation, i.e. more machine-like.

Both estimators of the moments are provided: a Monte-Carlo one that actually
draws ``n`` re-samples, and a closed-form one exploiting independence across
positions (per-position mean ``m_i = sum_t p_t ln p_t`` and variance
``v_i = sum_t p_t (ln p_t)^2 - m_i^2``, so ``mu = sum m_i`` and
``sigma^2 = sum v_i``).  The Monte-Carlo path exists to validate the analytic
one and to mirror the sampling formulation; the analytic path is exact and is
the default.

Re-sampling the whole batch needs the per-position distributions only once,
so scoring cost is linear in the sequence length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .logprob import (
    DenseRow,
    LogProbMatrix,
    TokenSequence,
    TopKRow,
    position_stats,
)

# Below this sigma the normalized discrepancy is undefined; we return the
# neutral score 0 instead of dividing.
EPSILON_SIGMA = 1e-8


class EmptyDraw(ValueError):
    """Monte-Carlo moments were requested for a draw with zero samples."""


@dataclass(frozen=True)
class Analytic:
    """Closed-form moments (exact, default)."""


@dataclass(frozen=True)
class MonteCarlo:
    """Moments estimated from ``n`` seeded re-samples."""

    n: int = 10000
    seed: int = 0


Mode = Analytic | MonteCarlo

ANALYTIC = Analytic()


@dataclass(frozen=True)
class DiscrepancyScore:
    d_c: float
    log_prob_observed: float
    mu: float
    sigma: float
    mode: Mode


@dataclass(frozen=True)
class ResampleDraw:
    """``n`` sequences drawn position-independently from the matrix rows.

    For top-k rows a tail draw is materialized as the smallest token id not
    among the retained entries, so that scoring the sample through
    ``position_stats`` attributes exactly the tail pseudo-outcome log-prob
    ``ln(tail_mass / tail_count)``.
    """

    tokens: np.ndarray  # shape (n, s), int64
    seed: int

    @property
    def n(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def length(self) -> int:
        return int(self.tokens.shape[1])

    def sequences(self) -> list[TokenSequence]:
        return [TokenSequence(tuple(row)) for row in self.tokens]


def observed_logprob_sum(matrix: LogProbMatrix, seq: TokenSequence) -> float:
    """Sequence log-likelihood: sum of per-position observed log-probs."""
    return float(sum(ps.observed_logprob for ps in position_stats(matrix, seq)))


def _row_outcomes(row: DenseRow | TopKRow, v: int) -> tuple[np.ndarray, np.ndarray]:
    """Token ids and probabilities of every outcome of a row.

    Top-k tails collapse to one outcome carrying the whole tail mass, mapped
    to the smallest token id absent from the retained entries.
    """
    if isinstance(row, DenseRow):
        ids = np.arange(v, dtype=np.int64)
        return ids, np.exp(row.logprobs)
    probs = np.exp(row.logprobs)
    if row.tail_mass > 0.0:
        retained = set(int(t) for t in row.token_ids)
        if len(retained) >= v:
            raise ValueError("top-k row retains every token yet has tail mass")
        tail_id = next(t for t in range(v) if t not in retained)
        ids = np.concatenate([row.token_ids, [tail_id]])
        probs = np.concatenate([probs, [row.tail_mass]])
        return ids, probs
    return row.token_ids.copy(), probs


def resample(matrix: LogProbMatrix, n: int, seed: int = 0) -> ResampleDraw:
    """Draw ``n`` sequences, each position independently from its row.

    Deterministic given ``seed``; uses inverse-CDF draws from one PCG64
    stream consumed row by row.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    s = len(matrix)
    out = np.empty((n, s), dtype=np.int64)
    for i, row in enumerate(matrix.rows):
        ids, probs = _row_outcomes(row, matrix.vocab_size)
        cdf = np.cumsum(probs)
        cdf[-1] = max(cdf[-1], 1.0)  # guard roundoff at the top of the CDF
        idx = np.searchsorted(cdf, rng.random(n), side="right")
        out[:, i] = ids[np.minimum(idx, len(ids) - 1)]
    out.flags.writeable = False
    return ResampleDraw(tokens=out, seed=seed)


def _row_logprob_lookup(row: DenseRow | TopKRow, v: int) -> np.ndarray:
    """Dense (v,) lookup of the log-prob each token id is attributed."""
    if isinstance(row, DenseRow):
        return row.logprobs
    table = np.full(v, row.tail_logprob(), dtype=np.float64)
    table[row.token_ids] = row.logprobs
    return table


def sample_logprob_sums(matrix: LogProbMatrix, draw: ResampleDraw) -> np.ndarray:
    """Per-sample sequence log-likelihoods, equal to ``observed_logprob_sum``
    applied to each sample."""
    if draw.length != len(matrix):
        raise ValueError("draw length does not match matrix")
    total = np.zeros(draw.n, dtype=np.float64)
    for i, row in enumerate(matrix.rows):
        total += _row_logprob_lookup(row, matrix.vocab_size)[draw.tokens[:, i]]
    return total


def mc_moments(matrix: LogProbMatrix, draw: ResampleDraw) -> tuple[float, float]:
    """Sample mean and population (1/n) standard deviation of the re-sampled
    sequence log-likelihood."""
    if draw.n == 0:
        raise EmptyDraw("draw holds no samples")
    sums = sample_logprob_sums(matrix, draw)
    mu = float(np.mean(sums))
    sigma = float(np.sqrt(np.mean((sums - mu) ** 2)))
    return mu, sigma


def _row_moments(row: DenseRow | TopKRow) -> tuple[float, float]:
    """Per-position mean and variance of the outcome log-probability.

    Uses the shifted form ``sum p*(lp - m)^2`` so constant rows get an
    exactly (to roundoff) zero variance instead of a catastrophic
    cancellation residual.
    """
    if isinstance(row, DenseRow):
        p = np.exp(row.logprobs)
        nz = p > 0.0
        lp = row.logprobs[nz]
        p = p[nz]
        m = float(np.dot(p, lp))
        var = float(np.dot(p, (lp - m) ** 2))
    else:
        p = np.exp(row.logprobs)
        m = float(np.dot(p, row.logprobs))
        tl = row.tail_logprob() if row.tail_mass > 0.0 else 0.0
        if row.tail_mass > 0.0:
            m += row.tail_mass * tl
        var = float(np.dot(p, (row.logprobs - m) ** 2))
        if row.tail_mass > 0.0:
            var += row.tail_mass * (tl - m) ** 2
    return m, var


def analytic_moments(matrix: LogProbMatrix) -> tuple[float, float]:
    """Exact moments of the re-sampled sequence log-likelihood.

    Positions are independent, so means and variances add.
    """
    mu = 0.0
    var = 0.0
    for row in matrix.rows:
        m, w = _row_moments(row)
        mu += m
        var += w
    return mu, math.sqrt(var)


def conditional_discrepancy(
    matrix: LogProbMatrix, seq: TokenSequence, mode: Mode = ANALYTIC
) -> DiscrepancyScore:
    """The normalized discrepancy ``(log f(x|x) - mu) / sigma``.

    ``sigma`` below :data:`EPSILON_SIGMA` makes the ratio undefined; the
    score degenerates to 0 (the indistinguishable-neutral value).
    """
    lp = observed_logprob_sum(matrix, seq)
    if isinstance(mode, MonteCarlo):
        draw = resample(matrix, mode.n, mode.seed)
        mu, sigma = mc_moments(matrix, draw)
    else:
        mu, sigma = analytic_moments(matrix)
    if sigma < EPSILON_SIGMA:
        d = 0.0
    else:
        d = (lp - mu) / sigma
    return DiscrepancyScore(d_c=d, log_prob_observed=lp, mu=mu, sigma=sigma, mode=mode)
