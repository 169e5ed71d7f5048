"""Zero-shot baseline detectors computable from a log-prob matrix alone.

Each baseline reports its score orientation so downstream metrics know which
direction means "machine".  The orientations are declared conventions:

    likelihood     higher is machine (machine text picks likely tokens)
    log_rank       lower is machine (machine tokens sit at low ranks)
    entropy_score  lower is machine
    lrr            higher is machine
    fast_detect    higher is machine (delegates to the analytic discrepancy)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .discrepancy import ANALYTIC, conditional_discrepancy
from .logprob import LogProbMatrix, TokenSequence, position_stats, row_entropy

# Guards the all-rank-1 denominator in the likelihood / log-rank ratio.
EPSILON_RANK = 1e-6


class Orientation(enum.Enum):
    HIGHER_IS_MACHINE = "HigherIsMachine"
    LOWER_IS_MACHINE = "LowerIsMachine"


class Method(enum.Enum):
    LIKELIHOOD = "likelihood"
    LOG_RANK = "logrank"
    ENTROPY = "entropy"
    LRR = "lrr"
    FAST_DETECT = "fastdetect"


ORIENTATIONS: dict[Method, Orientation] = {
    Method.LIKELIHOOD: Orientation.HIGHER_IS_MACHINE,
    Method.LOG_RANK: Orientation.LOWER_IS_MACHINE,
    Method.ENTROPY: Orientation.LOWER_IS_MACHINE,
    Method.LRR: Orientation.HIGHER_IS_MACHINE,
    Method.FAST_DETECT: Orientation.HIGHER_IS_MACHINE,
}


@dataclass(frozen=True)
class BaselineScore:
    method: Method
    value: float
    orientation: Orientation

    def machine_oriented(self) -> float:
        """The score flipped, if needed, so that higher always means machine."""
        if self.orientation is Orientation.HIGHER_IS_MACHINE:
            return self.value
        return -self.value


def likelihood(matrix: LogProbMatrix, seq: TokenSequence) -> BaselineScore:
    """Mean observed log-probability."""
    stats = position_stats(matrix, seq)
    value = sum(ps.observed_logprob for ps in stats) / len(stats)
    return BaselineScore(Method.LIKELIHOOD, value, ORIENTATIONS[Method.LIKELIHOOD])


def log_rank(matrix: LogProbMatrix, seq: TokenSequence) -> BaselineScore:
    """Mean log of the observed token's 1-based rank."""
    stats = position_stats(matrix, seq)
    value = sum(math.log(ps.rank) for ps in stats) / len(stats)
    return BaselineScore(Method.LOG_RANK, value, ORIENTATIONS[Method.LOG_RANK])


def entropy_score(matrix: LogProbMatrix) -> BaselineScore:
    """Mean per-position Shannon entropy (nats)."""
    value = sum(row_entropy(r) for r in matrix.rows) / len(matrix)
    return BaselineScore(Method.ENTROPY, value, ORIENTATIONS[Method.ENTROPY])


def lrr(matrix: LogProbMatrix, seq: TokenSequence) -> BaselineScore:
    """Likelihood / log-rank ratio: ``-likelihood / max(log_rank, eps)``."""
    lk = likelihood(matrix, seq).value
    lr = log_rank(matrix, seq).value
    value = -lk / max(lr, EPSILON_RANK)
    return BaselineScore(Method.LRR, value, ORIENTATIONS[Method.LRR])


def fast_detect(matrix: LogProbMatrix, seq: TokenSequence) -> BaselineScore:
    """The analytic conditional discrepancy, exposed as a baseline."""
    score = conditional_discrepancy(matrix, seq, ANALYTIC)
    return BaselineScore(Method.FAST_DETECT, score.d_c, ORIENTATIONS[Method.FAST_DETECT])
