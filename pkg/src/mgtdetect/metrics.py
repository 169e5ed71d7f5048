"""Binary classification metrics for detector evaluation.

All metrics treat the machine class as positive and expect scores oriented so
that higher means machine.  AUROC is computed two independent ways (pairwise
Mann-Whitney counting and ROC sweep integration); both accumulate an exact
integer numerator over the same denominator, so they agree bit-for-bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class SingleClass(ValueError):
    """Metric needs both classes present."""


class Saturated(ValueError):
    """Improvement is undefined for a baseline at or above 1.0."""


class Label(enum.Enum):
    HUMAN = "Human"
    MACHINE = "Machine"


@dataclass(frozen=True)
class ScoredLabelSet:
    """Scores with labels, higher score = more machine-like."""

    scores: np.ndarray
    labels: np.ndarray  # bool, True = machine

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels, dtype=bool)
        if s.shape != y.shape or s.ndim != 1:
            raise ValueError("scores and labels must be parallel 1-d arrays")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_scores(cls, machine, human) -> "ScoredLabelSet":
        m = np.asarray(machine, dtype=np.float64)
        h = np.asarray(human, dtype=np.float64)
        return cls(
            scores=np.concatenate([m, h]),
            labels=np.concatenate([np.ones(len(m), bool), np.zeros(len(h), bool)]),
        )

    @property
    def machine_scores(self) -> np.ndarray:
        return self.scores[self.labels]

    @property
    def human_scores(self) -> np.ndarray:
        return self.scores[~self.labels]

    def require_both_classes(self):
        if not self.labels.any() or self.labels.all():
            raise SingleClass("need at least one machine and one human entry")


def auroc(sls: ScoredLabelSet) -> float:
    """Mann-Whitney pair statistic with half credit for ties.

    Equals ``(#{(m,h): s_m > s_h} + 0.5 * #ties) / (n_m * n_h)``; the
    numerator is accumulated in exact integers.
    """
    sls.require_both_classes()
    m = np.sort(sls.machine_scores)
    h = np.sort(sls.human_scores)
    # For each machine score: #human strictly below, #human equal.
    lo = np.searchsorted(h, m, side="left")
    hi = np.searchsorted(h, m, side="right")
    numerator2 = 2 * int(lo.sum()) + int((hi - lo).sum())
    return numerator2 / (2 * len(m) * len(h))


def _sweep_blocks(sls: ScoredLabelSet):
    """Cumulative (tp, fp) after each distinct score block, descending."""
    order = np.argsort(-sls.scores, kind="stable")
    scores = sls.scores[order]
    labels = sls.labels[order]
    blocks = []
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j < n and scores[j] == scores[i]:
            j += 1
        tp += int(labels[i:j].sum())
        fp += int((~labels[i:j]).sum())
        blocks.append((tp, fp))
        i = j
    return blocks


def auroc_sweep(sls: ScoredLabelSet) -> float:
    """AUROC via trapezoidal ROC integration over the threshold sweep.

    Ties are processed as blocks; the integer trapezoid numerator equals the
    pairwise count of :func:`auroc` exactly.
    """
    sls.require_both_classes()
    n_m = int(sls.labels.sum())
    n_h = len(sls.labels) - n_m
    area2 = 0
    prev_tp = prev_fp = 0
    for tp, fp in _sweep_blocks(sls):
        area2 += (fp - prev_fp) * (tp + prev_tp)
        prev_tp, prev_fp = tp, fp
    return area2 / (2 * n_m * n_h)


def aupr(sls: ScoredLabelSet) -> float:
    """Area under the precision-recall curve over the descending-score sweep.

    Tie blocks yield one (recall, precision) point each; the area is the
    trapezoid sum between consecutive points, with the segment before the
    first point carried at the first point's precision.  A set with every
    score equal therefore scores the positive prevalence.
    """
    sls.require_both_classes()
    n_m = int(sls.labels.sum())
    area = 0.0
    prev_r = 0.0
    prev_p = None
    for tp, fp in _sweep_blocks(sls):
        r = tp / n_m
        p = tp / (tp + fp)
        if prev_p is None:
            area += r * p
        else:
            area += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return area


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int


def confusion_at(sls: ScoredLabelSet, threshold: float) -> ConfusionCounts:
    """Confusion matrix with ``score >= threshold`` predicting machine."""
    pred = sls.scores >= threshold
    y = sls.labels
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & y)),
        tn=int(np.count_nonzero(~pred & ~y)),
        fp=int(np.count_nonzero(pred & ~y)),
        fn=int(np.count_nonzero(~pred & y)),
    )


def _balanced_accuracy_at(sls: ScoredLabelSet, threshold: float) -> float:
    c = confusion_at(sls, threshold)
    tpr = c.tp / (c.tp + c.fn)
    tnr = c.tn / (c.tn + c.fp)
    return (tpr + tnr) / 2.0


def best_balanced_threshold(sls: ScoredLabelSet) -> float:
    """Balanced-accuracy-maximizing threshold over observed scores plus +inf.

    Ties prefer the larger threshold (fewer machine predictions).  This is
    the default thresholding rule for :func:`mcc` and
    :func:`balanced_accuracy`.
    """
    sls.require_both_classes()
    best_t = math.inf
    best_ba = _balanced_accuracy_at(sls, math.inf)
    for t in np.unique(sls.scores)[::-1]:
        ba = _balanced_accuracy_at(sls, float(t))
        if ba > best_ba:
            best_ba = ba
            best_t = float(t)
    return best_t


def mcc(sls: ScoredLabelSet, threshold: float | None = None) -> float:
    """Matthews correlation at the threshold (0 when any factor vanishes)."""
    sls.require_both_classes()
    if threshold is None:
        threshold = best_balanced_threshold(sls)
    c = confusion_at(sls, threshold)
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


def balanced_accuracy(sls: ScoredLabelSet, threshold: float | None = None) -> float:
    """Arithmetic mean of the true positive and true negative rates."""
    sls.require_both_classes()
    if threshold is None:
        threshold = best_balanced_threshold(sls)
    return _balanced_accuracy_at(sls, threshold)


def tpr_at_fpr(sls: ScoredLabelSet, fpr_cap: float = 0.05) -> float:
    """True positive rate at the strictest usable operating point.

    The threshold is the smallest observed score value whose false positive
    rate stays within ``fpr_cap`` (falling back to +inf, i.e. TPR 0, when no
    observed value qualifies).
    """
    sls.require_both_classes()
    h = np.sort(sls.human_scores)
    m = np.sort(sls.machine_scores)
    n_h = len(h)
    for t in np.unique(sls.scores):
        fpr = (n_h - np.searchsorted(h, t, side="left")) / n_h
        if fpr <= fpr_cap:
            return float((len(m) - np.searchsorted(m, t, side="left")) / len(m))
    return 0.0


def improvement(new: float, old: float) -> float:
    """Relative headroom improvement ``(new - old) / (1 - old)``."""
    if old >= 1.0:
        raise Saturated(f"baseline {old} leaves no headroom")
    return (new - old) / (1.0 - old)
