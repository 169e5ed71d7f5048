"""Reference clustering: from a discrepancy value to a machine-probability.

Given labeled reference discrepancies (machine set and human set), the
estimator finds the k-th nearest reference to the query value, uses that
distance as an adaptive window, and returns the local machine/total count
ratio inside the window.

The window is closed: with ``delta`` the k-th order statistic of the absolute
differences, every reference at distance exactly ``delta`` is counted.  The
closed window always contains at least ``k >= 1`` points, so the ratio is
always defined.  (An open window could be empty whenever the k nearest
references all sit exactly at distance ``delta``.)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EmptyReference(ValueError):
    """A reference list is empty."""


class BadWindowOrder(ValueError):
    """k is outside [1, total reference count]."""


@dataclass(frozen=True)
class ReferenceSet:
    """Sorted labeled reference discrepancies plus the window order k."""

    d_machine: np.ndarray
    d_human: np.ndarray
    k: int

    @property
    def size(self) -> int:
        return len(self.d_machine) + len(self.d_human)


def default_window_order(total: int) -> int:
    """2% of the reference size, at least 1 (larger references earn larger k)."""
    return max(1, round(0.02 * total))


def build_reference(scores_machine, scores_human, k: int | None = None) -> ReferenceSet:
    """Validate and sort the reference scores.  Idempotent on re-build."""
    m = np.sort(np.asarray(scores_machine, dtype=np.float64))
    h = np.sort(np.asarray(scores_human, dtype=np.float64))
    if len(m) == 0 or len(h) == 0:
        raise EmptyReference("both reference lists must be nonempty")
    if not (np.isfinite(m).all() and np.isfinite(h).all()):
        raise ValueError("reference values must be finite")
    total = len(m) + len(h)
    if k is None:
        k = default_window_order(total)
    if not (1 <= k <= total):
        raise BadWindowOrder(f"k={k} outside [1, {total}]")
    m.flags.writeable = False
    h.flags.writeable = False
    return ReferenceSet(d_machine=m, d_human=h, k=int(k))


def estimate_pm(ref: ReferenceSet, d: float) -> float:
    """Probability that a text with discrepancy ``d`` is machine-generated.

    ``delta`` is the k-th smallest |reference - d| over the pooled references
    (1-based); counts include every reference with |reference - d| <= delta,
    the closed-window form of the interval [d - delta, d + delta].
    """
    if not np.isfinite(d):
        raise ValueError("query discrepancy must be finite")
    dist_m = np.abs(ref.d_machine - d)
    dist_h = np.abs(ref.d_human - d)
    pooled = np.concatenate([dist_m, dist_h])
    delta = np.partition(pooled, ref.k - 1)[ref.k - 1]
    cnt_m = int(np.count_nonzero(dist_m <= delta))
    cnt_h = int(np.count_nonzero(dist_h <= delta))
    return cnt_m / (cnt_m + cnt_h)


REFSET_FORMAT = "refset-v1"


def save_reference(ref: ReferenceSet, path: str | Path) -> None:
    payload = {
        "format": REFSET_FORMAT,
        "k": ref.k,
        "d_machine": [float(x) for x in ref.d_machine],
        "d_human": [float(x) for x in ref.d_human],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_reference(path: str | Path) -> ReferenceSet:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != REFSET_FORMAT:
        raise ValueError(f"not a {REFSET_FORMAT} file: {path}")
    return build_reference(payload["d_machine"], payload["d_human"], payload["k"])
