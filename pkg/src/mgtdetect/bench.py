"""Benchmark harness: record schema, cleaning, sampling, prompts, evaluation.

Records travel as JSON-lines (UTF-8, one self-describing object per line)
with field names matching :class:`BenchRecord`.  Cleaning follows the
benchmark construction rules: newlines are neutralized and texts are kept
only inside the stated word-count windows, where a word is a maximal run of
non-whitespace.  Newline characters are replaced by spaces rather than
deleted so that word boundaries (and hence counts) survive and cleaning is
idempotent.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as em
from .baselines import (
    Orientation,
    entropy_score,
    fast_detect,
    likelihood,
    log_rank,
    lrr,
)
from .discrepancy import MonteCarlo, conditional_discrepancy
from .logprob import LogProbMatrix, TokenSequence
from .metrics import Label, ScoredLabelSet
from .refcluster import ReferenceSet, estimate_pm


class PoolExhausted(ValueError):
    def __init__(self, domain: str, needed: int, available: int):
        self.domain = domain
        super().__init__(f"domain {domain}: need {needed} texts, pool holds {available}")


class BadTask(ValueError):
    pass


class RecordInvalid(ValueError):
    pass


class EvalAborted(RuntimeError):
    pass


class Task(enum.Enum):
    GENERATE = "Generate"
    POLISH = "Polish"
    REWRITE = "Rewrite"


class Domain(enum.Enum):
    ACADEMIC = "Academic"
    EMAIL = "Email"
    WEBSITE = "Website"
    NEWS = "News"
    COMMENT = "Comment"


class Scenario(enum.Enum):
    DIG = "DIG"
    SIG = "SIG"


# Per-model domain quota (sums to 1000).
DEFAULT_DOMAIN_QUOTA = {
    Domain.ACADEMIC: 300,
    Domain.EMAIL: 100,
    Domain.WEBSITE: 200,
    Domain.NEWS: 200,
    Domain.COMMENT: 200,
}

STYLES = (
    "formal", "oral", "academic", "literary", "critical", "narrative",
    "descriptive", "lyric", "objective", "subjective", "original",
    "casual", "expository", "argumentative", "journalistic", "poetic",
)

SYSTEM_PROMPT = (
    "You are a professional writing assistant who can write high-quality, "
    "coherent, and engaging articles. "
)

_TEMPLATES = {
    Task.GENERATE: "Write an article about 150 words in a {style} style starting exactly with: {original}",
    Task.POLISH: (
        "Polish the following text in a {style} style without missing any original details. "
        "Ensure that the length of the polished text is similar to the original text. "
        "Directly output your polished text. Here is the original text: {original}"
    ),
    Task.REWRITE: (
        "Paraphrase the following text in a {style} style without missing any original details. "
        "Ensure that the length of the paraphrased text is similar to the original text. "
        "Directly output your paraphrased text. Here is the original text: {original}"
    ),
}


# ---------------------------------------------------------------------------
# Records.


@dataclass
class BenchRecord:
    id: str
    text: str
    label: Label
    task: Task
    domain: Domain
    scenario: Scenario
    source_model: str = ""
    style: str | None = None
    pair_id: str | None = None
    token_ids: tuple[int, ...] | None = None
    scores: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        if self.label is Label.MACHINE and not self.source_model:
            raise RecordInvalid(f"record {self.id}: machine label needs a source_model")

    def sequence(self) -> TokenSequence | None:
        if self.token_ids is None:
            return None
        return TokenSequence(self.token_ids)

    def to_json(self) -> str:
        obj: dict = {
            "id": self.id,
            "text": self.text,
            "label": self.label.value,
            "task": self.task.value,
            "domain": self.domain.value,
            "scenario": self.scenario.value,
            "source_model": self.source_model,
        }
        if self.style is not None:
            obj["style"] = self.style
        if self.pair_id is not None:
            obj["pair_id"] = self.pair_id
        if self.token_ids is not None:
            obj["token_ids"] = list(self.token_ids)
        if self.scores:
            obj["scores"] = self.scores
        return json.dumps(obj, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "BenchRecord":
        try:
            obj = json.loads(line)
            return cls(
                id=str(obj["id"]),
                text=str(obj["text"]),
                label=Label(obj["label"]),
                task=Task(obj["task"]),
                domain=Domain(obj["domain"]),
                scenario=Scenario(obj["scenario"]),
                source_model=str(obj.get("source_model", "")),
                style=obj.get("style"),
                pair_id=obj.get("pair_id"),
                token_ids=tuple(obj["token_ids"]) if obj.get("token_ids") is not None else None,
                scores=obj.get("scores", {}),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, RecordInvalid):
                raise
            raise RecordInvalid(f"bad record line: {exc}") from exc


def read_records(path: str | Path) -> list[BenchRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(BenchRecord.from_json(line))
            except RecordInvalid as exc:
                raise RecordInvalid(f"{path}:{n}: {exc}") from exc
    return records


def write_records(records, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


# ---------------------------------------------------------------------------
# Cleaning.


@dataclass(frozen=True)
class CleanResult:
    accepted: bool
    text: str | None = None
    reason: str | None = None


def word_count(text: str) -> int:
    """Words = maximal nonempty runs of non-whitespace."""
    return len(text.split())


def _clean(text: str, strip_chars: str, lo: int, hi: int) -> CleanResult:
    for ch in strip_chars:
        text = text.replace(ch, " ")
    n = word_count(text)
    if n < lo:
        return CleanResult(False, None, f"word count {n} < {lo}")
    if n > hi:
        return CleanResult(False, None, f"word count {n} > {hi}")
    return CleanResult(True, text, None)


def pre_clean(text: str) -> CleanResult:
    """Source-text cleaning: neutralize newlines, keep 100-200 words."""
    return _clean(text, "\n", 100, 200)


def post_clean(text: str) -> CleanResult:
    """Generated-text cleaning: neutralize \\n and \\r, keep 90-220 words."""
    return _clean(text, "\n\r", 90, 220)


# ---------------------------------------------------------------------------
# DIG/SIG sampling, styles, prompts.


SIG_KEY = "SIG"


@dataclass(frozen=True)
class SampleAssignment:
    """Disjoint per-model text sets plus the shared set."""

    dig: dict[str, dict[Domain, list]]
    sig: dict[Domain, list]

    def all_sets(self) -> list[list]:
        out = [items for per in self.dig.values() for items in per.values()]
        out.extend(self.sig.values())
        return out


def dig_sig_sample(
    pools: dict[Domain, list],
    models: list[str],
    quota: dict[Domain, int] | None = None,
    seed: int = 0,
) -> SampleAssignment:
    """Draw disjoint per-model sets plus one shared set from domain pools.

    Every real model receives ``quota[domain]`` texts per domain; the shared
    set (treated as one more model, sampled last) receives the same.  Sampled
    items leave the pool, so all sets are pairwise disjoint.  Deterministic
    per seed.
    """
    quota = dict(quota or DEFAULT_DOMAIN_QUOTA)
    rng = np.random.default_rng(seed)
    remaining = {dom: list(items) for dom, items in pools.items()}
    for dom, need in quota.items():
        total = need * (len(models) + 1)
        have = len(remaining.get(dom, []))
        if have < total:
            raise PoolExhausted(dom.value, total, have)

    def take(dom: Domain, need: int) -> list:
        pool = remaining[dom]
        picked_idx = rng.choice(len(pool), size=need, replace=False)
        picked_idx = np.sort(picked_idx)[::-1]
        picked = [pool[i] for i in picked_idx]
        for i in picked_idx:
            pool.pop(int(i))
        return picked[::-1]

    dig = {m: {dom: take(dom, need) for dom, need in quota.items()} for m in models}
    sig = {dom: take(dom, need) for dom, need in quota.items()}
    return SampleAssignment(dig=dig, sig=sig)


def style_pick(seed: int, index: int) -> str:
    """Uniform deterministic style choice for draw ``index`` under ``seed``."""
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return STYLES[int.from_bytes(digest[:8], "little") % len(STYLES)]


def prompt_render(task: Task | str, style: str, original: str) -> str:
    """Instantiate the task's user-prompt template.

    ``original`` is the leading excerpt for the generation task and the full
    source text for the two revision tasks.
    """
    if isinstance(task, str):
        try:
            task = Task(task)
        except ValueError as exc:
            raise BadTask(f"unknown task {task!r}") from exc
    return _TEMPLATES[task].format(style=style, original=original)


# ---------------------------------------------------------------------------
# Evaluation.


DETECTOR_ORIENTATIONS = {
    "likelihood": Orientation.HIGHER_IS_MACHINE,
    "logrank": Orientation.LOWER_IS_MACHINE,
    "entropy": Orientation.LOWER_IS_MACHINE,
    "lrr": Orientation.HIGHER_IS_MACHINE,
    "fastdetect": Orientation.HIGHER_IS_MACHINE,
    "ddl": Orientation.HIGHER_IS_MACHINE,
}


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    n_samples: int | None = None  # None: analytic discrepancy
    baseline: str | None = None  # detector name for improvement rows
    reference: ReferenceSet | None = None  # map ddl scores to p_m
    fpr_cap: float = 0.05
    max_failure_fraction: float = 0.1


def score_record(
    method: str,
    matrix: LogProbMatrix,
    seq: TokenSequence,
    options: RunOptions | None = None,
) -> dict:
    """Score one record with one detector; returns the score entry dict."""
    options = options or RunOptions()
    if method == "likelihood":
        s = likelihood(matrix, seq)
    elif method == "logrank":
        s = log_rank(matrix, seq)
    elif method == "entropy":
        s = entropy_score(matrix)
    elif method == "lrr":
        s = lrr(matrix, seq)
    elif method == "fastdetect":
        s = fast_detect(matrix, seq)
    elif method == "ddl":
        if options.n_samples:
            mode = MonteCarlo(n=options.n_samples, seed=options.seed)
            d = conditional_discrepancy(matrix, seq, mode)
        else:
            d = conditional_discrepancy(matrix, seq)
        entry = {"value": d.d_c, "orientation": Orientation.HIGHER_IS_MACHINE.value}
        if options.reference is not None:
            entry["p_m"] = estimate_pm(options.reference, d.d_c)
        return entry
    else:
        raise ValueError(f"unknown detector {method!r}")
    return {"value": s.value, "orientation": s.orientation.value}


class MatrixSource:
    """Resolves a record to its (matrix, sequence); see concrete sources."""

    def matrix_for(self, record: BenchRecord) -> tuple[LogProbMatrix, TokenSequence]:
        raise NotImplementedError


class ToyModelSource(MatrixSource):
    """In-process backend over a toy scoring model."""

    def __init__(self, model):
        from .protocol import ToyBackend

        self.backend = ToyBackend(model)

    def matrix_for(self, record: BenchRecord):
        from .protocol import LogProbRequest

        if record.token_ids is not None:
            req = LogProbRequest(request_id=record.id, token_ids=tuple(record.token_ids))
        else:
            req = LogProbRequest(request_id=record.id, text=record.text)
        return self.backend.answer(req)


class CacheDirSource(MatrixSource):
    """Matrices cached per record id as ``<id>.lpm`` files."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def matrix_for(self, record: BenchRecord):
        from .protocol import load_matrix

        return load_matrix(self.directory / f"{record.id}.lpm")


class RemoteSource(MatrixSource):
    """Wire-protocol backend at ``host:port``.

    Requests default to the real-backend top-k cap; backends with smaller
    vocabularies (like the toy server) still reply dense.
    """

    def __init__(self, endpoint: str, top_k: int | None = None, timeout: float = 60.0):
        from .protocol import DEFAULT_TOP_K

        self.endpoint = endpoint
        self.top_k = DEFAULT_TOP_K if top_k is None else top_k
        self.timeout = timeout

    def matrix_for(self, record: BenchRecord):
        from .protocol import LogProbRequest, fetch

        if record.token_ids is not None:
            req = LogProbRequest(
                request_id=record.id, token_ids=tuple(record.token_ids), top_k=self.top_k
            )
        else:
            req = LogProbRequest(request_id=record.id, text=record.text, top_k=self.top_k)
        return fetch(self.endpoint, req, timeout=self.timeout)


class CachingSource(MatrixSource):
    """Persist fetched matrices as ``<id>.lpm`` so reruns skip the backend."""

    def __init__(self, inner: MatrixSource, directory: str | Path):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def matrix_for(self, record: BenchRecord):
        from .protocol import load_matrix, save_matrix

        path = self.directory / f"{record.id}.lpm"
        if path.exists():
            return load_matrix(path)
        matrix, seq = self.inner.matrix_for(record)
        save_matrix(matrix, seq, path)
        return matrix, seq


CELL_METRICS = ("auroc", "aupr", "balanced_accuracy", "mcc", "tpr_at_5fpr")


def _cell_metrics(sls: ScoredLabelSet, fpr_cap: float) -> dict:
    return {
        "auroc": em.auroc(sls),
        "aupr": em.aupr(sls),
        "balanced_accuracy": em.balanced_accuracy(sls),
        "mcc": em.mcc(sls),
        "tpr_at_5fpr": em.tpr_at_fpr(sls, fpr_cap),
    }


def aggregate_scores(
    records: list[BenchRecord],
    detectors: list[str],
    options: RunOptions | None = None,
) -> dict:
    """Fold per-record scores into the per (detector, task, scenario) report."""
    options = options or RunOptions()
    cells = []
    for method in detectors:
        groups: dict[tuple[str, str], list[BenchRecord]] = {}
        for rec in sorted(records, key=lambda r: r.id):
            if method not in rec.scores:
                continue
            groups.setdefault((rec.task.value, rec.scenario.value), []).append(rec)
        for (task, scenario), group in sorted(groups.items()):
            oriented = []
            labels = []
            for rec in group:
                entry = rec.scores[method]
                value = entry.get("p_m", entry["value"])
                if "p_m" not in entry and entry["orientation"] == Orientation.LOWER_IS_MACHINE.value:
                    value = -value
                oriented.append(value)
                labels.append(rec.label is Label.MACHINE)
            sls = ScoredLabelSet(np.array(oriented), np.array(labels))
            try:
                stats = _cell_metrics(sls, options.fpr_cap)
            except em.SingleClass:
                continue
            cells.append(
                {"detector": method, "task": task, "scenario": scenario, "n": len(group), **stats}
            )
    report: dict = {"format": "runreport-v1", "cells": cells}
    if options.baseline:
        report["baseline"] = options.baseline
        base = {
            (c["task"], c["scenario"]): c for c in cells if c["detector"] == options.baseline
        }
        rows = []
        for cell in cells:
            if cell["detector"] == options.baseline:
                continue
            anchor = base.get((cell["task"], cell["scenario"]))
            if anchor is None:
                continue
            row = {"detector": cell["detector"], "task": cell["task"], "scenario": cell["scenario"]}
            for name in CELL_METRICS:
                try:
                    row[name] = em.improvement(cell[name], anchor[name])
                except em.Saturated:
                    row[name] = None
            rows.append(row)
        report["improvement"] = rows
    return report


def run_eval(
    records: list[BenchRecord],
    detectors: list[str],
    source: MatrixSource | None,
    options: RunOptions | None = None,
) -> dict:
    """Score every record with every detector and aggregate the report.

    Records already carrying a score for a detector keep it; others need the
    matrix source.  Per-record failures are collected and the run continues,
    but more than ``max_failure_fraction`` of failing records aborts.
    """
    options = options or RunOptions()
    if not records:
        raise EvalAborted("no records to evaluate")
    for name in detectors:
        if name not in DETECTOR_ORIENTATIONS:
            raise ValueError(f"unknown detector {name!r}")
    errors: list[dict] = []
    scored: list[BenchRecord] = []
    for rec in sorted(records, key=lambda r: r.id):
        missing = [m for m in detectors if m not in rec.scores]
        if missing:
            if source is None:
                errors.append({"id": rec.id, "reason": f"no scores for {missing} and no backend"})
                continue
            try:
                matrix, seq = source.matrix_for(rec)
            except Exception as exc:
                errors.append({"id": rec.id, "reason": str(exc)})
                continue
            for m in missing:
                rec.scores[m] = score_record(m, matrix, seq, options)
        scored.append(rec)
    if len(errors) > options.max_failure_fraction * len(records):
        raise EvalAborted(
            f"{len(errors)}/{len(records)} records failed: {errors[:3]}"
        )
    report = aggregate_scores(scored, detectors, options)
    report["n_records"] = len(scored)
    if errors:
        report["errors"] = errors
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
