"""``detect`` command line interface.

Exit codes: 0 success, 2 validation failure (bad input/config), 3 backend
failure.  ``DETECT_SEED`` overrides ``--seed``; ``DETECT_BACKEND`` supplies
the backend when ``--backend`` is omitted.

``--backend`` accepts a ``host:port`` endpoint, a ``TSM1`` toy-model file
(served in-process), or a directory of per-record ``<id>.lpm`` matrix files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import bench
from .bench import (
    BenchRecord,
    EvalAborted,
    RecordInvalid,
    RunOptions,
    read_records,
    report_to_json,
    run_eval,
    write_records,
)
from .protocol import FILE_MAGIC, TransportError, BadResponse
from .refcluster import build_reference, load_reference, save_reference
from .toymodel import MODEL_MAGIC, load_model, save_model
from .training import DDLConfig, DPOConfig, synth_task, train

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BACKEND = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _resolve_seed(args) -> int:
    env = os.environ.get("DETECT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(f"DETECT_SEED must be an integer, got {env!r}") from exc
    return args.seed


def _resolve_source(backend: str | None, cache: str | None = None) -> bench.MatrixSource | None:
    source = _resolve_backend(backend)
    if source is not None and cache:
        source = bench.CachingSource(source, cache)
    return source


def _resolve_backend(backend: str | None) -> bench.MatrixSource | None:
    if backend is None:
        backend = os.environ.get("DETECT_BACKEND")
    if backend is None:
        return None
    path = Path(backend)
    if path.is_dir():
        return bench.CacheDirSource(path)
    if path.is_file():
        magic = path.open("rb").read(4)
        if magic == MODEL_MAGIC:
            return bench.ToyModelSource(load_model(path))
        if magic == FILE_MAGIC:
            raise CliError(
                f"{backend} is a single matrix file; pass its directory instead"
            )
        raise CliError(f"unrecognized backend file {backend}")
    try:
        from .protocol import parse_endpoint

        parse_endpoint(backend)
    except ValueError as exc:
        raise CliError(f"backend {backend!r} is neither a file nor host:port") from exc
    return bench.RemoteSource(backend)


def _load_records(path: str) -> list[BenchRecord]:
    try:
        records = read_records(path)
    except (OSError, RecordInvalid) as exc:
        raise CliError(str(exc)) from exc
    if not records:
        raise CliError(f"{path} holds no records")
    return records


def _cmd_score(args) -> int:
    records = _load_records(getattr(args, "in"))
    source = _resolve_source(args.backend, args.cache)
    if source is None:
        raise CliError("score needs --backend or DETECT_BACKEND")
    reference = load_reference(args.reference) if args.reference else None
    options = RunOptions(
        seed=_resolve_seed(args), n_samples=args.n_samples, reference=reference
    )
    failures = 0
    for rec in records:
        try:
            matrix, seq = source.matrix_for(rec)
        except (TransportError, BadResponse, OSError, ValueError) as exc:
            failures += 1
            print(f"record {rec.id}: {exc}", file=sys.stderr)
            continue
        rec.scores[args.method] = bench.score_record(args.method, matrix, seq, options)
    if failures == len(records):
        raise CliError("every record failed against the backend", EXIT_BACKEND)
    write_records(records, args.out)
    print(f"scored {len(records) - failures}/{len(records)} records with {args.method}")
    return EXIT_BACKEND if failures else EXIT_OK


def _cmd_eval(args) -> int:
    records = _load_records(getattr(args, "in"))
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise CliError("--methods must name at least one detector")
    source = _resolve_source(args.backend, args.cache)
    options = RunOptions(seed=_resolve_seed(args), baseline=args.baseline)
    try:
        report = run_eval(records, methods, source, options)
    except EvalAborted as exc:
        raise CliError(str(exc), EXIT_BACKEND) from exc
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    Path(args.report).write_text(report_to_json(report), encoding="utf-8")
    print(f"report with {len(report['cells'])} cells -> {args.report}")
    return EXIT_OK


def _cmd_train_toy(args) -> int:
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"bad config: {exc}") from exc
    try:
        synth = cfg["synth"]
        data = synth_task(
            seed=int(synth.get("seed", 0)),
            v=int(synth.get("v", 16)),
            order=int(synth.get("order", 1)),
            s=int(synth.get("s", 64)),
            count=int(synth.get("count", 200)),
            machine_temp=float(synth.get("machine_temp", 0.5)),
            human_temp=float(synth.get("human_temp", 1.5)),
        )
        from .toymodel import ToyScoringModel

        seed = int(cfg.get("seed", 0))
        model = ToyScoringModel.random(
            data.generator.order, data.generator.vocab,
            scale=float(cfg.get("init_scale", 0.1)), seed=seed,
        )
        objective = cfg.get("objective", "ddl")
        if objective == "ddl":
            config: DDLConfig | DPOConfig = DDLConfig(
                gamma=float(cfg.get("gamma", 100.0)),
                learning_rate=float(cfg.get("learning_rate", 0.01)),
                epochs=int(cfg.get("epochs", 200)),
                seed=seed,
            )
        elif objective == "dpo":
            config = DPOConfig(
                beta=float(cfg.get("beta", 0.05)),
                learning_rate=float(cfg.get("learning_rate", 0.01)),
                epochs=int(cfg.get("epochs", 200)),
                seed=seed,
            )
        else:
            raise CliError(f"unknown objective {objective!r}")
        trained, trace = train(model, data, config)
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad config: {exc}") from exc
    save_model(trained, args.out)
    if len(trace):
        last = trace.records[-1]
        print(
            f"trained {objective} for {len(trace)} epochs: "
            f"delta_d {trace.records[0].delta_d:.4f} -> {last.delta_d:.4f}, "
            f"loss {last.loss:.4f}"
        )
    print(f"model -> {args.out}")
    return EXIT_OK


def _cmd_cluster_build(args) -> int:
    records = _load_records(args.scores)
    machine, human = [], []
    for rec in records:
        entry = rec.scores.get(args.method)
        if entry is None:
            raise CliError(f"record {rec.id} lacks a {args.method!r} score")
        value = entry["value"]
        (machine if rec.label is bench.Label.MACHINE else human).append(value)
    try:
        ref = build_reference(machine, human, args.k)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    save_reference(ref, args.out)
    print(f"reference of {ref.size} scores (k={ref.k}) -> {args.out}")
    return EXIT_OK


def _cmd_clean(args) -> int:
    records = _load_records(getattr(args, "in"))
    clean = bench.pre_clean if args.stage == "pre" else bench.post_clean
    kept = []
    for rec in records:
        result = clean(rec.text)
        if result.accepted:
            rec.text = result.text
            kept.append(rec)
        else:
            print(f"reject {rec.id}: {result.reason}", file=sys.stderr)
    write_records(kept, args.out)
    print(f"kept {len(kept)}/{len(records)} records after {args.stage}-clean")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score records with one detector")
    p.add_argument("--backend", help="host:port, TSM1 model file, or matrix cache dir")
    p.add_argument("--method", required=True,
                   choices=["ddl", "fastdetect", "likelihood", "logrank", "entropy", "lrr"])
    p.add_argument("--reference", help="reference-set file for machine-probability output")
    p.add_argument("--n-samples", type=int, default=None,
                   help="Monte-Carlo sample count (default: analytic)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache", help="directory for per-record matrix caching")
    p.add_argument("--in", required=True, help="input records (JSON lines)")
    p.add_argument("--out", required=True, help="output records with scores")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="aggregate detector metrics into a report")
    p.add_argument("--in", required=True)
    p.add_argument("--methods", required=True, help="comma-separated detector names")
    p.add_argument("--report", required=True)
    p.add_argument("--backend", help="used for records without cached scores")
    p.add_argument("--baseline", help="detector to compute improvement rows against")
    p.add_argument("--cache", help="directory for per-record matrix caching")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("train-toy", help="train a toy scoring model on synthetic pairs")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--out", required=True, help="output TSM1 model file")
    p.set_defaults(func=_cmd_train_toy)

    cluster = sub.add_parser("cluster", help="reference clustering utilities")
    csub = cluster.add_subparsers(dest="cluster_command", required=True)
    p = csub.add_parser("build", help="build a reference set from scored records")
    p.add_argument("--scores", required=True, help="scored records (JSON lines)")
    p.add_argument("--method", default="ddl", help="score field to read")
    p.add_argument("--k", type=int, default=None, help="window order (default: 2%% rule)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster_build)

    p = sub.add_parser("clean", help="apply the benchmark cleaning rules")
    p.add_argument("--stage", required=True, choices=["pre", "post"])
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_clean)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (TransportError, BadResponse) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
