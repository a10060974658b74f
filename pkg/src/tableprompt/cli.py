"""Command-line entry point.

Exit codes: 0 success, 1 data error, 2 backend error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from . import tasks as T
from .backends import BackendError
from .metrics import EvalReport
from .pipeline import (
    PipelineConfig,
    build_dataset,
    builder_for,
    check_instances,
    evaluate,
    load_config,
    load_corpus,
    load_predictions,
    make_backend,
    prediction_of,
    predict,
    write_jsonl,
)
from .table import DataError
from .tally import WarningTally
from .tokens import allowed_subtable_len

EXIT_OK, EXIT_DATA, EXIT_BACKEND = 0, 1, 2

log = logging.getLogger("tableprompt")


def _ratio(text: str) -> tuple[int, int]:
    try:
        pos, neg = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected POS:NEG, got {text!r}") from None
    return pos, neg


def _labels(pairs: Sequence[str] | None) -> dict[str, str] | None:
    if not pairs:
        return None
    out = {}
    for pair in pairs:
        task, sep, path = pair.partition("=")
        if not sep:
            raise DataError(f"--labels expects TASK=PATH, got {pair!r}")
        out[task] = path
    return out


def _common(p: argparse.ArgumentParser, instances: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="run seed (required here or in the config)")
    p.add_argument("--tables", help="table JSONL")
    if instances:
        p.add_argument("--instances", help="instance JSONL")
        p.add_argument("--labels", action="append", metavar="TASK=PATH", help="label-space file for a task, one label per line (repeatable)")
    p.add_argument("--prologue", help="alpaca, vicuna, or literal prologue text")
    p.add_argument("--layout", choices=("instruction-first", "input-first"))
    p.add_argument("--model-limit", type=int, help="context limit in tokens")
    p.add_argument("--offset", type=int, help="segment overlap allowance in tokens")
    p.add_argument("--workers", type=int, help="worker threads for per-instance work")
    p.add_argument("--templates", help="directory of template override files")
    p.add_argument("-o", "--output", help="output path (default: stdout)")


def _backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("mock", "http"))
    p.add_argument("--noise", type=float, help="swap noise for the mock backend's rankings")
    p.add_argument("--endpoint", help="completion server URL (or TABLEPROMPT_ENDPOINT)")
    p.add_argument("--openai", action="store_true", default=None, help="use OpenAI-completions request/response bodies")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tableprompt", description="Budgeted table prompts and LLM orchestration.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings as they happen")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="write instruction-tuning records as JSONL")
    _common(p)
    p.add_argument("--ratio", type=_ratio, help="Pos:Neg record ratio for classification tasks, e.g. 1:3")

    p = sub.add_parser("segment", help="write the subtables of every table")
    _common(p, instances=False)
    p.add_argument("--task", default=T.HIERARCHICAL_QA, choices=T.TASKS, help="task whose reserve sets the budget")

    for name, what in (("classify", "classification"), ("rank", "ranking")):
        p = sub.add_parser(name, help=f"predict {what} instances with a backend")
        _common(p)
        _backend_args(p)

    p = sub.add_parser("eval", help="score predictions (from a file or a backend)")
    _common(p)
    _backend_args(p)
    p.add_argument("--predictions", help="prediction JSONL; without it the backend predicts")
    p.add_argument("--report", help="also write the JSON report here")
    p.add_argument("--json", action="store_true", help="print JSON instead of the text table")

    p = sub.add_parser("inspect", help="print one assembled prompt")
    _common(p)
    p.add_argument("instance_id")
    p.add_argument("--subset", type=int, default=0, help="candidate subset index for choice tasks")
    return parser


def _config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {
        "seed": args.seed,
        "tables": args.tables,
        "instances": getattr(args, "instances", None),
        "labels": _labels(getattr(args, "labels", None)),
        "prologue": args.prologue,
        "layout": args.layout,
        "workers": args.workers,
        "templates": args.templates,
        "output": args.output,
        "predictions": getattr(args, "predictions", None),
    }
    cfg = load_config(args.config, **overrides)
    budget = cfg.budget.to_json()
    if args.model_limit is not None:
        budget["model_limit"] = args.model_limit
    if args.offset is not None:
        budget["offset"] = args.offset
    classify = {"subset_size": cfg.classify.subset_size, "pos_neg_ratio": cfg.classify.pos_neg_ratio,
                "runoff_rounds": cfg.classify.runoff_rounds}
    if getattr(args, "ratio", None):
        classify["pos_neg_ratio"] = args.ratio
    backend = {"kind": getattr(args, "backend", None) or cfg.backend, "noise": cfg.mock_noise, **cfg.endpoint}
    if getattr(args, "noise", None) is not None:
        backend["noise"] = args.noise
    if getattr(args, "endpoint", None):
        backend["url"] = args.endpoint
    if getattr(args, "openai", None):
        backend["openai"] = True
    obj = {
        **{k: v for k, v in vars(cfg).items() if k not in ("budget", "classify", "rank", "backend", "mock_noise", "endpoint")},
        "budget": budget,
        "classify": classify,
        "rank": {"subset_size": cfg.rank.subset_size, "top_k": cfg.rank.top_k},
        "backend": backend,
    }
    try:
        return PipelineConfig.from_json(obj)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_build(cfg: PipelineConfig, tally: WarningTally) -> int:
    corpus = load_corpus(cfg, tally)
    records = build_dataset(corpus, cfg, tally)
    write_jsonl((r.to_json() for r in records), cfg.output, sys.stdout)
    log.info("wrote %d records for %d instances", len(records), len(corpus.instances))
    return EXIT_OK


def cmd_segment(cfg: PipelineConfig, tally: WarningTally, task: str) -> int:
    corpus = load_corpus(cfg, tally, need_instances=False)
    builder = builder_for(cfg, corpus.tables, tally)
    log.info("allowed subtable length for %s: %d", task, allowed_subtable_len(builder.plan, task))
    rows = [sub.to_json() for table in corpus.tables.values() for sub in builder.segments(table, task)]
    write_jsonl(rows, cfg.output, sys.stdout)
    return EXIT_OK


def cmd_predict(cfg: PipelineConfig, tally: WarningTally, tasks) -> int:
    corpus = load_corpus(cfg, tally)
    backend = make_backend(cfg, corpus.instances)
    try:
        rows = predict(corpus, cfg, backend, tasks, tally)
    finally:
        close = getattr(backend, "close", None)
        if close:
            close()
    write_jsonl(rows, cfg.output, sys.stdout)
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, tally: WarningTally, report_path: str | None, as_json: bool) -> int:
    corpus = load_corpus(cfg, tally)
    check_instances(corpus.instances, corpus.tables)
    if cfg.predictions:
        predictions = load_predictions(cfg.predictions)
    else:
        backend = make_backend(cfg, corpus.instances)
        try:
            predictions = {row["instance_id"]: prediction_of(row) for row in predict(corpus, cfg, backend, None, tally)}
        finally:
            close = getattr(backend, "close", None)
            if close:
                close()
    report: EvalReport = evaluate(corpus.instances, predictions, tally)
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report.dumps() + "\n")
    _emit((report.dumps() if as_json else report.to_text()) + "\n", cfg.output)
    return EXIT_OK


def cmd_inspect(cfg: PipelineConfig, tally: WarningTally, instance_id: str, subset_index: int) -> int:
    from .classify import divide_labels, space_for

    corpus = load_corpus(cfg, tally)
    matches = [inst for inst in corpus.instances if inst.id == instance_id]
    if not matches:
        raise DataError(f"no instance with id {instance_id!r}")
    inst = matches[0]
    check_instances([inst], corpus.tables)
    builder = builder_for(cfg, corpus.tables, tally)
    subset = None
    if inst.task in T.CLASSIFICATION_TASKS:
        subsets = divide_labels(space_for(inst, corpus.spaces.get(inst.task)), cfg.classify.subset_size)
        if not 0 <= subset_index < len(subsets):
            raise DataError(f"subset index {subset_index} out of range (0..{len(subsets) - 1})")
        subset = subsets[subset_index]
    elif inst.task in T.RANKING_TASKS:
        subset = list(inst.candidates or ())[: cfg.rank.subset_size]
    record = builder.render(inst, subset)
    _emit(record.assembled + "\n", cfg.output)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    tally = WarningTally()
    try:
        cfg = _config(args)
        if args.command == "build":
            code = cmd_build(cfg, tally)
        elif args.command == "segment":
            code = cmd_segment(cfg, tally, args.task)
        elif args.command == "classify":
            code = cmd_predict(cfg, tally, T.CLASSIFICATION_TASKS)
        elif args.command == "rank":
            code = cmd_predict(cfg, tally, T.RANKING_TASKS)
        elif args.command == "eval":
            code = cmd_eval(cfg, tally, args.report, args.json)
        else:
            code = cmd_inspect(cfg, tally, args.instance_id, args.subset)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if tally.counts:
        summary = ", ".join(f"{k}={v}" for k, v in sorted(tally.counts.items()))
        print(f"warnings: {summary}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
