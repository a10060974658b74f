"""End-to-end pipelines: dataset building, prediction and evaluation."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import tasks as T
from .backends import BackendError, EndpointConfig, HttpBackend, MockOracle, OracleBackend, format_ranking
from .classify import ClassifyConfig, LabelSpace, classify_instance, plan_cls_training
from .metrics import EvalReport, average_precision, micro_prf, normalize_answer, score_task
from .rank import RankConfig, tree_rank
from .rng import derive_seed, shuffled
from .segment import SegmentationError, Subtable, match_subtable, segment_table
from .serialize import (
    DEFAULT_REGISTRY,
    INSTRUCTION_FIRST,
    LAYOUTS,
    PromptRecord,
    TemplateRegistry,
    assemble_prompt,
    render_prompt,
    resolve_prologue,
    serialize_header,
    serialize_row,
)
from .table import DataError, Table, TaskInstance, load_instances, load_tables, validate_instance
from .tally import WarningTally, note
from .tokens import DEFAULT_TOKENIZER, BudgetPlan, Tokenizer, allowed_subtable_len, count_tokens


@dataclass
class PipelineConfig:
    """Everything a run needs. ``seed`` has no default on purpose."""

    seed: int
    budget: BudgetPlan = field(default_factory=BudgetPlan)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    rank: RankConfig = field(default_factory=RankConfig)
    prologue: str = "alpaca"
    layout: str = INSTRUCTION_FIRST
    backend: str = "mock"
    mock_noise: float = 0.0
    endpoint: dict[str, Any] = field(default_factory=dict)
    workers: int = 1
    random_demo_row: bool = False
    tables: str | None = None
    instances: str | None = None
    labels: dict[str, str] = field(default_factory=dict)
    output: str | None = None
    predictions: str | None = None
    templates: str | None = None

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise DataError("seed must be an integer")
        if self.layout not in LAYOUTS:
            raise DataError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if self.backend not in ("mock", "http"):
            raise DataError(f"unknown backend {self.backend!r}; expected mock or http")
        if self.workers < 1:
            raise DataError("workers must be at least 1")
        # algorithm seeds follow the run seed
        self.classify = replace(self.classify, seed=self.seed)
        self.rank = replace(self.rank, seed=self.seed)

    @classmethod
    def from_json(cls, obj: Mapping[str, Any], **overrides) -> "PipelineConfig":
        """Build from the config-file object; non-None ``overrides`` win."""
        obj = dict(obj)
        obj.update({k: v for k, v in overrides.items() if v is not None})
        if obj.get("seed") is None:
            raise DataError("a seed is required (config 'seed' or --seed)")
        cls_obj = dict(obj.get("classify") or {})
        if "pos_neg_ratio" in cls_obj:
            cls_obj["pos_neg_ratio"] = tuple(cls_obj["pos_neg_ratio"])
        backend = obj.get("backend", "mock")
        endpoint: dict[str, Any] = {}
        noise = obj.get("mock_noise", 0.0)
        if isinstance(backend, Mapping):
            endpoint = {k: v for k, v in backend.items() if k not in ("kind", "noise")}
            noise = backend.get("noise", noise)
            backend = backend.get("kind", "mock")
        paths = obj.get("paths") or {}
        try:
            return cls(
                seed=int(obj["seed"]),
                budget=BudgetPlan.from_json(obj.get("budget") or {}),
                classify=ClassifyConfig(**cls_obj),
                rank=RankConfig(**(obj.get("rank") or {})),
                prologue=obj.get("prologue", "alpaca"),
                layout=obj.get("layout", INSTRUCTION_FIRST),
                backend=backend,
                mock_noise=float(noise),
                endpoint=endpoint,
                workers=int(obj.get("workers", 1)),
                random_demo_row=bool(obj.get("random_demo_row", False)),
                tables=obj.get("tables", paths.get("tables")),
                instances=obj.get("instances", paths.get("instances")),
                labels=dict(obj.get("labels") or paths.get("labels") or {}),
                output=obj.get("output", paths.get("output")),
                predictions=obj.get("predictions", paths.get("predictions")),
                templates=obj.get("templates", paths.get("templates")),
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"bad config: {exc}") from None


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    obj: dict[str, Any] = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from None
        if not isinstance(obj, dict):
            raise DataError("config must be a JSON object")
    return PipelineConfig.from_json(obj, **overrides)


@dataclass
class Corpus:
    tables: dict[str, Table]
    instances: list[TaskInstance]
    spaces: dict[str, LabelSpace]


def _open(path: str | None, what: str):
    if path is None:
        raise DataError(f"no {what} path given")
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {what} file: {exc}") from None


def load_corpus(cfg: PipelineConfig, tally: WarningTally | None = None, need_instances: bool = True) -> Corpus:
    with _open(cfg.tables, "tables") as fh:
        tables = {t.id: t for t in load_tables(fh, tally=tally)}
    instances: list[TaskInstance] = []
    if need_instances:
        with _open(cfg.instances, "instances") as fh:
            instances = load_instances(fh)
    spaces = {}
    for task, path in cfg.labels.items():
        T.check_task(task)
        try:
            spaces[task] = LabelSpace.from_file(path)
        except OSError as exc:
            raise DataError(f"cannot read label space for {task}: {exc}") from None
        except ValueError as exc:
            raise DataError(f"label space for {task}: {exc}") from None
    return Corpus(tables, instances, spaces)


def check_instances(instances: Iterable[TaskInstance], tables: Mapping[str, Table]) -> None:
    """Raise one DataError listing every invalid instance."""
    problems = []
    for inst in instances:
        table = tables.get(inst.table_id)
        if table is None:
            problems.append(f"{inst.id}: unknown table {inst.table_id!r}")
            continue
        problems.extend(f"{inst.id}: {v}" for v in validate_instance(inst, table))
    if problems:
        shown = "; ".join(problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        raise DataError(f"{len(problems)} invalid instance(s): {shown}{more}")


class PromptBuilder:
    """Renders budget-compliant prompts for instances over a table corpus.

    Row costs and segmentations are cached per table. After rendering, a
    fit pass trims window rows (from the end, then the start, never the
    matched row) until the assembled prompt is within ``model_limit``.
    """

    def __init__(
        self,
        tables: Mapping[str, Table],
        plan: BudgetPlan,
        *,
        prologue: str = "alpaca",
        layout: str = INSTRUCTION_FIRST,
        registry: TemplateRegistry = DEFAULT_REGISTRY,
        tok: Tokenizer | None = None,
        demo_seed: int | None = None,
        tally: WarningTally | None = None,
    ):
        self.tables = tables
        self.prologue = resolve_prologue(prologue)
        self.layout = layout
        self.registry = registry
        self.tok = tok
        self.demo_seed = demo_seed
        self.tally = tally
        scaffold = count_tokens(assemble_prompt(self.prologue, "", "", "", layout), tok)
        self.plan = plan.with_prologue(scaffold)
        self._costs: dict[str, tuple[int, list[int]]] = {}
        self._text: dict[str, tuple[str, list[str]]] = {}
        self.additive = bool(getattr(tok or DEFAULT_TOKENIZER, "additive", False))
        self._segments: dict[tuple[str, int], list[Subtable]] = {}

    def _prepare(self, table: Table) -> None:
        if table.id not in self._costs:
            header = serialize_header(table.headers)
            texts = [serialize_row(row, i) for i, row in enumerate(table.rows)]
            self._text[table.id] = (header, texts)
            self._costs[table.id] = (count_tokens(header, self.tok), [count_tokens(t, self.tok) for t in texts])

    def costs(self, table: Table) -> tuple[int, list[int]]:
        """Header cost and per-row costs, as :func:`row_costs` gives them."""
        self._prepare(table)
        return self._costs[table.id]

    def row_text(self, table: Table) -> tuple[str, list[str]]:
        self._prepare(table)
        return self._text[table.id]

    def segments(self, table: Table, task: str) -> list[Subtable]:
        allowed = allowed_subtable_len(self.plan, task)
        key = (table.id, allowed)
        if key not in self._segments:
            self._segments[key] = segment_table(table, allowed, self.plan.offset, self.tok, self.costs(table))
        return self._segments[key]

    def table(self, instance: TaskInstance) -> Table:
        try:
            return self.tables[instance.table_id]
        except KeyError:
            raise DataError(f"instance {instance.id}: unknown table {instance.table_id!r}") from None

    def context(self, instance: TaskInstance) -> tuple[Subtable, int | None]:
        table = self.table(instance)
        subs = [] if instance.task in T.POPULATION_TASKS else self.segments(table, instance.task)
        return match_subtable(instance, table, subs, seed=self.demo_seed, tally=self.tally)

    def render(self, instance: TaskInstance, subset: Sequence[str] | None = None, response: str = "") -> PromptRecord:
        """Record for ``instance`` whose assembled prompt fits ``model_limit``.

        ``n_tokens`` on the result is a full count of the assembled text.
        """
        table = self.table(instance)
        sub, anchor = self.context(instance)
        header, texts = self.row_text(table)
        _, costs = self.costs(table)
        limit = self.plan.model_limit

        def draw(lo: int, hi: int, full: bool) -> tuple[PromptRecord, int]:
            # with an additive tokenizer the rows can be priced from the cache
            text = " ".join([header, *texts[lo:hi]]) if full else header
            rec = render_prompt(
                instance, table, range(lo, hi), subset,
                registry=self.registry, prologue=self.prologue, layout=self.layout,
                anchor=anchor, response=response, table_text=text,
            )
            n = count_tokens(rec.assembled, self.tok)
            return rec, n if full else n + sum(costs[lo:hi])

        start, end = sub.start_row, sub.end_row
        keep = anchor if anchor is not None and start <= anchor < end else start
        trimmed = 0
        while True:
            rec, n = draw(start, end, not self.additive)
            if n <= limit and self.additive:
                rec, n = draw(start, end, True)
            if n <= limit:
                break
            over, freed = n - limit, 0
            if end - 1 > keep:
                while end - 1 > keep and freed < over:
                    end -= 1
                    freed += costs[end]
                    trimmed += 1
            elif start < keep:
                while start < keep and freed < over:
                    freed += costs[start]
                    start += 1
                    trimmed += 1
            else:
                raise DataError(
                    f"instance {instance.id}: prompt needs {n} tokens, over the {limit} limit even with one row"
                )
        if trimmed:
            note(self.tally, "fit-trim", f"instance {instance.id}: trimmed {trimmed} row(s) to fit", trimmed)
        return replace(rec, n_tokens=n)


def builder_for(cfg: PipelineConfig, tables: Mapping[str, Table], tally: WarningTally | None = None) -> PromptBuilder:
    registry = TemplateRegistry.from_directory(cfg.templates) if cfg.templates else DEFAULT_REGISTRY
    return PromptBuilder(
        tables,
        cfg.budget,
        prologue=cfg.prologue,
        layout=cfg.layout,
        registry=registry,
        demo_seed=cfg.seed if cfg.random_demo_row else None,
        tally=tally,
    )


def check_segmentable(builder: PromptBuilder, instances: Sequence[TaskInstance]) -> None:
    bad: dict[str, str] = {}
    for inst in instances:
        if inst.task in T.POPULATION_TASKS or inst.table_id in bad:
            continue
        try:
            builder.segments(builder.table(inst), inst.task)
        except SegmentationError as exc:
            bad[inst.table_id] = str(exc)
    if bad:
        raise DataError(f"unsegmentable table(s) {sorted(bad)}: " + "; ".join(list(bad.values())[:3]))


def _answer(text: str) -> str:
    text = text.strip()
    return text if text.endswith(".") else text + "."


def ranking_chunks(instance: TaskInstance, size: int, seed: int) -> list[tuple[list[str], str]]:
    """Shuffled candidate chunks with their gold-first ranking responses."""
    if not instance.candidates:
        raise DataError(f"instance {instance.id}: {instance.task} needs candidates")
    pool = shuffled(instance.candidates, derive_seed(seed, instance.id))
    order = {g: i for i, g in enumerate(instance.gold)}
    out = []
    for i in range(0, len(pool), size):
        chunk = pool[i:i + size]
        ranked = sorted((c for c in chunk if c in order), key=order.__getitem__)
        ranked += [c for c in chunk if c not in order]
        out.append((chunk, format_ranking(ranked)))
    return out


def build_records(
    instance: TaskInstance, builder: PromptBuilder, cfg: PipelineConfig, spaces: Mapping[str, LabelSpace]
) -> list[PromptRecord]:
    """Training records for one instance, with its gold response filled in."""
    if instance.task in T.CLASSIFICATION_TASKS:
        pairs = plan_cls_training(instance, spaces.get(instance.task), cfg.classify, builder.tally)
        return [builder.render(instance, subset, response) for subset, response in pairs]
    if instance.task in T.RANKING_TASKS:
        return [builder.render(instance, chunk, response) for chunk, response in ranking_chunks(instance, cfg.rank.subset_size, cfg.seed)]
    if not instance.gold:
        raise DataError(f"instance {instance.id}: no gold answer")
    return [builder.render(instance, None, _answer(instance.gold[0]))]


def _ordered_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def build_dataset(
    corpus: Corpus, cfg: PipelineConfig, tally: WarningTally | None = None, builder: PromptBuilder | None = None
) -> list[PromptRecord]:
    """Every training record for the corpus, in instance order.

    Raises DataError on invalid instances or unsegmentable tables; asserts
    that no assembled prompt exceeds the model limit.
    """
    check_instances(corpus.instances, corpus.tables)
    builder = builder or builder_for(cfg, corpus.tables, tally)
    check_segmentable(builder, corpus.instances)
    per_instance = _ordered_map(lambda inst: build_records(inst, builder, cfg, corpus.spaces), corpus.instances, cfg.workers)
    records = [rec for recs in per_instance for rec in recs]
    limit = builder.plan.model_limit
    for rec in records:
        assert rec.n_tokens is not None and rec.n_tokens <= limit, "prompt over the model limit"
    return records


def write_jsonl(rows: Iterable[Mapping], path: str | Path | None, stream=None) -> None:
    lines = "".join(json.dumps(row, ensure_ascii=False, sort_keys=False) + "\n" for row in rows)
    if path is None:
        stream.write(lines)
    else:
        Path(path).write_text(lines, encoding="utf-8")


def make_backend(cfg: PipelineConfig, instances: Sequence[TaskInstance]) -> OracleBackend:
    if cfg.backend == "mock":
        return MockOracle({inst.id: inst.gold for inst in instances}, noise=cfg.mock_noise, seed=cfg.seed)
    settings = dict(cfg.endpoint)
    settings.setdefault("max_in_flight", 8)
    return HttpBackend(EndpointConfig.from_env(**settings))


def predict_instance(
    instance: TaskInstance,
    builder: PromptBuilder,
    backend: OracleBackend,
    cfg: PipelineConfig,
    spaces: Mapping[str, LabelSpace],
) -> dict[str, Any]:
    """Prediction record for one instance.

    Keys: ``instance_id``, ``task`` and one of ``predicted`` (label list),
    ``ranking`` (with ``oracle_calls`` and ``layers``) or ``answer``.
    """
    out: dict[str, Any] = {"instance_id": instance.id, "task": instance.task}
    if instance.task in T.CLASSIFICATION_TASKS:
        space = spaces.get(instance.task)
        labels = classify_instance(
            instance, space, cfg.classify, backend,
            lambda inst, subset: builder.render(inst, subset).assembled,
            tally=builder.tally,
        )
        order = (instance.candidates or (space.labels if space else ()))
        out["predicted"] = [label for label in order if label in labels]
    elif instance.task in T.RANKING_TASKS:
        if not instance.candidates:
            raise DataError(f"instance {instance.id}: {instance.task} needs candidates")
        rcfg = replace(cfg.rank, seed=derive_seed(cfg.seed, instance.id))
        ranking, stats = tree_rank(
            instance.candidates, rcfg, backend,
            render=lambda items: builder.render(instance, items).assembled,
            instance_id=instance.id,
        )
        out["ranking"] = ranking
        out["oracle_calls"] = stats.oracle_calls
        out["layers"] = stats.layers
    else:
        prompt = builder.render(instance, None).assembled
        out["answer"] = backend.complete(prompt, T.max_new_tokens(instance.task), instance_id=instance.id).strip()
    return out


def predict(
    corpus: Corpus,
    cfg: PipelineConfig,
    backend: OracleBackend,
    tasks: Iterable[str] | None = None,
    tally: WarningTally | None = None,
) -> list[dict[str, Any]]:
    wanted = set(tasks) if tasks is not None else set(T.TASKS)
    instances = [inst for inst in corpus.instances if inst.task in wanted]
    check_instances(instances, corpus.tables)
    builder = builder_for(cfg, corpus.tables, tally)
    check_segmentable(builder, instances)
    return _ordered_map(lambda inst: predict_instance(inst, builder, backend, cfg, corpus.spaces), instances, cfg.workers)


PREDICTION_KEYS = ("predicted", "ranking", "answer", "prediction")


def prediction_of(row: Mapping[str, Any]) -> Any:
    for key in PREDICTION_KEYS:
        if key in row:
            return row[key]
    raise KeyError("predicted")


def load_predictions(path: str | Path) -> dict[str, Any]:
    """Read prediction JSONL keyed by ``instance_id`` (or ``id``)."""
    out: dict[str, Any] = {}
    with _open(str(path), "predictions") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ident = obj["instance_id"] if "instance_id" in obj else obj["id"]
                out[str(ident)] = prediction_of(obj)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"predictions line {lineno}: {exc}") from None
    return out


def _instance_score(task: str, pred, gold: Sequence[str]) -> dict[str, Any]:
    if task in (T.COLUMN_TYPE, T.RELATION):
        p, r, f = micro_prf([pred], [gold])
        return {"precision": p, "recall": r, "f1": f}
    if task in T.RANKING_TASKS:
        return {"ap": average_precision(pred, gold) if gold else None}
    answer = pred if isinstance(pred, str) else (list(pred)[0] if len(pred) == 1 else "")
    return {"correct": bool(gold) and normalize_answer(answer) == normalize_answer(gold[0])}


def evaluate(
    instances: Sequence[TaskInstance], predictions: Mapping[str, Any], tally: WarningTally | None = None
) -> EvalReport:
    """Score predictions per task with that task's metric."""
    tally = tally if tally is not None else WarningTally()
    preds: dict[str, list] = {}
    golds: dict[str, list] = {}
    report = EvalReport(instances=len(instances))
    for inst in instances:
        T.check_task(inst.task)
        if inst.id not in predictions:
            note(tally, "missing-prediction", f"instance {inst.id}: no prediction")
        default = [] if inst.task in T.CLASSIFICATION_TASKS | T.RANKING_TASKS else ""
        pred = predictions.get(inst.id, default)
        preds.setdefault(inst.task, []).append(pred)
        golds.setdefault(inst.task, []).append(list(inst.gold))
        report.per_instance.append({"id": inst.id, "task": inst.task, **_instance_score(inst.task, pred, inst.gold)})
    for task in T.TASKS:
        if task in preds:
            report.tasks[task] = score_task(task, preds[task], golds[task], tally.counts)
    report.warnings = tally.counts
    return report


__all__ = [
    "BackendError",
    "Corpus",
    "PipelineConfig",
    "PromptBuilder",
    "build_dataset",
    "build_records",
    "evaluate",
    "load_config",
    "load_corpus",
    "predict",
]
