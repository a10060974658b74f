"""Tables, task instances, and their JSONL forms."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Mapping, Sequence

from . import tasks as T
from .tally import WarningTally, note


class DataError(ValueError):
    """Input data that cannot be used as given."""


@dataclass(frozen=True)
class TableMetadata:
    page_title: str = ""
    section_title: str = ""
    caption: str = ""

    def __post_init__(self):
        for name in ("page_title", "section_title", "caption"):
            value = getattr(self, name)
            if "\n" in value or "\r" in value:
                raise DataError(f"metadata field {name} must be a single line")


@dataclass(frozen=True)
class Table:
    id: str
    headers: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...] = ()
    metadata: TableMetadata = field(default_factory=TableMetadata)

    def __post_init__(self):
        object.__setattr__(self, "headers", tuple(self.headers))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        if not self.headers:
            raise DataError(f"table {self.id}: headers must be non-empty")
        width = len(self.headers)
        for i, row in enumerate(self.rows, 1):
            if len(row) != width:
                raise DataError(f"table {self.id}: row {i} has {len(row)} cells, expected {width}")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.headers)

    def column(self, index: int) -> list[str]:
        return [row[index] for row in self.rows]

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "page_title": self.metadata.page_title,
            "section_title": self.metadata.section_title,
            "caption": self.metadata.caption,
            "headers": list(self.headers),
            "rows": [list(r) for r in self.rows],
        }


def _one_line(value: str, what: str, tally: WarningTally | None) -> str:
    if "\n" in value or "\r" in value:
        note(tally, "multiline-metadata", f"{what}: newlines collapsed to spaces")
        return " ".join(value.split())
    return value


def table_from_json(obj: Mapping[str, Any], *, pad: bool = True, tally: WarningTally | None = None) -> Table:
    tid = obj["id"]
    if not isinstance(tid, str):
        raise DataError("table id must be a string")
    headers = [str(h) for h in obj["headers"]]
    rows = [[str(c) for c in r] for r in obj.get("rows", [])]
    width = max([len(headers)] + [len(r) for r in rows])
    if pad:
        if width > len(headers):
            note(tally, "ragged-row", f"table {tid}: rows wider than headers; {width - len(headers)} empty header(s) added")
            headers += [""] * (width - len(headers))
        for i, row in enumerate(rows, 1):
            if len(row) < width:
                note(tally, "ragged-row", f"table {tid}: row {i} padded from {len(row)} to {width} cells")
                row += [""] * (width - len(row))
    meta = TableMetadata(
        _one_line(obj.get("page_title", ""), f"table {tid} page_title", tally),
        _one_line(obj.get("section_title", ""), f"table {tid} section_title", tally),
        _one_line(obj.get("caption", ""), f"table {tid} caption", tally),
    )
    return Table(tid, tuple(headers), tuple(tuple(r) for r in rows), meta)


def _records(stream: IO[str] | Iterable[str]):
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DataError(f"line {lineno}: expected a JSON object")
        yield lineno, obj


def load_tables(
    stream: IO[str] | Iterable[str], *, pad: bool = True, tally: WarningTally | None = None
) -> list[Table]:
    """Read one table per line, in input order.

    Short rows are padded with empty cells (and rows wider than the header
    get empty header names) unless ``pad`` is false, in which case any
    arity mismatch is an error.
    """
    tables: list[Table] = []
    seen: set[str] = set()
    for lineno, obj in _records(stream):
        try:
            table = table_from_json(obj, pad=pad, tally=tally)
        except KeyError as exc:
            raise DataError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        except (DataError, TypeError) as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if table.id in seen:
            raise DataError(f"line {lineno}: duplicate table id {table.id!r}")
        seen.add(table.id)
        tables.append(table)
    return tables


def dump_tables(tables: Iterable[Table], stream: IO[str]) -> None:
    for table in tables:
        stream.write(json.dumps(table.to_json(), ensure_ascii=False) + "\n")


Cell = tuple[int, int]


@dataclass(frozen=True)
class TaskInstance:
    """One unit of work. ``key`` holds the task-specific fields:

    ========================  =======================================
    column-type-annotation    ``column``
    relation-extraction       ``columns`` (subject, object)
    entity-linking            ``mention``, ``cell`` (row, col)
    row-population            ``seed``, optional ``column`` (default 0)
    schema-augmentation       ``seed`` (seed header)
    hierarchical-qa           ``question``
    highlighted-cells-qa      ``question``
    fact-verification         ``statement``
    ========================  =======================================
    """

    task: str
    table_id: str
    key: Mapping[str, Any]
    gold: tuple[str, ...] = ()
    candidates: tuple[str, ...] | None = None
    highlighted_cells: tuple[Cell, ...] = ()
    id: str = ""

    def __post_init__(self):
        T.check_task(self.task)
        object.__setattr__(self, "gold", tuple(self.gold))
        if self.candidates is not None:
            object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "highlighted_cells", tuple(tuple(c) for c in self.highlighted_cells))
        if not self.id:
            object.__setattr__(self, "id", self.table_id)

    def to_json(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"id": self.id, "task": self.task, "table_id": self.table_id, "key": dict(self.key)}
        if self.highlighted_cells:
            obj["highlighted_cells"] = [list(c) for c in self.highlighted_cells]
        if self.candidates is not None:
            obj["candidates"] = list(self.candidates)
        obj["gold"] = list(self.gold)
        return obj


def instance_from_json(obj: Mapping[str, Any], default_id: str = "") -> TaskInstance:
    key = obj.get("key", {})
    if not isinstance(key, dict):
        raise DataError("key must be an object")
    cand = obj.get("candidates")
    return TaskInstance(
        task=obj["task"],
        table_id=obj["table_id"],
        key=key,
        gold=tuple(str(g) for g in obj.get("gold", [])),
        candidates=None if cand is None else tuple(str(c) for c in cand),
        highlighted_cells=tuple(tuple(int(v) for v in c) for c in obj.get("highlighted_cells", []) or []),
        id=str(obj.get("id") or default_id),
    )


def load_instances(stream: IO[str] | Iterable[str]) -> list[TaskInstance]:
    """Read instance JSONL. Missing ids default to ``<table_id>#<line>``."""
    out: list[TaskInstance] = []
    seen: set[str] = set()
    for lineno, obj in _records(stream):
        try:
            inst = instance_from_json(obj, f"{obj.get('table_id')}#{lineno}")
        except KeyError as exc:
            raise DataError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        except (ValueError, TypeError) as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if inst.id in seen:
            raise DataError(f"line {lineno}: duplicate instance id {inst.id!r}")
        seen.add(inst.id)
        out.append(inst)
    return out


def dump_instances(instances: Iterable[TaskInstance], stream: IO[str]) -> None:
    for inst in instances:
        stream.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")


def _is_index(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_column(value: Any, table: Table, what: str) -> list[str]:
    if not _is_index(value):
        return [f"{what} must be an integer column index"]
    if not 0 <= value < table.n_cols:
        return [f"{what} {value} out of bounds for {table.n_cols} columns"]
    return []


def _check_cell(cell: Sequence[Any], table: Table) -> list[str]:
    if len(cell) != 2 or not all(_is_index(v) for v in cell):
        return [f"cell {list(cell)} is not a (row, col) pair"]
    r, c = cell
    if not (0 <= r < table.n_rows and 0 <= c < table.n_cols):
        return [f"coordinate out of bounds: ({r},{c}) in a {table.n_rows}x{table.n_cols} table"]
    return []


_TEXT_KEYS = {
    T.ROW_POPULATION: "seed",
    T.SCHEMA_AUGMENTATION: "seed",
    T.HIERARCHICAL_QA: "question",
    T.HIGHLIGHTED_QA: "question",
    T.FACT_VERIFICATION: "statement",
}


def validate_instance(instance: TaskInstance, table: Table) -> list[str]:
    """Every violated instance invariant, as text. Empty means valid."""
    problems: list[str] = []
    key = instance.key
    task = instance.task
    if instance.table_id != table.id:
        problems.append(f"table_id {instance.table_id!r} does not match table {table.id!r}")

    if task == T.COLUMN_TYPE:
        if "column" not in key:
            problems.append("column-type-annotation key needs 'column'")
        else:
            problems += _check_column(key["column"], table, "column")
    elif task == T.RELATION:
        cols = key.get("columns")
        if not isinstance(cols, (list, tuple)) or len(cols) != 2:
            problems.append("relation-extraction key needs 'columns' as a pair")
        else:
            problems += _check_column(cols[0], table, "subject column")
            problems += _check_column(cols[1], table, "object column")
            if cols[0] == cols[1]:
                problems.append("column pair must name two different columns")
    elif task == T.ENTITY_LINKING:
        if not isinstance(key.get("mention"), str) or not key.get("mention"):
            problems.append("entity-linking key needs a non-empty 'mention'")
        cell = key.get("cell")
        if not isinstance(cell, (list, tuple)):
            problems.append("entity-linking key needs 'cell' as [row, col]")
        else:
            problems += _check_cell(cell, table)
    else:
        name = _TEXT_KEYS[task]
        if not isinstance(key.get(name), str) or not key.get(name):
            problems.append(f"{task} key needs a non-empty {name!r}")
        if task == T.ROW_POPULATION and "column" in key:
            problems += _check_column(key["column"], table, "column")

    # any extra key field is a variant mismatch
    allowed = {
        T.COLUMN_TYPE: {"column"},
        T.RELATION: {"columns"},
        T.ENTITY_LINKING: {"mention", "cell"},
        T.ROW_POPULATION: {"seed", "column"},
    }.get(task, {_TEXT_KEYS.get(task, "")})
    extra = sorted(set(key) - allowed)
    if extra:
        problems.append(f"key fields {extra} do not belong to {task}")

    if task in T.SINGLE_LABEL_TASKS and len(instance.gold) != 1:
        problems.append(f"single-label task has {len(instance.gold)} golds")
    if task == T.FACT_VERIFICATION:
        if len(instance.gold) != 1 or instance.gold[0] not in T.FACT_LABELS:
            problems.append(f"fact-verification gold must be one of {list(T.FACT_LABELS)}")
    if task in (T.ENTITY_LINKING, T.ROW_POPULATION, T.SCHEMA_AUGMENTATION) and not instance.candidates:
        problems.append(f"{task} needs a non-empty candidate list")
    if instance.candidates is not None and len(set(instance.candidates)) != len(instance.candidates):
        problems.append("candidates contain duplicates")
    if task == T.ENTITY_LINKING and instance.candidates and instance.gold:
        if instance.gold[0] not in instance.candidates:
            problems.append("entity-linking gold is not among the candidates")

    for cell in instance.highlighted_cells:
        problems += _check_cell(cell, table)
    return problems
