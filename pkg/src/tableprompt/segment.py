"""Row-wise table segmentation under a token budget, and per-task subtable choice."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import tasks as T
from .rng import SplitMix64, derive_seed
from .serialize import serialize_header, serialize_row
from .table import DataError, Table, TaskInstance
from .tally import WarningTally, note
from .tokens import Tokenizer, count_tokens


class SegmentationError(DataError):
    def __init__(self, table_id: str, row: int, cost: int, allowed: int):
        super().__init__(
            f"table {table_id}: row {row + 1} needs {cost} tokens with headers, more than the {allowed} allowed"
        )
        self.table_id = table_id
        self.row = row


@dataclass(frozen=True)
class Subtable:
    table_id: str
    start_row: int
    end_row: int
    nominal_end: int

    def __post_init__(self):
        if self.is_empty:
            return
        if not (0 <= self.start_row < self.nominal_end <= self.end_row):
            raise ValueError(f"bad subtable bounds {self}")

    @property
    def is_empty(self) -> bool:
        return self.start_row == self.end_row == self.nominal_end == 0

    @property
    def rows(self) -> range:
        return range(self.start_row, self.end_row)

    @classmethod
    def empty(cls, table_id: str) -> "Subtable":
        """Sentinel for tasks whose prompt carries no rows."""
        return cls(table_id, 0, 0, 0)

    def to_json(self) -> dict:
        return {"table_id": self.table_id, "start_row": self.start_row, "end_row": self.end_row, "nominal_end": self.nominal_end}


def row_costs(table: Table, tok: Tokenizer | None = None) -> tuple[int, list[int]]:
    """Token cost of the header line and of each serialized row."""
    header = count_tokens(serialize_header(table.headers), tok)
    return header, [count_tokens(serialize_row(row, i), tok) for i, row in enumerate(table.rows)]


def plan_segments(header_cost: int, costs: Sequence[int], allowed: int, offset: int) -> list[tuple[int, int, int]]:
    """Greedy packing over priced rows; returns ``(start, end, nominal_end)`` triples.

    A nominal segment takes rows while header + rows stays within
    ``allowed``; it is then extended by whole rows until at least ``offset``
    extra tokens are included. The next segment starts at the previous
    nominal end, so nominal ranges partition the rows.
    """
    n = len(costs)
    out: list[tuple[int, int, int]] = []
    i = 0
    while i < n:
        used, j = header_cost, i
        while j < n and used + costs[j] <= allowed:
            used += costs[j]
            j += 1
        if j == i:
            raise ValueError(f"row {i} does not fit")
        extra, end = 0, j
        while end < n and extra < offset:
            extra += costs[end]
            end += 1
        out.append((i, end, j))
        i = j
    return out


def segment_table(
    table: Table,
    allowed: int,
    offset: int,
    tok: Tokenizer | None = None,
    costs: tuple[int, list[int]] | None = None,
) -> list[Subtable]:
    """Split ``table`` into overlapping subtables; see :func:`plan_segments`.

    ``costs`` may carry precomputed :func:`row_costs` output. A table with
    no rows yields no subtables.
    """
    header, per_row = costs if costs is not None else row_costs(table, tok)
    for r, cost in enumerate(per_row):
        if header + cost > allowed:
            raise SegmentationError(table.id, r, header + cost, allowed)
    return [Subtable(table.id, s, e, n) for s, e, n in plan_segments(header, per_row, allowed, offset)]


def demonstrated_row(instance: TaskInstance, table: Table, seed: int | None = None) -> int | None:
    """Row whose value(s) the prompt demonstrates.

    Column-type: a row with a non-empty target cell; relation: a row with
    both cells filled; entity linking: the mention's row. The first such
    row is used unless ``seed`` is given, which picks one at random.
    """
    if instance.task == T.ENTITY_LINKING:
        return instance.key["cell"][0]
    if instance.task == T.COLUMN_TYPE:
        col = instance.key["column"]
        rows = [r for r, row in enumerate(table.rows) if row[col].strip()]
    elif instance.task == T.RELATION:
        a, b = instance.key["columns"]
        rows = [r for r, row in enumerate(table.rows) if row[a].strip() and row[b].strip()]
    else:
        return None
    if not rows:
        return None
    if seed is None:
        return rows[0]
    return rows[SplitMix64(derive_seed(seed, instance.id)).below(len(rows))]


def match_subtable(
    instance: TaskInstance,
    table: Table,
    subtables: Sequence[Subtable],
    *,
    seed: int | None = None,
    tally: WarningTally | None = None,
) -> tuple[Subtable, int | None]:
    """Like :func:`select_subtable` but also returns the matched row."""
    task = instance.task
    if task in T.POPULATION_TASKS:
        return Subtable.empty(table.id), None
    if not subtables:
        return Subtable.empty(table.id), None
    first = subtables[0]
    if task in T.GENERATION_TASKS:
        return first, None

    row = demonstrated_row(instance, table, seed)
    if row is None or not 0 <= row < table.n_rows:
        note(tally, "subtable-fallback", f"instance {instance.id}: nothing to match, using first subtable")
        return first, None

    if task == T.ENTITY_LINKING:
        for sub in subtables:
            if row in sub.rows:
                return sub, row
    else:
        cols = [instance.key["column"]] if task == T.COLUMN_TYPE else list(instance.key["columns"])
        target = tuple(table.rows[row][c] for c in cols)
        for sub in subtables:
            for r in sub.rows:
                if tuple(table.rows[r][c] for c in cols) == target:
                    return sub, r
    note(tally, "subtable-fallback", f"instance {instance.id}: key not found in any subtable, using first")
    return first, None


def select_subtable(
    instance: TaskInstance,
    table: Table,
    subtables: Sequence[Subtable],
    *,
    seed: int | None = None,
    tally: WarningTally | None = None,
) -> Subtable:
    """The subtable used as the instance's table context.

    Population tasks get the empty sentinel; QA and fact verification take
    the first subtable; choice tasks take the first subtable containing the
    demonstrated entity, pair, or mention cell, falling back to the first
    subtable with a warning.
    """
    return match_subtable(instance, table, subtables, seed=seed, tally=tally)[0]
