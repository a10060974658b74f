"""Prompt rendering: metadata, table linearization, task templates, layout."""
from __future__ import annotations

import string
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import tasks as T
from .table import DataError, Table, TableMetadata, TaskInstance

ALPACA = (
    "Below is an instruction that describes a task, paired with an input that provides "
    "further context. Write a response that appropriately completes the request."
)
VICUNA = (
    "A chat between a curious user and an artificial intelligence assistant. The assistant "
    "gives helpful, detailed, and polite answers to the user's questions."
)
PROLOGUES = {"alpaca": ALPACA, "vicuna": VICUNA}

INSTRUCTION_FIRST = "instruction-first"
INPUT_FIRST = "input-first"
LAYOUTS = (INSTRUCTION_FIRST, INPUT_FIRST)

MARKERS = ("### Instruction:", "### Input:", "### Question:", "### Response:")

HIGHLIGHT_BEGIN = "[HIGHLIGHTED_BEGIN]"
HIGHLIGHT_END = "[HIGHLIGHTED_END]"


class TemplateError(DataError):
    pass


@dataclass(frozen=True)
class PromptRecord:
    instruction: str
    input: str
    question: str
    response: str = ""
    assembled: str = ""
    n_tokens: int | None = field(default=None, compare=False)

    def to_json(self) -> dict[str, str]:
        return {"instruction": self.instruction, "input": self.input, "question": self.question, "response": self.response}


@dataclass(frozen=True)
class TaskTemplate:
    """Instruction text plus ``str.format`` templates for the question and
    the task-specific tail of the input block.

    ``metadata_style`` picks the sentence forms used after ``[TLE]``:
    ``default``, ``plain-caption`` or ``title``.
    """

    instruction: str
    question: str
    input_extra: str = ""
    metadata_style: str = "default"

    def placeholders(self) -> set[str]:
        names: set[str] = set()
        for text in (self.instruction, self.question, self.input_extra):
            names |= _fields(text)
        return names


def _fields(text: str) -> set[str]:
    try:
        return {name for _, name, _, _ in string.Formatter().parse(text) if name is not None}
    except ValueError as exc:
        raise TemplateError(f"unbalanced placeholder in template: {exc}") from None


def _fill(template: str, values: Mapping[str, str]) -> str:
    missing = _fields(template) - set(values)
    if missing:
        raise TemplateError(f"placeholder unfilled: {sorted(missing)}")
    return template.format_map(values)


_CTA_Q = (
    "The column '{column}' contains the following entities: {entities}, etc. "
    "The column type candidates are: {candidates}. "
    "What are the correct column types for this column (column name: {column}; entities: {entities}, etc)?"
)
_RE_Q = (
    "The two selected column names are: {columns}. The entity pairs for these two columns are: {pairs}, etc. "
    "The relation type candidates are: {candidates}. "
    "What are the correct relation types for the two selected columns (column names: {columns}. "
    "entity pairs: {pairs}, etc)?"
)
_EL_Q = (
    "The selected entity mention in the table cell is: {mention}. The column name for '{mention}' is {column}. "
    "The referent entity candidates are: {candidates}. "
    "What is the correct referent entity for the entity mention '{mention}' ?"
)
_FACT_INSTRUCTION = (
    "This is a table fact verification task. The goal of this task is to distinguish whether the given "
    "statement is entailed or refuted by the given table."
)
_TABLE_QA_INSTRUCTION = "This is a table QA task. The goal of this task is to answer the question given the table."

IN_DOMAIN_TEMPLATES: dict[str, TaskTemplate] = {
    T.COLUMN_TYPE: TaskTemplate(
        "This is a column type annotation task. The goal for this task is to choose the correct types for one "
        "selected column of the table from the given candidates. The Wikipedia page, section and table caption "
        "(if any) provide important information for choosing the correct column types.",
        _CTA_Q,
    ),
    T.RELATION: TaskTemplate(
        "This is a relation extraction task. The goal for this task is to choose the correct relations between "
        "two selected columns of the table from the given candidates. The Wikipedia page, section and table "
        "caption (if any) provide important information for choosing the correct relation types.",
        _RE_Q,
    ),
    T.ENTITY_LINKING: TaskTemplate(
        "This is an entity linking task. The goal for this task is to link the selected entity mention in the "
        "table cells to the entity in the knowledge base. You will be given a list of referent entities, with "
        "each one composed of an entity name, its description and its type. Please choose the correct one from "
        "the referent entity candidates. Note that the Wikipedia page, Wikipedia section and table caption (if "
        "any) provide important information for choosing the correct referent entity.",
        _EL_Q,
    ),
    T.ROW_POPULATION: TaskTemplate(
        "This is a table row population task. The goal of this task is to populate the possible entities of the "
        "selected column for a table, given the Wikipedia page title, Wikipedia section title, table caption (if "
        "any) and table headers. You will be given a list of entity candidates. Please rank them so that the "
        "most likely entities come first.",
        "The entity candidates are: {candidates}.",
        "The table headers are: {headers}. You need to populate the column: {column}. "
        "[SEED] The seed entity is <{seed}>.",
    ),
    T.SCHEMA_AUGMENTATION: TaskTemplate(
        "This is a table schema augmentation task. The goal of this task is to populate the possible headers "
        "for a table, given the table caption and the seed table header. You will be given a list of table "
        "header candidates. Please rank them so that the most likely headers come first.",
        "The header candidates are: {candidates}. Please rank the headers in the header candidates.",
        "[SEED] The seed table header is <{seed}>.",
        metadata_style="plain-caption",
    ),
    T.HIERARCHICAL_QA: TaskTemplate(
        "This is a hierarchical table question answering task. The goal for this task is to answer the given "
        "question based on the given table. The table might be hierarchical.",
        "{question}",
        metadata_style="plain-caption",
    ),
    T.HIGHLIGHTED_QA: TaskTemplate(
        "This is a free-form table question answering task. The goal for this task is to answer the given "
        "question based on the given table and the highlighted cells.",
        f"The highlighted cells of the table are: {HIGHLIGHT_BEGIN} {{highlighted}} {HIGHLIGHT_END} {{question}}",
        metadata_style="title",
    ),
    T.FACT_VERIFICATION: TaskTemplate(
        _FACT_INSTRUCTION,
        "The statement is: <{statement}>. Is it entailed or refuted by the table above?",
    ),
}

# Inference-only extras; rendered with render_template(task, **fields).
EXTRA_TEMPLATES: dict[str, TaskTemplate] = {
    "hybrid-qa": TaskTemplate(
        "This is a hybrid question answering task. The goal of this task is to answer the question given "
        "tables and passages.",
        "{question}",
    ),
    "table-dialogue": TaskTemplate(
        "This is a dialogue response generation task grounded on tables. The goal of this task is to generate "
        "response based on the given dialogue history and the given table. The dialogues are grounded through "
        "underlying tables and span three distinct tasks in the in-car personal assistant space: calendar "
        "scheduling, weather information retrieval, and point-of-interest navigation.",
        "The dialogue history is: <{history}>. Please generate the response based on the given table and the "
        "given dialogue history.",
    ),
    "cell-description": TaskTemplate(
        "This is a highlighted cells description task. The goal of this task is to generate the language "
        "description given table cells.",
        "Please generate one natural language description to describe the given highlighted table cells.",
    ),
    "feverous": TaskTemplate(
        _FACT_INSTRUCTION,
        "The statement is: <{statement}>. Is it entailed or refuted by the table above? If you think the "
        "current information can not provide enough evidence for determining it, please choose 'not enough "
        "info', otherwise please choose the answer from 'supports' or 'refutes'.",
    ),
    "wikisql": TaskTemplate(_TABLE_QA_INSTRUCTION, "{question}"),
    "wikitq": TaskTemplate(_TABLE_QA_INSTRUCTION, "{question}"),
}


@dataclass(frozen=True)
class TemplateRegistry:
    templates: Mapping[str, TaskTemplate] = field(
        default_factory=lambda: {**IN_DOMAIN_TEMPLATES, **EXTRA_TEMPLATES}
    )

    def __post_init__(self):
        for task in T.TASKS:
            if task not in self.templates:
                raise TemplateError(f"no template for task {task!r}")
        for template in self.templates.values():
            template.placeholders()

    def __getitem__(self, task: str) -> TaskTemplate:
        try:
            return self.templates[task]
        except KeyError:
            raise TemplateError(f"no template for task {task!r}") from None

    @classmethod
    def from_directory(cls, path: str | Path, base: "TemplateRegistry | None" = None) -> "TemplateRegistry":
        """Override templates from ``<task>.instruction.txt``, ``<task>.question.txt``
        and ``<task>.input.txt`` files; tasks without files keep ``base``."""
        merged = dict((base or cls()).templates)
        root = Path(path)
        for part in ("instruction", "question", "input"):
            for file in sorted(root.glob(f"*.{part}.txt")):
                task = file.name[: -len(f".{part}.txt")]
                current = merged.get(task, TaskTemplate("", ""))
                text = file.read_text(encoding="utf-8").rstrip("\n")
                attr = "input_extra" if part == "input" else part
                merged[task] = replace(current, **{attr: text})
        return cls(merged)


DEFAULT_REGISTRY = TemplateRegistry()


def clean_cell(text: str) -> str:
    return " ".join(text.replace("|", "/").split())


def serialize_metadata(meta: TableMetadata, style: str = "default") -> str:
    """The ``[TLE]`` block; sentences for empty fields are left out."""
    page, section, caption = meta.page_title.strip(), meta.section_title.strip(), meta.caption.strip()
    parts = []
    if style == "title":
        if page:
            parts.append(f"The Wikipedia page title of this table is {page}.")
        if section:
            parts.append(f"The Wikipedia section title of this table is {section}.")
    elif style in ("default", "plain-caption"):
        if page:
            parts.append(f"The Wikipedia page is about {page}.")
        if section:
            parts.append(f"The Wikipedia section is about {section}.")
    else:
        raise TemplateError(f"unknown metadata style {style!r}")
    if caption:
        about = style == "default" and not parts
        parts.append(f"The table caption is {'about ' if about else ''}{caption}.")
    if not parts:
        return ""
    return "[TLE] " + " ".join(parts)


def _pipe_row(cells: Sequence[str]) -> str:
    return "| " + " | ".join(clean_cell(c) for c in cells) + " |"


def serialize_header(headers: Sequence[str]) -> str:
    return "[TAB] col: " + _pipe_row(headers)


def serialize_row(cells: Sequence[str], index: int) -> str:
    """One row; ``index`` is 0-based, printed 1-based."""
    return f"[SEP] row {index + 1}: " + _pipe_row(cells)


def serialize_rows(headers: Sequence[str], rows: Sequence[Sequence[str]], start_index: int = 0) -> str:
    parts = [serialize_header(headers)]
    parts.extend(serialize_row(row, start_index + i) for i, row in enumerate(rows))
    return " ".join(parts)


def format_entity_candidate(name: str, description: str | None = None, type_: str | None = None) -> str:
    return f"{name} [DESCRIPTION] {description or 'None'} [TYPE] {type_ or 'None'}"


def _angle_list(items: Sequence[str]) -> str:
    return ", ".join(f"<{item}>" for item in items)


def _column_entities(table: Table, column: int, rows: range, anchor: int | None, limit: int) -> list[str]:
    order = list(rows)
    if anchor is not None and anchor in rows:
        order = order[order.index(anchor):]
    out: list[str] = []
    for r in order:
        value = clean_cell(table.rows[r][column])
        if value and value not in out:
            out.append(value)
            if len(out) == limit:
                break
    return out


def _entity_pairs(table: Table, cols: Sequence[int], rows: range, anchor: int | None, limit: int) -> list[str]:
    order = list(rows)
    if anchor is not None and anchor in rows:
        order = order[order.index(anchor):]
    out: list[str] = []
    for r in order:
        a, b = (clean_cell(table.rows[r][c]) for c in cols)
        if a and b:
            pair = f"<({a}),({b})>"
            if pair not in out:
                out.append(pair)
                if len(out) == limit:
                    break
    return out


def _rows_of(table: Table, rows: range | None) -> range:
    return range(table.n_rows) if rows is None else rows


def template_fields(
    instance: TaskInstance,
    candidate_subset: Sequence[str] | None,
    table: Table | None = None,
    rows: range | None = None,
    anchor: int | None = None,
    examples: int = 3,
) -> dict[str, str]:
    """Placeholder values for ``instance``'s question and input templates."""
    task, key = instance.task, instance.key
    fields: dict[str, str] = {}
    if task in T.CANDIDATE_TASKS:
        if not candidate_subset:
            raise TemplateError(f"{task} needs a non-empty candidate subset")
        if task in (T.COLUMN_TYPE, T.RELATION):
            fields["candidates"] = ", ".join(candidate_subset)
        else:
            fields["candidates"] = _angle_list(candidate_subset)
    needs_table = task in (T.COLUMN_TYPE, T.RELATION, T.ENTITY_LINKING, T.ROW_POPULATION, T.HIGHLIGHTED_QA)
    if needs_table and table is None:
        raise TemplateError(f"{task} needs the table to render its question")

    if task == T.COLUMN_TYPE:
        col = key["column"]
        fields["column"] = clean_cell(table.headers[col])
        fields["entities"] = _angle_list(_column_entities(table, col, _rows_of(table, rows), anchor, examples))
    elif task == T.RELATION:
        cols = key["columns"]
        fields["columns"] = "<" + ",".join(f"({clean_cell(table.headers[c])})" for c in cols) + ">"
        fields["pairs"] = ", ".join(_entity_pairs(table, cols, _rows_of(table, rows), anchor, examples))
    elif task == T.ENTITY_LINKING:
        fields["mention"] = key["mention"]
        fields["column"] = clean_cell(table.headers[key["cell"][1]])
    elif task == T.ROW_POPULATION:
        col = key.get("column", 0)
        fields["headers"] = _pipe_row(table.headers)
        fields["column"] = clean_cell(table.headers[col])
        fields["seed"] = key["seed"]
    elif task == T.SCHEMA_AUGMENTATION:
        fields["seed"] = key["seed"]
    elif task == T.HIERARCHICAL_QA:
        fields["question"] = key["question"]
    elif task == T.HIGHLIGHTED_QA:
        fields["question"] = key["question"]
        fields["highlighted"] = ", ".join(f"[{clean_cell(table.rows[r][c])}]" for r, c in instance.highlighted_cells)
    elif task == T.FACT_VERIFICATION:
        fields["statement"] = key["statement"]
    return fields


def render_instruction(
    instance: TaskInstance,
    candidate_subset: Sequence[str] | None,
    registry: TemplateRegistry = DEFAULT_REGISTRY,
    table: Table | None = None,
    rows: range | None = None,
    anchor: int | None = None,
) -> tuple[str, str]:
    """Instruction and question text for ``instance``.

    ``rows`` is the subtable window and ``anchor`` the matched row; the
    demonstrated entities for column-type and relation prompts are read
    from the window starting at the anchor.
    """
    template = registry[instance.task]
    fields = template_fields(instance, candidate_subset, table, rows, anchor)
    return _fill(template.instruction, fields), _fill(template.question, fields)


def render_input(
    instance: TaskInstance,
    table: Table,
    rows: range | None,
    registry: TemplateRegistry = DEFAULT_REGISTRY,
    fields: Mapping[str, str] | None = None,
    table_text: str | None = None,
) -> str:
    """Metadata, then either the table window or (population tasks) the
    task's prose tail. ``rows=None`` means the whole table; ``table_text``
    replaces the serialized window when the caller already has it."""
    template = registry[instance.task]
    parts = [serialize_metadata(table.metadata, template.metadata_style)]
    if instance.task not in T.POPULATION_TASKS:
        if table_text is None:
            window = _rows_of(table, rows)
            table_text = serialize_rows(table.headers, table.rows[window.start:window.stop], window.start)
        parts.append(table_text)
    if template.input_extra:
        if fields is None:
            fields = template_fields(instance, instance.candidates or ["-"], table, rows)
        parts.append(_fill(template.input_extra, fields))
    return " ".join(p for p in parts if p)


def render_template(task: str, registry: TemplateRegistry = DEFAULT_REGISTRY, **fields: str) -> tuple[str, str]:
    """Instruction and question for any registered task from explicit fields."""
    template = registry[task]
    return _fill(template.instruction, fields), _fill(template.question, fields)


def assemble_prompt(
    prologue: str, instruction: str, input: str, question: str, layout: str = INSTRUCTION_FIRST
) -> str:
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    instruction_block = f"{MARKERS[0]}\n{instruction}"
    input_block = f"{MARKERS[1]}\n{input}"
    blocks = [instruction_block, input_block] if layout == INSTRUCTION_FIRST else [input_block, instruction_block]
    blocks += [f"{MARKERS[2]}\n{question}", MARKERS[3]]
    if prologue:
        blocks.insert(0, prologue)
    return "\n\n".join(blocks)


def render_prompt(
    instance: TaskInstance,
    table: Table,
    rows: range | None,
    candidate_subset: Sequence[str] | None = None,
    *,
    registry: TemplateRegistry = DEFAULT_REGISTRY,
    prologue: str = ALPACA,
    layout: str = INSTRUCTION_FIRST,
    anchor: int | None = None,
    response: str = "",
    table_text: str | None = None,
) -> PromptRecord:
    """Full prompt record for one instance, window and candidate subset."""
    template = registry[instance.task]
    fields = template_fields(instance, candidate_subset, table, rows, anchor)
    instruction = _fill(template.instruction, fields)
    question = _fill(template.question, fields)
    input_text = render_input(instance, table, rows, registry, fields, table_text)
    assembled = assemble_prompt(prologue, instruction, input_text, question, layout)
    return PromptRecord(instruction, input_text, question, response, assembled)


def resolve_prologue(choice: str | None) -> str:
    """``alpaca`` / ``vicuna`` by name; any other string is used verbatim."""
    if choice is None:
        return ALPACA
    return PROLOGUES.get(choice, choice)
