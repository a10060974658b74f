"""Task identifiers and per-task constants shared across modules."""

COLUMN_TYPE = "column-type-annotation"
RELATION = "relation-extraction"
ENTITY_LINKING = "entity-linking"
ROW_POPULATION = "row-population"
SCHEMA_AUGMENTATION = "schema-augmentation"
HIERARCHICAL_QA = "hierarchical-qa"
HIGHLIGHTED_QA = "highlighted-cells-qa"
FACT_VERIFICATION = "fact-verification"

TASKS = (
    COLUMN_TYPE,
    RELATION,
    ENTITY_LINKING,
    ROW_POPULATION,
    SCHEMA_AUGMENTATION,
    HIERARCHICAL_QA,
    HIGHLIGHTED_QA,
    FACT_VERIFICATION,
)

# Choice tasks answered through divide-and-merge.
CLASSIFICATION_TASKS = frozenset({COLUMN_TYPE, RELATION, ENTITY_LINKING})
SINGLE_LABEL_TASKS = frozenset({ENTITY_LINKING})
RANKING_TASKS = frozenset({ROW_POPULATION, SCHEMA_AUGMENTATION})
GENERATION_TASKS = frozenset({HIERARCHICAL_QA, HIGHLIGHTED_QA, FACT_VERIFICATION})
# Tasks that need a candidate list at render time.
CANDIDATE_TASKS = CLASSIFICATION_TASKS | RANKING_TASKS
# Tasks whose prompt carries no table rows.
POPULATION_TASKS = RANKING_TASKS

FACT_LABELS = ("entailed", "refuted")

MAX_NEW_TOKENS = {
    ROW_POPULATION: 512,
    HIGHLIGHTED_QA: 128,
    SCHEMA_AUGMENTATION: 128,
}
DEFAULT_MAX_NEW_TOKENS = 64


def max_new_tokens(task: str) -> int:
    """Generation length cap used when querying a model for ``task``."""
    return MAX_NEW_TOKENS.get(task, DEFAULT_MAX_NEW_TOKENS)


def check_task(task: str) -> str:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    return task
