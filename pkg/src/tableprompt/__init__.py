"""Budgeted table prompts, divide-and-merge classification and tree ranking."""
from .backends import NOTA, BackendError, EndpointConfig, HttpBackend, MockOracle, parse_multilabel, parse_ranked_list
from .classify import ClassifyConfig, LabelSpace, classify_instance, divide_labels, plan_cls_training
from .metrics import EvalReport, average_precision, exact_accuracy, mean_average_precision, micro_prf
from .pipeline import PipelineConfig, PromptBuilder, build_dataset, evaluate
from .rank import RankConfig, RankStats, tree_rank
from .segment import Subtable, segment_table, select_subtable
from .serialize import PromptRecord, assemble_prompt, render_prompt
from .table import DataError, Table, TableMetadata, TaskInstance, load_instances, load_tables, validate_instance
from .tokens import BudgetPlan, SimpleTokenizer, allowed_subtable_len, count_tokens

__version__ = "0.1.0"

__all__ = [
    "NOTA",
    "BackendError",
    "EndpointConfig",
    "HttpBackend",
    "MockOracle",
    "parse_multilabel",
    "parse_ranked_list",
    "ClassifyConfig",
    "LabelSpace",
    "classify_instance",
    "divide_labels",
    "plan_cls_training",
    "EvalReport",
    "average_precision",
    "exact_accuracy",
    "mean_average_precision",
    "micro_prf",
    "PipelineConfig",
    "PromptBuilder",
    "build_dataset",
    "evaluate",
    "RankConfig",
    "RankStats",
    "tree_rank",
    "Subtable",
    "segment_table",
    "select_subtable",
    "PromptRecord",
    "assemble_prompt",
    "render_prompt",
    "DataError",
    "Table",
    "TableMetadata",
    "TaskInstance",
    "load_instances",
    "load_tables",
    "validate_instance",
    "BudgetPlan",
    "SimpleTokenizer",
    "allowed_subtable_len",
    "count_tokens",
]
