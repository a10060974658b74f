"""Evaluation metrics: micro P/R/F1, exact-match accuracy, MAP."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Iterable, Sequence

from . import tasks as T


def micro_prf(predictions: Sequence[Collection[str]], golds: Sequence[Collection[str]]) -> tuple[float, float, float]:
    """Precision, recall and F1 from TP/FP/FN pooled over all instances.

    Zero denominators give 0.
    """
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} golds")
    tp = fp = fn = 0
    for pred, gold in zip(predictions, golds):
        pred, gold = set(pred), set(gold)
        hit = len(pred & gold)
        tp += hit
        fp += len(pred) - hit
        fn += len(gold) - hit
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def normalize_answer(text: str) -> str:
    text = text.strip().lower()
    if text.endswith("."):
        text = text[:-1]
    return text.strip()


def exact_accuracy(predictions: Sequence[str], golds: Sequence[str], normalize: bool = True) -> float:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} golds")
    if not golds:
        return 0.0
    if normalize:
        hits = sum(normalize_answer(p) == normalize_answer(g) for p, g in zip(predictions, golds))
    else:
        hits = sum(p == g for p, g in zip(predictions, golds))
    return hits / len(golds)


def average_precision(ranking: Sequence[str], relevant: Collection[str]) -> float:
    """Mean over relevant items of precision at the item's position."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("no relevant items")
    hits = 0
    total = 0.0
    for pos, item in enumerate(ranking, 1):
        if item in relevant:
            hits += 1
            total += hits / pos
    return total / len(relevant)


def mean_average_precision(
    rankings: Sequence[Sequence[str]], relevants: Sequence[Collection[str]], skipped: Counter | None = None
) -> float:
    """Mean AP; instances with no relevant items are skipped and counted in ``skipped``."""
    if len(rankings) != len(relevants):
        raise ValueError(f"{len(rankings)} rankings for {len(relevants)} relevance sets")
    scores = []
    for ranking, relevant in zip(rankings, relevants):
        if not relevant:
            if skipped is not None:
                skipped["empty-relevant"] += 1
            continue
        scores.append(average_precision(ranking, relevant))
    return sum(scores) / len(scores) if scores else 0.0


def random_permutation_map(n: int, k: int) -> float:
    """Expected AP of a uniformly random order of ``n`` items, ``k`` relevant.

    E[AP] = (H_n + (k-1)/(n-1) * (n - H_n)) / n, with H_n the harmonic number.
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    harmonic = sum(1.0 / i for i in range(1, n + 1))
    if n == 1:
        return 1.0
    return (harmonic + (k - 1) / (n - 1) * (n - harmonic)) / n


METRIC_FIELDS = {
    T.COLUMN_TYPE: ("precision", "recall", "micro_f1"),
    T.RELATION: ("precision", "recall", "micro_f1"),
    T.ENTITY_LINKING: ("accuracy",),
    T.FACT_VERIFICATION: ("accuracy",),
    T.HIERARCHICAL_QA: ("accuracy",),
    T.HIGHLIGHTED_QA: ("accuracy",),
    T.ROW_POPULATION: ("map",),
    T.SCHEMA_AUGMENTATION: ("map",),
}


@dataclass
class TaskScores:
    count: int = 0
    precision: float | None = None
    recall: float | None = None
    micro_f1: float | None = None
    accuracy: float | None = None
    map: float | None = None

    def populated(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("precision", "recall", "micro_f1", "accuracy", "map") if getattr(self, k) is not None}


@dataclass
class EvalReport:
    tasks: dict[str, TaskScores] = field(default_factory=dict)
    instances: int = 0
    warnings: Counter = field(default_factory=Counter)
    per_instance: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "instances": self.instances,
            "tasks": {task: {"count": s.count, **s.populated()} for task, s in self.tasks.items()},
            "warnings": dict(sorted(self.warnings.items())),
            "per_instance": self.per_instance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False)

    def to_text(self) -> str:
        cols = ("precision", "recall", "micro_f1", "accuracy", "map")
        header = ["task", "n", *cols]
        rows = [header]
        for task, s in self.tasks.items():
            values = s.populated()
            rows.append([task, str(s.count), *(f"{values[c]:.4f}" if c in values else "-" for c in cols)])
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append(f"instances: {self.instances}")
        if self.warnings:
            lines.append("warnings: " + ", ".join(f"{k}={v}" for k, v in sorted(self.warnings.items())))
        return "\n".join(lines)


def score_task(task: str, predictions: Sequence, golds: Sequence[Sequence[str]], skipped: Counter | None = None) -> TaskScores:
    """Score one task's predictions with that task's metric.

    Choice tasks take label collections, ranking tasks take rankings, the
    rest take answer strings (compared after normalization).
    """
    scores = TaskScores(count=len(golds))
    if task in (T.COLUMN_TYPE, T.RELATION):
        scores.precision, scores.recall, scores.micro_f1 = micro_prf(predictions, golds)
    elif task in T.RANKING_TASKS:
        scores.map = mean_average_precision(predictions, golds, skipped)
    elif task in METRIC_FIELDS:
        answers = [_single(p) for p in predictions]
        scores.accuracy = exact_accuracy(answers, [g[0] if g else "" for g in golds])
    else:
        raise ValueError(f"unknown task {task!r}")
    return scores


def _single(pred) -> str:
    if isinstance(pred, str):
        return pred
    pred = list(pred)
    return pred[0] if len(pred) == 1 else " | ".join(sorted(pred))


def by_task(items: Iterable[tuple[str, object]]) -> dict[str, list]:
    out: dict[str, list] = {}
    for task, value in items:
        out.setdefault(task, []).append(value)
    return out
