"""Divide-and-merge classification over large label spaces."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import tasks as T
from .backends import NOTA, BackendError, OracleBackend, format_choice, parse_multilabel
from .rng import SplitMix64, derive_seed, sample
from .serialize import PromptRecord
from .table import DataError, TaskInstance
from .tally import WarningTally, note

SUBSET_SIZE = 10
POS_NEG_RATIO = (1, 3)


@dataclass(frozen=True)
class LabelSpace:
    labels: tuple[str, ...]
    nota: str = NOTA

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise ValueError("label space is empty")
        if len(set(self.labels)) != len(self.labels):
            dupes = sorted({l for l in self.labels if self.labels.count(l) > 1})
            raise ValueError(f"duplicate labels: {dupes[:5]}")
        if self.nota in self.labels:
            raise ValueError(f"label space contains the none-of-the-above token {self.nota!r}")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_file(cls, path: str | Path, nota: str = NOTA) -> "LabelSpace":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()), nota)


@dataclass(frozen=True)
class ClassifyConfig:
    subset_size: int = SUBSET_SIZE
    pos_neg_ratio: tuple[int, int] = POS_NEG_RATIO
    runoff_rounds: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.subset_size < 2:
            raise ValueError("subset_size must be at least 2")
        if len(self.pos_neg_ratio) != 2 or min(self.pos_neg_ratio) < 0 or max(self.pos_neg_ratio) == 0:
            raise ValueError("pos_neg_ratio must be two non-negative counts, not both zero")
        if self.runoff_rounds < 0:
            raise ValueError("runoff_rounds must be non-negative")


class DivideAndMergeError(BackendError):
    """A subset query failed; no partial merge is returned."""

    def __init__(self, instance_id: str, failed: int, completed: list[int], cause: BaseException):
        super().__init__(
            f"instance {instance_id}: subset {failed} failed ({cause}); completed subsets {completed}",
            getattr(cause, "status", None),
        )
        self.instance_id = instance_id
        self.failed = failed
        self.completed = completed


def divide_labels(space: LabelSpace, subset_size: int = SUBSET_SIZE) -> list[tuple[str, ...]]:
    """Order-preserving chunks, each ending with the none-of-the-above option."""
    labels = space.labels
    return [labels[i:i + subset_size] + (space.nota,) for i in range(0, len(labels), subset_size)]


def space_for(instance: TaskInstance, space: LabelSpace | None, nota: str = NOTA) -> LabelSpace:
    """The instance's own candidates when it has them, else the shared space."""
    if instance.candidates:
        return LabelSpace(instance.candidates, space.nota if space else nota)
    if space is None:
        raise DataError(f"instance {instance.id}: no candidates and no label space")
    return space


def merge_predictions(parsed: Iterable[set[str]], nota: str = NOTA) -> set[str]:
    merged: set[str] = set()
    for labels in parsed:
        merged |= labels
    merged.discard(nota)
    return merged


Render = Callable[[TaskInstance, Sequence[str]], str]


def _query(
    instance: TaskInstance,
    subsets: Sequence[tuple[str, ...]],
    backend: OracleBackend,
    render: Render,
    workers: int,
    tally: WarningTally | None,
) -> list[set[str]]:
    max_tokens = T.max_new_tokens(instance.task)

    def ask(subset: tuple[str, ...]) -> set[str]:
        response = backend.complete(render(instance, subset), max_tokens, instance_id=instance.id, options=subset)
        return parse_multilabel(response, subset, tally)

    results: list[set[str] | None] = [None] * len(subsets)
    if workers <= 1:
        for i, subset in enumerate(subsets):
            try:
                results[i] = ask(subset)
            except Exception as exc:
                raise DivideAndMergeError(instance.id, i, list(range(i)), exc) from exc
        return results  # type: ignore[return-value]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(ask, subset) for subset in subsets]
        failure: tuple[int, BaseException] | None = None
        for i, fut in enumerate(futures):
            exc = fut.exception()
            if exc is None:
                results[i] = fut.result()
            elif failure is None:
                failure = (i, exc)
    if failure is not None:
        done = [i for i, r in enumerate(results) if r is not None]
        raise DivideAndMergeError(instance.id, failure[0], done, failure[1]) from failure[1]
    return results  # type: ignore[return-value]


def classify_instance(
    instance: TaskInstance,
    space: LabelSpace | None,
    cfg: ClassifyConfig,
    backend: OracleBackend,
    render: Render,
    *,
    workers: int = 1,
    tally: WarningTally | None = None,
) -> set[str]:
    """Predicted labels for one instance.

    Every subset is asked separately and the parsed answers are unioned
    with the none-of-the-above option removed. For single-label tasks,
    several survivors are re-asked among themselves for up to
    ``cfg.runoff_rounds`` rounds; a remaining tie goes to the first
    survivor in label order.
    """
    if instance.task not in T.CLASSIFICATION_TASKS:
        raise ValueError(f"{instance.task} is not a classification task")
    space = space_for(instance, space)
    parsed = _query(instance, divide_labels(space, cfg.subset_size), backend, render, workers, tally)
    predicted = merge_predictions(parsed, space.nota)
    if instance.task not in T.SINGLE_LABEL_TASKS or len(predicted) <= 1:
        return predicted

    survivors = [label for label in space.labels if label in predicted]
    for _ in range(cfg.runoff_rounds):
        runoff = LabelSpace(tuple(survivors), space.nota)
        parsed = _query(instance, divide_labels(runoff, cfg.subset_size), backend, render, workers, tally)
        narrowed = [label for label in survivors if label in merge_predictions(parsed, space.nota)]
        if not narrowed or narrowed == survivors:
            break
        survivors = narrowed
        if len(survivors) == 1:
            break
    return {survivors[0]}


def _response(instance: TaskInstance, labels: Sequence[str]) -> str:
    if instance.task == T.ENTITY_LINKING:
        labels = [f"<{label}>" for label in labels]
    return format_choice(labels)


def plan_cls_training(
    instance: TaskInstance,
    space: LabelSpace | None,
    cfg: ClassifyConfig,
    tally: WarningTally | None = None,
) -> list[tuple[tuple[str, ...], str]]:
    """``(candidate subset, response)`` pairs for one training instance.

    Every subset holding a gold label becomes a positive record. Negatives
    (response: none of the above) are sampled without replacement from the
    remaining subsets, ``neg`` per ``pos`` positive records, using a stream
    derived from ``cfg.seed`` and the instance id. Pairs come back in
    subset order.
    """
    space = space_for(instance, space)
    gold = set(instance.gold)
    unknown = gold - set(space.labels)
    if not gold or unknown:
        raise DataError(f"instance {instance.id}: gold labels {sorted(unknown) or '[]'} not in the label space")
    if instance.task in T.SINGLE_LABEL_TASKS and len(gold) != 1:
        raise DataError(f"instance {instance.id}: single-label task has {len(gold)} golds")

    subsets = divide_labels(space, cfg.subset_size)
    positives = [i for i, s in enumerate(subsets) if gold.intersection(s)]
    negatives = [i for i, s in enumerate(subsets) if not gold.intersection(s)]
    pos, neg = cfg.pos_neg_ratio
    want = -(-len(positives) * neg // pos) if pos else neg
    if want > len(negatives):
        note(tally, "short-negatives", f"instance {instance.id}: wanted {want} negatives, only {len(negatives)} exist")
    rng = SplitMix64(derive_seed(cfg.seed, instance.id))
    chosen = set(sample(negatives, want, rng))

    out = []
    for i, subset in enumerate(subsets):
        if i in chosen:
            out.append((subset, format_choice([space.nota])))
        elif pos and i in positives:
            out.append((subset, _response(instance, [label for label in subset if label in gold])))
    return out


def build_cls_training(
    instances: Sequence[TaskInstance],
    space: LabelSpace | None,
    cfg: ClassifyConfig,
    render: Callable[[TaskInstance, Sequence[str]], PromptRecord],
    tally: WarningTally | None = None,
) -> list[PromptRecord]:
    """Positive and negative prompt records for every instance, in order."""
    records = []
    for instance in instances:
        for subset, response in plan_cls_training(instance, space, cfg, tally):
            records.append(replace(render(instance, subset), response=response))
    return records
