"""Token counting and the context budget that bounds a subtable."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Protocol

from . import tasks as T

MODEL_LIMIT = 2048
METADATA_RESERVE = 20
OFFSET = 200
FREE_FORM_QA_RESERVE = 50
ENTITY_LINKING_RESERVE = 500
INSTRUCTION_RESERVE = 100


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...


_TOKEN = re.compile(r"[|\[\]:,]|[^\s|\[\]:,]+")


class SimpleTokenizer:
    """Whitespace-delimited words, with ``| [ ] : ,`` each split off as a token.

    Counting is additive over text joined by whitespace, which the segmenter
    relies on to price rows independently.
    """

    additive = True

    def count(self, text: str) -> int:
        return len(_TOKEN.findall(text))

    def tokens(self, text: str) -> list[str]:
        return _TOKEN.findall(text)


DEFAULT_TOKENIZER = SimpleTokenizer()


def count_tokens(text: str, tok: Tokenizer | None = None) -> int:
    return (tok or DEFAULT_TOKENIZER).count(text)


def default_instruction_reserves() -> dict[str, int]:
    reserves = {task: INSTRUCTION_RESERVE for task in T.TASKS}
    reserves[T.HIGHLIGHTED_QA] = FREE_FORM_QA_RESERVE
    reserves[T.ENTITY_LINKING] = ENTITY_LINKING_RESERVE
    return reserves


@dataclass(frozen=True)
class BudgetPlan:
    model_limit: int = MODEL_LIMIT
    metadata_reserve: int = METADATA_RESERVE
    instruction_reserve: Mapping[str, int] = field(default_factory=default_instruction_reserves)
    offset: int = OFFSET
    prologue_reserve: int = 0

    def __post_init__(self):
        if self.offset < 0:
            raise ValueError("offset must be non-negative")
        if min(self.metadata_reserve, self.prologue_reserve, *self.instruction_reserve.values(), 0) < 0:
            raise ValueError("reserves must be non-negative")
        widest = max(self.instruction_reserve.values(), default=0)
        if self.model_limit <= self.prologue_reserve + self.metadata_reserve + widest + self.offset:
            raise ValueError(
                f"model_limit {self.model_limit} leaves no room for a table "
                f"(prologue {self.prologue_reserve} + metadata {self.metadata_reserve} "
                f"+ instruction {widest} + offset {self.offset})"
            )

    def with_prologue(self, reserve: int) -> "BudgetPlan":
        return BudgetPlan(self.model_limit, self.metadata_reserve, dict(self.instruction_reserve), self.offset, reserve)

    def to_json(self) -> dict:
        return {
            "model_limit": self.model_limit,
            "metadata_reserve": self.metadata_reserve,
            "instruction_reserve": dict(self.instruction_reserve),
            "offset": self.offset,
            "prologue_reserve": self.prologue_reserve,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "BudgetPlan":
        reserves = default_instruction_reserves()
        reserves.update(obj.get("instruction_reserve", {}))
        return cls(
            model_limit=int(obj.get("model_limit", MODEL_LIMIT)),
            metadata_reserve=int(obj.get("metadata_reserve", METADATA_RESERVE)),
            instruction_reserve=reserves,
            offset=int(obj.get("offset", OFFSET)),
            prologue_reserve=int(obj.get("prologue_reserve", 0)),
        )


def allowed_subtable_len(plan: BudgetPlan, task: str) -> int:
    """Tokens left for a nominal segment (headers plus rows).

    The reserves and the offset all come out of the model limit, so a
    subtable extended by about ``offset`` tokens still fits.
    """
    if task not in plan.instruction_reserve:
        raise KeyError(f"no instruction reserve for task {task!r}")
    return (
        plan.model_limit
        - plan.prologue_reserve
        - plan.metadata_reserve
        - plan.instruction_reserve[task]
        - plan.offset
    )
