from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

log = logging.getLogger("tableprompt")


@dataclass
class WarningTally:
    """Counts recoverable data problems by kind and keeps the messages.

    Functions that salvage bad input (ragged rows, unmatched model output,
    failed subtable matches) take an optional tally and append here instead
    of raising.
    """

    counts: Counter = field(default_factory=Counter)
    messages: list[str] = field(default_factory=list)

    def add(self, kind: str, message: str, n: int = 1) -> None:
        self.counts[kind] += n
        self.messages.append(message)
        log.debug("%s: %s", kind, message)

    def merge(self, other: "WarningTally") -> None:
        self.counts.update(other.counts)
        self.messages.extend(other.messages)

    def __len__(self) -> int:
        return sum(self.counts.values())


def note(tally: WarningTally | None, kind: str, message: str, n: int = 1) -> None:
    if tally is None:
        log.warning("%s: %s", kind, message)
    else:
        tally.add(kind, message, n)
