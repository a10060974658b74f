"""SplitMix64 stream and Fisher-Yates shuffle.

Everything random in the package (tree-rank shuffles, negative sampling,
mock-oracle noise) draws from this generator so runs reproduce bit-exactly
from an integer seed.
"""
from __future__ import annotations

import hashlib
from typing import MutableSequence, Sequence, TypeVar

T = TypeVar("T")

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Integer in ``[0, bound)``; plain modulo reduction."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next() % bound

    def random(self) -> float:
        """Float in ``[0, 1)`` from the top 53 bits."""
        return (self.next() >> 11) * (1.0 / (1 << 53))


def shuffle(items: MutableSequence[T], seed: int) -> None:
    """Fisher-Yates shuffle in place, walking from the last index down."""
    rng = SplitMix64(seed)
    for i in range(len(items) - 1, 0, -1):
        j = rng.below(i + 1)
        items[i], items[j] = items[j], items[i]


def shuffled(items: Sequence[T], seed: int) -> list[T]:
    out = list(items)
    shuffle(out, seed)
    return out


def sample(items: Sequence[T], k: int, rng: SplitMix64) -> list[T]:
    """``k`` items without replacement (partial Fisher-Yates from the front)."""
    pool = list(items)
    k = min(k, len(pool))
    for i in range(k):
        j = i + rng.below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def derive_seed(seed: int, *parts: object) -> int:
    """Stable 64-bit sub-seed for ``parts`` under ``seed``.

    Independent of call order, so concurrent workers derive the same
    streams as a sequential run.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(seed & MASK64).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")
