"""Tree rank: ranking a candidate pool larger than one prompt can hold.

The pool is shuffled and cut into subsets of ``S``. Each layer ranks its
nodes, splits every ranked node into a top (red) and bottom (blue) half,
and pairs halves of the same colour into the next layer's nodes. The red
lineage and the blue lineage then recurse separately and the final order
is red result followed by blue result. A half left without a partner is
carried to the end of the next layer's half list of the same lineage.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .backends import OracleBackend
from .rng import shuffled

RED = "red"
BLUE = "blue"


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class RankConfig:
    subset_size: int = 20
    top_k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.subset_size < 2:
            raise ValueError("subset_size must be at least 2")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be positive")


@dataclass(frozen=True)
class RankNode:
    items: tuple[str, ...]
    color: str
    origin_layer: int


@dataclass
class RankStats:
    oracle_calls: int = 0
    layers: int = 0
    shuffle_seed: int = 0
    calls_per_layer: dict[int, int] = field(default_factory=dict)


def split_halves(ranked_items: Sequence[str]) -> tuple[list[str], list[str]]:
    """Top ``ceil(len/2)`` items and the rest."""
    cut = (len(ranked_items) + 1) // 2
    return list(ranked_items[:cut]), list(ranked_items[cut:])


def pair_merge(
    halves: Sequence[Sequence[str]], carry: Sequence[str] | None = None
) -> tuple[list[list[str]], list[str] | None]:
    """Concatenate consecutive halves pairwise, higher priority first.

    ``carry`` joins the end of the list before pairing; an odd leftover is
    returned as the new carry. Empty halves are skipped.
    """
    pool = [list(h) for h in halves if h]
    if carry:
        pool.append(list(carry))
    fulls = [pool[i] + pool[i + 1] for i in range(0, len(pool) - 1, 2)]
    leftover = pool[-1] if len(pool) % 2 else None
    return fulls, leftover


def call_bound(n_candidates: int, subset_size: int) -> int:
    """Upper bound ``2 n (ceil(log2 n) + 1)`` on oracle calls for ``n`` subsets."""
    n = math.ceil(n_candidates / subset_size)
    return 2 * n * (math.ceil(math.log2(n)) + 1) if n > 1 else 1


class _Ranker:
    def __init__(self, oracle, render, instance_id, workers, stats):
        self.oracle = oracle
        self.render = render
        self.instance_id = instance_id
        self.workers = workers
        self.stats = stats

    def rank_one(self, node: RankNode) -> list[str]:
        context = self.render(list(node.items)) if self.render else ""
        result = list(self.oracle.rank(list(node.items), context, instance_id=self.instance_id))
        if len(result) != len(node.items) or set(result) != set(node.items):
            raise RankError(f"oracle returned a non-permutation for node {list(node.items)[:5]}... (layer {node.origin_layer})")
        return result

    def rank_layer(self, nodes: list[RankNode], layer: int) -> list[list[str]]:
        self.stats.oracle_calls += len(nodes)
        self.stats.calls_per_layer[layer] = self.stats.calls_per_layer.get(layer, 0) + len(nodes)
        self.stats.layers = max(self.stats.layers, layer)
        if self.workers > 1 and len(nodes) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(self.rank_one, nodes))
        return [self.rank_one(node) for node in nodes]

    def lineage(self, fulls: list[list[str]], carry: list[str] | None, layer: int, color: str) -> list[str]:
        if not fulls:
            # a lone carried half is already in ranked order
            return list(carry or [])
        ranked = self.rank_layer([RankNode(tuple(f), color, layer) for f in fulls], layer)
        if len(ranked) == 1 and not carry:
            return ranked[0]
        reds, blues = zip(*(split_halves(r) for r in ranked))
        # the carry came from the previous layer's top halves of this lineage
        red_fulls, red_carry = pair_merge(reds, carry)
        blue_fulls, blue_carry = pair_merge(blues)
        return self.lineage(red_fulls, red_carry, layer + 1, RED) + self.lineage(
            blue_fulls, blue_carry, layer + 1, BLUE
        )


def tree_rank(
    candidates: Sequence[str],
    cfg: RankConfig,
    oracle: OracleBackend,
    *,
    render: Callable[[list[str]], str] | None = None,
    instance_id: str | None = None,
    workers: int = 1,
) -> tuple[list[str], RankStats]:
    """Full ranking of ``candidates`` plus call statistics.

    ``render`` builds the prompt context for a node's items (needed by
    text backends); nodes within one layer may be ranked by ``workers``
    threads, results are folded by node index.
    """
    if not candidates:
        raise RankError("no candidates to rank")
    if len(set(candidates)) != len(candidates):
        seen, dupes = set(), []
        for c in candidates:
            if c in seen:
                dupes.append(c)
            seen.add(c)
        raise RankError(f"duplicate candidates: {dupes[:5]}")

    stats = RankStats(shuffle_seed=cfg.seed)
    ranker = _Ranker(oracle, render, instance_id, workers, stats)
    size = cfg.subset_size
    if len(candidates) <= size:
        return ranker.rank_layer([RankNode(tuple(candidates), RED, 1)], 1)[0], stats

    pool = shuffled(candidates, cfg.seed)
    subsets = [pool[i:i + size] for i in range(0, len(pool), size)]
    return ranker.lineage(subsets, None, 1, RED), stats
