"""Weighted fusion of per-source rankings (CombSUM over min-max scores).

Each source list is min-max normalized to [0, 1]; the fused score of an item
is the weight-sum of its normalized scores, with absence from a source
counting as 0. A source with weight 0 is dropped entirely, so it can neither
score nor nominate candidates.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ZeroTotalWeight
from .reccore import RankedList, top_k


@dataclass(frozen=True)
class FusionInput:
    kind: str
    weight: float
    ranking: RankedList


def minmax_normalize(ranking: RankedList) -> RankedList:
    """Map scores to [0, 1]; a constant nonempty list maps to all 1.0."""
    if not ranking.entries:
        return RankedList([], ranking.source_kind)
    scores = [s for _, s in ranking.entries]
    lo, hi = min(scores), max(scores)
    if hi == lo:
        entries = [(i, 1.0) for i, _ in ranking.entries]
    else:
        span = hi - lo
        entries = [(i, (s - lo) / span) for i, s in ranking.entries]
    return RankedList(entries, ranking.source_kind)


def fuse(
    inputs: Sequence[FusionInput],
    k: int,
    exclude: frozenset[str] = frozenset(),
) -> RankedList:
    """Weighted sum of normalized source scores, top-k with id tie-break."""
    total = sum(src.weight for src in inputs)
    if total <= 0:
        raise ZeroTotalWeight("fusion requires a positive total weight")
    fused: dict[str, float] = defaultdict(float)
    for src in inputs:
        if src.weight <= 0:
            continue
        for item_id, score in minmax_normalize(src.ranking).entries:
            if item_id not in exclude:
                fused[item_id] += src.weight * score
    return top_k(fused, k, "fused")


def apply_filters(
    ranking: RankedList,
    exclude_items: frozenset[str] = frozenset(),
    allowed_entity_types: frozenset[str] | None = None,
    catalog: Mapping[str, str] | None = None,
) -> RankedList:
    """Drop excluded ids and, when an allow-set is given, wrong-typed items.

    ``catalog`` maps item_id to entity_type; an item missing from it cannot
    prove its type and is removed whenever a type filter is active.
    """
    entries = []
    for item_id, score in ranking.entries:
        if item_id in exclude_items:
            continue
        if allowed_entity_types is not None:
            entity_type = catalog.get(item_id) if catalog else None
            if entity_type not in allowed_entity_types:
                continue
        entries.append((item_id, score))
    return RankedList(entries, ranking.source_kind)
