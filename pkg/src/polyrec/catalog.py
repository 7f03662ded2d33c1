"""Heterogeneous catalog records and the per-domain in-memory state.

State is published as immutable snapshot views: ingestion builds a new view
per batch (copy-on-write at the container level) and swaps it in atomically,
so a request that grabbed a view keeps scoring against one consistent state
no matter what lands concurrently.
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .embedindex import EmbeddingSpace
from .errors import DimensionMismatch, NonFiniteComponent, ZeroVector
from .reccore import InteractionMatrix, TfidfIndex, build_tfidf_index

_SCALAR_TYPES = (str, int, float, bool)


@dataclass(frozen=True)
class Item:
    item_id: str
    entity_type: str
    text_fields: dict[str, str] = field(default_factory=dict)
    attributes: dict[str, Any] = field(default_factory=dict)
    created_at: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "entity_type": self.entity_type,
            "text_fields": dict(self.text_fields),
            "attributes": dict(self.attributes),
            "created_at": self.created_at,
        }


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    interaction_type: str
    timestamp: int
    context: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "item_id": self.item_id,
            "interaction_type": self.interaction_type,
            "timestamp": self.timestamp,
            "context": dict(self.context),
        }


@dataclass(frozen=True)
class EmbeddingRecord:
    item_id: str
    space_id: str
    vector: tuple[float, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "space_id": self.space_id,
            "vector": list(self.vector),
        }


def parse_item(raw: Any, entity_types: frozenset[str]) -> tuple[Item | None, str | None]:
    """Validate one raw item record; returns (item, None) or (None, reason)."""
    if not isinstance(raw, dict):
        return None, "MalformedRecord: item must be an object"
    item_id = raw.get("item_id")
    if not isinstance(item_id, str) or not item_id:
        return None, "MalformedRecord: item_id must be a nonempty string"
    entity_type = raw.get("entity_type")
    if not isinstance(entity_type, str) or not entity_type:
        return None, "MalformedRecord: entity_type must be a nonempty string"
    if entity_type not in entity_types:
        return None, f"InvalidEntityType: {entity_type!r} not declared for this domain"
    text_fields = raw.get("text_fields", {}) or {}
    if not isinstance(text_fields, dict) or not all(
        isinstance(k, str) and k and isinstance(v, str) for k, v in text_fields.items()
    ):
        return None, "MalformedRecord: text_fields must map field names to strings"
    attributes = raw.get("attributes", {}) or {}
    if not isinstance(attributes, dict) or not all(
        isinstance(k, str) and k and isinstance(v, _SCALAR_TYPES)
        for k, v in attributes.items()
    ):
        return None, "MalformedRecord: attributes must map field names to scalars"
    created_at = raw.get("created_at", 0)
    if isinstance(created_at, bool) or not isinstance(created_at, int):
        return None, "MalformedRecord: created_at must be unix millis"
    return (
        Item(item_id, entity_type, dict(text_fields), dict(attributes), created_at),
        None,
    )


def parse_interaction(
    raw: Any, interaction_types: frozenset[str]
) -> tuple[Interaction | None, str | None]:
    if not isinstance(raw, dict):
        return None, "MalformedRecord: interaction must be an object"
    user_id = raw.get("user_id")
    if not isinstance(user_id, str) or not user_id:
        return None, "MalformedRecord: user_id must be a nonempty string"
    item_id = raw.get("item_id")
    if not isinstance(item_id, str) or not item_id:
        return None, "MalformedRecord: item_id must be a nonempty string"
    itype = raw.get("interaction_type")
    if not isinstance(itype, str) or itype not in interaction_types:
        return None, f"MalformedRecord: unknown interaction_type {itype!r}"
    timestamp = raw.get("timestamp")
    if isinstance(timestamp, bool) or not isinstance(timestamp, (int, float)):
        return None, "MalformedRecord: timestamp must be a number"
    if not math.isfinite(timestamp):
        return None, "MalformedRecord: timestamp must be finite"
    context = raw.get("context", {}) or {}
    if not isinstance(context, dict) or not all(
        isinstance(k, str) and k and isinstance(v, str) for k, v in context.items()
    ):
        return None, "MalformedRecord: context must map nonempty tags to strings"
    return Interaction(user_id, item_id, itype, int(timestamp), dict(context)), None


def parse_embedding(raw: Any) -> tuple[EmbeddingRecord | None, str | None]:
    if not isinstance(raw, dict):
        return None, "MalformedRecord: embedding must be an object"
    item_id = raw.get("item_id")
    if not isinstance(item_id, str) or not item_id:
        return None, "MalformedRecord: item_id must be a nonempty string"
    space_id = raw.get("space_id")
    if not isinstance(space_id, str) or not space_id:
        return None, "MalformedRecord: space_id must be a nonempty string"
    vector = raw.get("vector")
    if not isinstance(vector, list) or not vector:
        return None, "MalformedRecord: vector must be a nonempty array"
    values = []
    for v in vector:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return None, "MalformedRecord: vector components must be numbers"
        if not math.isfinite(v):
            return None, "NonFiniteComponent: vector contains a non-finite value"
        values.append(float(v))
    if all(v == 0.0 for v in values):
        return None, "ZeroVector: vector has zero norm"
    return EmbeddingRecord(item_id, space_id, tuple(values)), None


class StateView:
    """One consistent point-in-time view of a domain's derived state.

    Published views are never mutated; the lazy caches below are filled at
    most once per view (idempotent builds), which is safe under concurrent
    readers.
    """

    def __init__(self):
        self.items: dict[str, Item] = {}
        self.user_items: dict[str, set[str]] = {}
        self.item_users: dict[str, set[str]] = {}
        self.item_ts: dict[str, list[int]] = {}  # sorted per item
        self.n_interactions = 0
        self.max_ts: int | None = None
        self.dangling: set[str] = set()
        self.spaces: dict[str, EmbeddingSpace] = {}
        self.seq = 0
        self.last_ingest_ms: int | None = None
        self._cache_lock = threading.Lock()
        self._content: dict[tuple[str, ...] | None, TfidfIndex] = {}
        self._entity_types: dict[str, str] | None = None
        self._pop_all: dict[str, int] | None = None

    def matrix(self) -> InteractionMatrix:
        return InteractionMatrix(self.user_items, self.item_users)

    def content_index(self, text_fields: tuple[str, ...] | None) -> TfidfIndex:
        index = self._content.get(text_fields)
        if index is None:
            with self._cache_lock:
                index = self._content.get(text_fields)
                if index is None:
                    items_text = {i: it.text_fields for i, it in self.items.items()}
                    index = build_tfidf_index(items_text, text_fields)
                    self._content[text_fields] = index
        return index

    def entity_type_map(self) -> dict[str, str]:
        mapping = self._entity_types
        if mapping is None:
            mapping = {i: it.entity_type for i, it in self.items.items()}
            self._entity_types = mapping
        return mapping

    def popularity_counts(self, window: int | str = "all_time") -> dict[str, int]:
        """Interaction counts per item, optionally over a trailing window.

        The window end is the newest observed interaction timestamp, which
        keeps windowed popularity deterministic for replayed logs.
        """
        if window == "all_time":
            counts = self._pop_all
            if counts is None:
                counts = {i: len(ts) for i, ts in self.item_ts.items()}
                self._pop_all = counts
            return counts
        if self.max_ts is None:
            return {}
        cutoff = self.max_ts - int(window)
        return {
            i: len(ts) - bisect.bisect_left(ts, cutoff)
            for i, ts in self.item_ts.items()
            if ts and ts[-1] >= cutoff
        }


class StateBuilder:
    """Copy-on-write builder producing the next StateView from a base view."""

    def __init__(self, base: StateView | None = None):
        self.view = StateView()
        self._touched_users: set[str] = set()
        self._touched_items_users: set[str] = set()
        self._touched_item_ts: set[str] = set()
        self._touched_spaces: set[str] = set()
        self._items_changed = False
        self._interactions_changed = False
        if base is not None:
            v = self.view
            v.items = dict(base.items)
            v.user_items = dict(base.user_items)
            v.item_users = dict(base.item_users)
            v.item_ts = dict(base.item_ts)
            v.n_interactions = base.n_interactions
            v.max_ts = base.max_ts
            v.dangling = set(base.dangling)
            v.spaces = dict(base.spaces)
            v.seq = base.seq
            v.last_ingest_ms = base.last_ingest_ms
            self._base = base
        else:
            self._base = None

    def apply_item(self, item: Item) -> None:
        self.view.items[item.item_id] = item
        self.view.dangling.discard(item.item_id)
        self._items_changed = True

    def apply_interaction(self, event: Interaction) -> None:
        v = self.view
        if event.user_id not in self._touched_users:
            v.user_items[event.user_id] = set(v.user_items.get(event.user_id, ()))
            self._touched_users.add(event.user_id)
        v.user_items[event.user_id].add(event.item_id)
        if event.item_id not in self._touched_items_users:
            v.item_users[event.item_id] = set(v.item_users.get(event.item_id, ()))
            self._touched_items_users.add(event.item_id)
        v.item_users[event.item_id].add(event.user_id)
        if event.item_id not in self._touched_item_ts:
            v.item_ts[event.item_id] = list(v.item_ts.get(event.item_id, ()))
            self._touched_item_ts.add(event.item_id)
        bisect.insort(v.item_ts[event.item_id], event.timestamp)
        v.n_interactions += 1
        if v.max_ts is None or event.timestamp > v.max_ts:
            v.max_ts = event.timestamp
        if event.item_id not in v.items:
            v.dangling.add(event.item_id)
        self._interactions_changed = True

    def apply_embedding(self, record: EmbeddingRecord) -> None:
        """First record of a space fixes its dimension; mismatches raise."""
        v = self.view
        space = v.spaces.get(record.space_id)
        if space is None:
            space = EmbeddingSpace(record.space_id, len(record.vector))
            v.spaces[record.space_id] = space
            self._touched_spaces.add(record.space_id)
        elif record.space_id not in self._touched_spaces:
            space = space.copy()
            v.spaces[record.space_id] = space
            self._touched_spaces.add(record.space_id)
        if len(record.vector) != space.dim:
            raise DimensionMismatch(
                f"space {record.space_id!r} has dimension {space.dim}, "
                f"got {len(record.vector)}"
            )
        space.index_vector(record.item_id, record.vector)

    def build(self) -> StateView:
        """Finalize, carrying forward caches that the batch did not touch."""
        v = self.view
        base = self._base
        if base is not None:
            if not self._items_changed:
                v._content = base._content
                v._entity_types = base._entity_types
            if not self._interactions_changed:
                v._pop_all = base._pop_all
        return v


def check_embedding_against(
    view: StateView, record: EmbeddingRecord
) -> str | None:
    """Pre-apply validation so rejected records are never logged."""
    space = view.spaces.get(record.space_id)
    if space is not None and len(record.vector) != space.dim:
        return (
            f"DimensionMismatch: space {record.space_id!r} has dimension "
            f"{space.dim}, got {len(record.vector)}"
        )
    return None


def interactions_from_dicts(
    records: Iterable[Mapping], interaction_types: frozenset[str]
) -> list[Interaction]:
    out = []
    for raw in records:
        event, reason = parse_interaction(raw, interaction_types)
        if reason:
            raise ValueError(reason)
        out.append(event)
    return out
