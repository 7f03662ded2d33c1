"""Inverted-index storage for dense latent vectors.

Vectors are L2-normalized at index time and scattered into one posting list
per dimension, holding (item, component) pairs for the nonzero components
only. A top-k similarity query walks the posting lists of its (optionally
pruned) query dimensions and accumulates dot products, which equal cosine
similarity because both sides are unit vectors. Keeping only the ``m``
largest-magnitude query dimensions trades accuracy for speed the same way a
search engine would limit query terms.
"""

from __future__ import annotations

import threading
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteComponent, UnknownItem, ZeroVector
from .reccore import RankedList


def _as_unit_vector(vector: Sequence[float], dim: int) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise DimensionMismatch(
            f"expected dimension {dim}, got {arr.shape[0] if arr.ndim == 1 else arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise NonFiniteComponent("vector contains a non-finite component")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ZeroVector("vector has zero norm")
    return arr / norm


class _Postings:
    """Immutable scatter of a space's vectors into per-dimension arrays."""

    def __init__(self, vectors: Mapping[str, np.ndarray], dim: int):
        self.ids = sorted(vectors)
        self.pos = {item_id: idx for idx, item_id in enumerate(self.ids)}
        if self.ids:
            matrix = np.stack([vectors[item_id] for item_id in self.ids])
        else:
            matrix = np.zeros((0, dim), dtype=np.float64)
        self.by_dim: list[tuple[np.ndarray, np.ndarray]] = []
        for d in range(dim):
            nz = np.nonzero(matrix[:, d])[0]
            self.by_dim.append((nz, matrix[nz, d].copy()))


class EmbeddingSpace:
    """One named embedding space with a fixed dimension."""

    def __init__(self, space_id: str, dim: int):
        if dim <= 0:
            raise DimensionMismatch("dimension must be positive")
        self.space_id = space_id
        self.dim = dim
        self.vectors: dict[str, np.ndarray] = {}
        self._postings: _Postings | None = None
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.vectors)

    def index_vector(self, item_id: str, vector: Sequence[float]) -> None:
        """Normalize and store; replaces any previous vector for the item."""
        unit = _as_unit_vector(vector, self.dim)
        with self._lock:
            self.vectors[item_id] = unit
            self._postings = None

    def set_unit_vector(self, item_id: str, vector: Sequence[float]) -> None:
        """Store a vector that is already unit-norm, bit-exactly.

        Snapshot loads go through here so that serialize/deserialize is the
        identity (re-normalizing would perturb the last float ulp).
        """
        arr = np.asarray(vector, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}")
        with self._lock:
            self.vectors[item_id] = arr
            self._postings = None

    def remove_vector(self, item_id: str) -> None:
        with self._lock:
            if item_id not in self.vectors:
                raise UnknownItem(item_id)
            del self.vectors[item_id]
            self._postings = None

    def copy(self) -> "EmbeddingSpace":
        """Shallow copy sharing the stored arrays; used for snapshot views."""
        clone = EmbeddingSpace(self.space_id, self.dim)
        clone.vectors = dict(self.vectors)
        return clone

    def _ensure_postings(self) -> _Postings:
        postings = self._postings
        if postings is None:
            with self._lock:
                postings = self._postings
                if postings is None:
                    postings = _Postings(self.vectors, self.dim)
                    self._postings = postings
        return postings

    def query_topk(
        self,
        query: Sequence[float],
        k: int,
        prune_m: int | str = "full",
        exclude: frozenset[str] = frozenset(),
    ) -> RankedList:
        """Posting-walk top-k.

        With prune_m < dim only the prune_m query dimensions of largest
        magnitude are walked (ties keep the lower dimension index); with
        prune_m = "full" the accumulated score is the exact cosine. Items
        whose accumulated score is not positive never appear.
        """
        unit = _as_unit_vector(query, self.dim)
        postings = self._ensure_postings()
        if k <= 0 or not postings.ids:
            return RankedList([], "embedding")
        if prune_m == "full" or int(prune_m) >= self.dim:
            kept = range(self.dim)
        else:
            m = int(prune_m)
            # Sort by descending |q_d| with dimension index as tie-break.
            order = np.lexsort((np.arange(self.dim), -np.abs(unit)))
            kept = sorted(int(d) for d in order[:m])
        scores = np.zeros(len(postings.ids), dtype=np.float64)
        for d in kept:
            qd = unit[d]
            if qd == 0.0:
                continue
            idx, weights = postings.by_dim[d]
            if idx.size:
                scores[idx] += qd * weights
        return self._select(postings, scores, k, exclude, "embedding")

    def exact_topk(
        self,
        query: Sequence[float],
        k: int,
        exclude: frozenset[str] = frozenset(),
    ) -> RankedList:
        """Brute-force oracle: dense cosine against every stored vector."""
        unit = _as_unit_vector(query, self.dim)
        ids = sorted(self.vectors)
        if k <= 0 or not ids:
            return RankedList([], "embedding")
        matrix = np.stack([self.vectors[item_id] for item_id in ids])
        scores = matrix @ unit
        holder = _SelectView(ids)
        return self._select(holder, scores, k, exclude, "embedding")

    @staticmethod
    def _select(
        postings,
        scores: np.ndarray,
        k: int,
        exclude: frozenset[str],
        source_kind: str,
    ) -> RankedList:
        if exclude:
            for item_id in exclude:
                pos = postings.pos.get(item_id)
                if pos is not None:
                    scores[pos] = -np.inf
        candidates = np.nonzero(scores > 0.0)[0]
        if candidates.size == 0:
            return RankedList([], source_kind)
        order = np.lexsort((candidates, -scores[candidates]))[:k]
        entries = [
            (postings.ids[candidates[i]], float(scores[candidates[i]])) for i in order
        ]
        return RankedList(entries, source_kind)

    def to_records(self) -> dict:
        """Serialization layout; postings are rebuilt on load."""
        return {
            "space_id": self.space_id,
            "dim": self.dim,
            "items": [
                {"item_id": item_id, "vector": self.vectors[item_id].tolist()}
                for item_id in sorted(self.vectors)
            ],
        }

    @classmethod
    def from_records(cls, doc: Mapping) -> "EmbeddingSpace":
        space = cls(doc["space_id"], int(doc["dim"]))
        for record in doc["items"]:
            space.set_unit_vector(record["item_id"], record["vector"])
        return space


class _SelectView:
    """Adapter giving exact_topk the same (ids, pos) shape as postings."""

    def __init__(self, ids: list[str]):
        self.ids = ids
        self.pos = {item_id: idx for idx, item_id in enumerate(ids)}
