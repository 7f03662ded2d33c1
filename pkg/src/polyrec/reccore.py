"""Classical recommenders: user/item collaborative filtering, TF-IDF content
similarity and popularity ranking.

All functions are pure reads over an interaction matrix or a prebuilt text
index, and every ranking uses the same total order: descending score, then
ascending item_id. Determinism matters here because the test suite compares
these rankings against independent brute-force implementations.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, UnknownItem

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass
class RankedList:
    """Ordered (item_id, score) pairs from a single source or from fusion."""

    entries: list[tuple[str, float]] = field(default_factory=list)
    source_kind: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def item_ids(self) -> list[str]:
        return [item_id for item_id, _ in self.entries]

    def to_payload(self) -> list[dict]:
        return [{"item_id": i, "score": s} for i, s in self.entries]


def top_k(scores: Mapping[str, float], k: int, source_kind: str = "") -> RankedList:
    """Rank by descending score, breaking ties by ascending item_id."""
    if k <= 0:
        return RankedList([], source_kind)
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return RankedList([(i, float(s)) for i, s in ordered], source_kind)


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary user-item views: any interaction type counts once.

    Invariant: i in user_items[u] iff u in item_users[i].
    """

    user_items: Mapping[str, frozenset[str]]
    item_users: Mapping[str, frozenset[str]]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "InteractionMatrix":
        iu: dict[str, set[str]] = defaultdict(set)
        ui: dict[str, set[str]] = defaultdict(set)
        for user, item in pairs:
            iu[user].add(item)
            ui[item].add(user)
        return cls(
            user_items={u: frozenset(s) for u, s in iu.items()},
            item_users={i: frozenset(s) for i, s in ui.items()},
        )

    def items_of(self, user_id: str) -> frozenset[str]:
        return self.user_items.get(user_id, frozenset())

    def users_of(self, item_id: str) -> frozenset[str]:
        return self.item_users.get(item_id, frozenset())


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity; returns 0.0 when either vector has zero norm."""
    if len(a) != len(b):
        raise DimensionMismatch(f"vector dimensions differ: {len(a)} vs {len(b)}")
    dot = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(a, b):
        dot += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / math.sqrt(na * nb)


def user_similarity(matrix: InteractionMatrix, u: str, v: str) -> float:
    """|I_u ∩ I_v| / sqrt(|I_u| * |I_v|); 0 if either user has no items."""
    iu = matrix.items_of(u)
    iv = matrix.items_of(v)
    if not iu or not iv:
        return 0.0
    return len(iu & iv) / math.sqrt(len(iu) * len(iv))


def item_similarity(matrix: InteractionMatrix, i: str, j: str) -> float:
    """|U_i ∩ U_j| / sqrt(|U_i| * |U_j|); 0 if either item has no users."""
    ui = matrix.users_of(i)
    uj = matrix.users_of(j)
    if not ui or not uj:
        return 0.0
    return len(ui & uj) / math.sqrt(len(ui) * len(uj))


def user_cf_recommend(
    matrix: InteractionMatrix,
    user_id: str,
    k: int,
    k_neighbors: int = 50,
) -> RankedList:
    """Neighborhood CF over the binary matrix.

    The neighborhood is the top k_neighbors users with positive similarity
    (ties by user_id); each neighbor votes its unseen items with its
    similarity as weight. Cold or unknown users get an empty list.
    """
    seen = matrix.items_of(user_id)
    if not seen:
        return RankedList([], "user_cf")
    # Candidate neighbors share at least one item; others have similarity 0.
    candidates: set[str] = set()
    for item in seen:
        candidates.update(matrix.users_of(item))
    candidates.discard(user_id)
    sims = []
    for v in candidates:
        s = user_similarity(matrix, user_id, v)
        if s > 0:
            sims.append((v, s))
    sims.sort(key=lambda vs: (-vs[1], vs[0]))
    neighborhood = sims[:k_neighbors]
    scores: dict[str, float] = defaultdict(float)
    for v, s in neighborhood:
        for item in matrix.items_of(v):
            if item not in seen:
                scores[item] += s
    return top_k(scores, k, "user_cf")


def item_cf_recommend(matrix: InteractionMatrix, user_id: str, k: int) -> RankedList:
    """score(i) = sum over seen items j of item_similarity(i, j), for unseen i."""
    seen = matrix.items_of(user_id)
    if not seen:
        return RankedList([], "item_cf")
    # Count shared users per (candidate, seen) pair by walking co-interactions.
    overlap: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for j in seen:
        for v in matrix.users_of(j):
            for i in matrix.items_of(v):
                if i not in seen:
                    overlap[i][j] += 1
    scores: dict[str, float] = {}
    for i, per_seen in overlap.items():
        n_ui = len(matrix.users_of(i))
        # Summation order is pinned so that replayed state reproduces scores
        # bit-for-bit regardless of set iteration order.
        s = sum(
            per_seen[j] / math.sqrt(n_ui * len(matrix.users_of(j)))
            for j in sorted(per_seen)
        )
        if s > 0:
            scores[i] = s
    return top_k(scores, k, "item_cf")


def item_cf_similar(
    matrix: InteractionMatrix,
    item_id: str,
    k: int,
    exclude: frozenset[str] = frozenset(),
) -> RankedList:
    """Item-CF row for similar_to requests: neighbors of one item by shared users."""
    users = matrix.users_of(item_id)
    if not users:
        return RankedList([], "item_cf")
    overlap: dict[str, int] = defaultdict(int)
    for v in users:
        for i in matrix.items_of(v):
            if i != item_id and i not in exclude:
                overlap[i] += 1
    scores = {}
    for i, c in overlap.items():
        s = c / math.sqrt(len(users) * len(matrix.users_of(i)))
        if s > 0:
            scores[i] = s
    return top_k(scores, k, "item_cf")


def popularity_rank(
    counts: Mapping[str, int],
    k: int,
    exclude: frozenset[str] = frozenset(),
) -> RankedList:
    """Items by interaction count; id tie-break; excluded ids removed."""
    scores = {i: float(c) for i, c in counts.items() if c > 0 and i not in exclude}
    return top_k(scores, k, "popularity")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric character."""
    return _TOKEN_RE.findall(text.lower())


class TfidfIndex:
    """Sparse TF-IDF vectors plus per-term postings for similarity queries.

    Weights are tf(t, d) * ln(N / df(t)) with raw term counts over the
    configured text fields concatenated, then L2-normalized per document, so
    a dot product over shared terms equals cosine similarity. Terms present
    in every document carry weight 0 and never influence a ranking.
    """

    def __init__(self, docs: Mapping[str, str]):
        self.doc_count = len(docs)
        self._ids = sorted(docs)
        self._pos = {item_id: idx for idx, item_id in enumerate(self._ids)}
        term_counts: dict[str, dict[str, int]] = {}
        df: dict[str, int] = defaultdict(int)
        for item_id, text in docs.items():
            counts: dict[str, int] = defaultdict(int)
            for token in tokenize(text):
                counts[token] += 1
            term_counts[item_id] = dict(counts)
            for term in counts:
                df[term] += 1
        self._idf = {
            term: math.log(self.doc_count / n) for term, n in df.items()
        }
        self.vectors: dict[str, dict[str, float]] = {}
        for item_id in self._ids:
            weights = {
                term: count * self._idf[term]
                for term, count in term_counts[item_id].items()
                if self._idf[term] > 0.0
            }
            norm = math.sqrt(sum(w * w for w in weights.values()))
            if norm > 0:
                self.vectors[item_id] = {t: w / norm for t, w in weights.items()}
            else:
                self.vectors[item_id] = {}
        # Postings as index/weight arrays per term; item positions follow the
        # sorted id order so accumulation stays deterministic.
        postings: dict[str, tuple[list[int], list[float]]] = defaultdict(
            lambda: ([], [])
        )
        for item_id in self._ids:
            pos = self._pos[item_id]
            for term, weight in self.vectors[item_id].items():
                postings[term][0].append(pos)
                postings[term][1].append(weight)
        self._postings = {
            term: (np.asarray(idx, dtype=np.intp), np.asarray(w, dtype=np.float64))
            for term, (idx, w) in postings.items()
        }

    def idf(self, term: str) -> float:
        return self._idf.get(term, 0.0)

    def vector(self, item_id: str) -> dict[str, float]:
        try:
            return self.vectors[item_id]
        except KeyError:
            raise UnknownItem(item_id) from None

    def _score(
        self,
        query: Mapping[str, float],
        k: int,
        exclude: frozenset[str],
    ) -> RankedList:
        if not query or k <= 0 or not self._ids:
            return RankedList([], "content")
        scores = np.zeros(len(self._ids), dtype=np.float64)
        for term, qw in query.items():
            posting = self._postings.get(term)
            if posting is not None and qw != 0.0:
                idx, weights = posting
                scores[idx] += qw * weights
        for item_id in exclude:
            pos = self._pos.get(item_id)
            if pos is not None:
                scores[pos] = 0.0
        candidates = np.nonzero(scores > 0.0)[0]
        if candidates.size == 0:
            return RankedList([], "content")
        order = np.lexsort((candidates, -scores[candidates]))[:k]
        entries = [
            (self._ids[candidates[i]], float(scores[candidates[i]])) for i in order
        ]
        return RankedList(entries, "content")

    def similar_items(
        self,
        item_id: str,
        k: int,
        exclude: frozenset[str] = frozenset(),
    ) -> RankedList:
        """Top-k items by cosine to one document, excluding the query itself.

        Only items with positive similarity appear; a query document with an
        all-zero vector therefore yields an empty list.
        """
        query = self.vector(item_id)
        return self._score(query, k, exclude | {item_id})

    def recommend_for_user(
        self,
        user_items: Iterable[str],
        k: int,
        exclude: frozenset[str] = frozenset(),
    ) -> RankedList:
        """Rank unseen items by cosine to the mean vector of the user's items."""
        seen = set(user_items)
        if not seen:
            return RankedList([], "content")
        profile: dict[str, float] = defaultdict(float)
        for item_id in sorted(seen):  # pinned order: bit-exact replays
            for term, weight in self.vectors.get(item_id, {}).items():
                profile[term] += weight
        norm = math.sqrt(sum(w * w for w in profile.values()))
        if norm == 0:
            return RankedList([], "content")
        query = {t: w / norm for t, w in profile.items()}
        return self._score(query, k, exclude | frozenset(seen))


def build_tfidf_index(
    items_text: Mapping[str, Mapping[str, str]],
    text_fields: Sequence[str] | None = None,
) -> TfidfIndex:
    """Build a content index from items' text fields.

    ``items_text`` maps item_id to its field map; when ``text_fields`` is
    given, only those fields (in order) are concatenated, otherwise all
    fields in sorted name order.
    """
    docs: dict[str, str] = {}
    for item_id, fields in items_text.items():
        if text_fields is None:
            parts = [fields[name] for name in sorted(fields)]
        else:
            parts = [fields[name] for name in text_fields if name in fields]
        docs[item_id] = " ".join(parts)
    return TfidfIndex(docs)
