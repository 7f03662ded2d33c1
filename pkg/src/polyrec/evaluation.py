"""Offline ranking evaluation over the live HTTP serving path.

Protocol: leave-one-out temporal split (each user's latest interaction is
held out), then for every test user the top-k is requested from a scratch
domain that carries only the training interactions. Requests go through
real HTTP so the reported latencies include serialization. Each configured
source is additionally evaluated as a single-source profile, plus a
popularity baseline, which is what makes accuracy/runtime trade-offs
comparable per domain.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import httpx

from .errors import EmptyTestSet

HYBRID = "hybrid"
BASELINE_POPULARITY = "popularity"
ABSENT_SLICE = "__absent__"


def temporal_split(
    interactions: Sequence[Mapping],
) -> tuple[list[Mapping], list[Mapping]]:
    """Hold out each user's latest interaction (ties broken by item_id).

    Users with fewer than two interactions stay train-only. Train keeps the
    original event order.
    """
    by_user: dict[str, list[Mapping]] = defaultdict(list)
    for event in interactions:
        by_user[event["user_id"]].append(event)
    held: dict[str, Mapping] = {}
    for user_id, events in by_user.items():
        if len(events) < 2:
            continue
        held[user_id] = max(events, key=lambda e: (e["timestamp"], e["item_id"]))
    train = [e for e in interactions if held.get(e["user_id"]) is not e]
    test = [held[u] for u in sorted(held)]
    return train, test


def hit_metrics(rank: int | None, k: int) -> tuple[float, float, float]:
    """(precision@k, recall@k, ndcg@k) for a single held-out item."""
    if rank is None or rank > k:
        return 0.0, 0.0, 0.0
    return 1.0 / k, 1.0, 1.0 / math.log2(rank + 1)


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; monotone in q by construction."""
    if not values:
        return 0.0
    ordered = sorted(values)
    idx = max(0, math.ceil(q / 100.0 * len(ordered)) - 1)
    return float(ordered[min(idx, len(ordered) - 1)])


def latency_summary(values: Sequence[float]) -> dict[str, float]:
    return {
        "p50": round(percentile(values, 50), 3),
        "p95": round(percentile(values, 95), 3),
        "p99": round(percentile(values, 99), 3),
    }


@dataclass
class EvalRow:
    profile: str
    slice: str
    n_users: int
    precision: float
    recall: float
    ndcg: float

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "slice": self.slice,
            "n_users": self.n_users,
            "precision": self.precision,
            "recall": self.recall,
            "ndcg": self.ndcg,
        }


@dataclass
class EvalReport:
    domain_id: str
    k: int
    n_users: int
    rows: list[EvalRow] = field(default_factory=list)
    latency: dict = field(default_factory=dict)

    def row(self, profile: str, slice_name: str = "overall") -> EvalRow | None:
        for row in self.rows:
            if row.profile == profile and row.slice == slice_name:
                return row
        return None

    def to_dict(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "k": self.k,
            "n_users": self.n_users,
            "rows": [r.to_dict() for r in self.rows],
            "latency": self.latency,
        }


def format_report(report: EvalReport) -> str:
    lines = [
        f"domain={report.domain_id} k={report.k} users={report.n_users}",
        f"{'profile':<14} {'slice':<26} {'users':>6} {'prec@k':>8} {'rec@k':>8} {'ndcg@k':>8}",
    ]
    for row in report.rows:
        lines.append(
            f"{row.profile:<14} {row.slice:<26} {row.n_users:>6} "
            f"{row.precision:>8.4f} {row.recall:>8.4f} {row.ndcg:>8.4f}"
        )
    e2e = report.latency.get("end_to_end", {})
    if e2e:
        lines.append(
            "latency e2e ms: "
            f"p50={e2e.get('p50')} p95={e2e.get('p95')} p99={e2e.get('p99')}"
        )
    for kind, summary in sorted(report.latency.get("sources", {}).items()):
        lines.append(
            f"latency {kind} ms: p50={summary.get('p50')} "
            f"p95={summary.get('p95')} p99={summary.get('p99')}"
        )
    return "\n".join(lines)


def _variant_profiles(profile: dict) -> list[tuple[str, dict]]:
    """The configured hybrid plus one single-source profile per source."""
    variants: list[tuple[str, dict]] = [(HYBRID, profile)]
    kinds_seen: dict[str, int] = defaultdict(int)
    has_popularity = False
    for source in profile["sources"]:
        kind = source["kind"]
        kinds_seen[kind] += 1
        name = kind if kinds_seen[kind] == 1 else f"{kind}#{kinds_seen[kind]}"
        if kind == "popularity":
            has_popularity = True
            name = BASELINE_POPULARITY
        single = {
            "sources": [{"kind": kind, "weight": 1.0, "params": source.get("params", {})}],
            "fusion_mode": "weighted_sum",
        }
        variants.append((name, single))
    if not has_popularity:
        variants.append(
            (
                BASELINE_POPULARITY,
                {
                    "sources": [{"kind": "popularity", "weight": 1.0, "params": {}}],
                    "fusion_mode": "weighted_sum",
                },
            )
        )
    return variants


def _fetch_jsonl(client: httpx.Client, path: str) -> list[dict]:
    import json

    response = client.get(path)
    response.raise_for_status()
    return [json.loads(line) for line in response.text.splitlines() if line.strip()]


def evaluate(
    base_url: str,
    domain_id: str,
    k: int | None = None,
    slice_tags: Iterable[str] | None = None,
    cleanup: bool = True,
    timeout: float = 60.0,
) -> EvalReport:
    """Run the full evaluation protocol against a live server."""
    with httpx.Client(base_url=base_url, timeout=timeout) as client:
        config = client.get(f"/domains/{domain_id}")
        config.raise_for_status()
        config = config.json()
        k = k if k is not None else config["default_k"]

        interactions = _fetch_jsonl(client, f"/domains/{domain_id}/interactions")
        train, test = temporal_split(interactions)
        if not test:
            raise EmptyTestSet(f"no user in {domain_id!r} has >= 2 interactions")

        items = _fetch_jsonl(client, f"/domains/{domain_id}/items")
        embeddings = _fetch_jsonl(client, f"/domains/{domain_id}/embeddings")

        scratch_id = f"{domain_id}--eval"
        client.delete(f"/domains/{scratch_id}")  # 404 is fine
        scratch_config = {
            "domain_id": scratch_id,
            "entity_types": config["entity_types"],
            "interaction_types": config["interaction_types"],
            "profile": config["profile"],
            "default_k": k,
            "latency_budget_ms": config["latency_budget_ms"],
        }
        client.post("/domains", json=scratch_config).raise_for_status()
        try:
            _bulk_post(client, f"/domains/{scratch_id}/items", items)
            _bulk_post(client, f"/domains/{scratch_id}/embeddings", embeddings)
            _bulk_post(client, f"/domains/{scratch_id}/interactions", train)
            report = _evaluate_variants(
                client, scratch_id, domain_id, config["profile"], test, k, slice_tags
            )
        finally:
            if cleanup:
                client.delete(f"/domains/{scratch_id}")
        return report


def _bulk_post(client: httpx.Client, path: str, records: list[dict]) -> None:
    if not records:
        return
    response = client.post(path, json=records)
    response.raise_for_status()


def _evaluate_variants(
    client: httpx.Client,
    scratch_id: str,
    domain_id: str,
    profile: dict,
    test: list[Mapping],
    k: int,
    slice_tags: Iterable[str] | None,
) -> EvalReport:
    report = EvalReport(domain_id=domain_id, k=k, n_users=len(test))
    e2e_latencies: list[float] = []
    source_latencies: dict[str, list[float]] = defaultdict(list)

    if slice_tags is None:
        tags = sorted({tag for event in test for tag in event.get("context", {})})
    else:
        tags = sorted(set(slice_tags))

    for name, variant in _variant_profiles(profile):
        response = client.put(f"/domains/{scratch_id}/profile", json=variant)
        response.raise_for_status()
        per_user: list[tuple[Mapping, tuple[float, float, float]]] = []
        # Warm the derived indexes outside the measured window.
        client.post(
            f"/domains/{scratch_id}/recommendations",
            json={
                "mode": "for_user",
                "user_id": test[0]["user_id"],
                "k": k,
                "latency_budget_ms": 0,
            },
        ).raise_for_status()
        for event in test:
            body = {
                "mode": "for_user",
                "user_id": event["user_id"],
                "k": k,
                "latency_budget_ms": 0,
            }
            result = client.post(
                f"/domains/{scratch_id}/recommendations", json=body
            )
            result.raise_for_status()
            payload = result.json()
            ranked_ids = [entry["item_id"] for entry in payload["items"]]
            rank = (
                ranked_ids.index(event["item_id"]) + 1
                if event["item_id"] in ranked_ids
                else None
            )
            per_user.append((event, hit_metrics(rank, k)))
            e2e_latencies.append(payload["total_latency_ms"])
            for run in payload["sources_used"]:
                source_latencies[run["kind"]].append(run["latency_ms"])
        report.rows.append(_aggregate(name, "overall", per_user))
        for tag in tags:
            groups: dict[str, list] = defaultdict(list)
            for event, metrics in per_user:
                value = event.get("context", {}).get(tag, ABSENT_SLICE)
                groups[value].append((event, metrics))
            for value in sorted(groups):
                report.rows.append(
                    _aggregate(name, f"{tag}={value}", groups[value])
                )

    report.latency = {
        "end_to_end": latency_summary(e2e_latencies),
        "sources": {
            kind: latency_summary(vals) for kind, vals in sorted(source_latencies.items())
        },
    }
    return report


def _aggregate(profile: str, slice_name: str, rows: list) -> EvalRow:
    n = len(rows)
    if n == 0:
        return EvalRow(profile, slice_name, 0, 0.0, 0.0, 0.0)
    precision = sum(m[0] for _, m in rows) / n
    recall = sum(m[1] for _, m in rows) / n
    ndcg = sum(m[2] for _, m in rows) / n
    return EvalRow(profile, slice_name, n, precision, recall, ndcg)
