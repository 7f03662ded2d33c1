"""Latency benchmark driving the full HTTP path at a fixed concurrency."""

from __future__ import annotations

import json
import random
import threading
import time
from collections import Counter

import httpx

from .evaluation import latency_summary

_WARMUP_REQUESTS = 3


def latency_bench(
    base_url: str,
    domain_id: str,
    concurrency: int,
    n_requests: int,
    budget_ms: int | None = None,
    k: int | None = None,
    seed: int = 0,
    timeout: float = 30.0,
) -> dict:
    """Issue n_requests recommendation calls and report latency percentiles.

    The timeout rate counts responses in which at least one source missed
    the budget; the fallback rate counts responses served from popularity.
    """
    if n_requests <= 0:
        return {
            "n": 0,
            "latency_ms": {},
            "timeout_rate": 0.0,
            "fallback_rate": 0.0,
            "status_counts": {},
            "source_timeouts": {},
        }
    rng = random.Random(seed)
    with httpx.Client(base_url=base_url, timeout=timeout) as probe:
        response = probe.get(f"/domains/{domain_id}/interactions")
        response.raise_for_status()
        users = sorted(
            {json.loads(line)["user_id"]
             for line in response.text.splitlines() if line.strip()}
        )
    if not users:
        users = ["bench-user"]
    rng.shuffle(users)

    bodies = []
    for i in range(n_requests):
        body = {"mode": "for_user", "user_id": users[i % len(users)]}
        if k is not None:
            body["k"] = k
        if budget_ms is not None:
            body["latency_budget_ms"] = budget_ms
        bodies.append(body)

    path = f"/domains/{domain_id}/recommendations"
    with httpx.Client(base_url=base_url, timeout=timeout) as warm:
        for i in range(min(_WARMUP_REQUESTS, n_requests)):
            warm.post(path, json=bodies[i]).raise_for_status()

    latencies: list[float] = []
    statuses: Counter[str] = Counter()
    timeout_hits = 0
    source_timeouts: Counter[str] = Counter()
    errors = 0
    next_index = [0]
    lock = threading.Lock()

    def worker() -> None:
        nonlocal timeout_hits, errors
        with httpx.Client(base_url=base_url, timeout=timeout) as client:
            while True:
                with lock:
                    idx = next_index[0]
                    if idx >= n_requests:
                        return
                    next_index[0] += 1
                t0 = time.perf_counter()
                try:
                    response = client.post(path, json=bodies[idx])
                    elapsed = (time.perf_counter() - t0) * 1000.0
                    payload = response.json()
                except httpx.HTTPError:
                    with lock:
                        errors += 1
                    continue
                timed_out = [
                    run["kind"]
                    for run in payload.get("sources_used", [])
                    if run["outcome"] == "timeout"
                ]
                with lock:
                    latencies.append(elapsed)
                    statuses[payload.get("status", "error")] += 1
                    if timed_out:
                        timeout_hits += 1
                        for kind in timed_out:
                            source_timeouts[kind] += 1

    threads = [
        threading.Thread(target=worker, daemon=True)
        for _ in range(max(1, concurrency))
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    n = len(latencies)
    return {
        "n": n,
        "errors": errors,
        "latency_ms": {
            **latency_summary(latencies),
            "mean": round(sum(latencies) / n, 3) if n else 0.0,
            "max": round(max(latencies), 3) if n else 0.0,
        },
        "timeout_rate": timeout_hits / n if n else 0.0,
        "fallback_rate": statuses.get("fallback", 0) / n if n else 0.0,
        "status_counts": dict(statuses),
        "source_timeouts": dict(source_timeouts),
    }
