"""Acceptance suite: one test per criterion, one pass/fail line printed each.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import random
import subprocess
import sys
import textwrap
import time

import httpx
import pytest

from polyrec.bench import latency_bench
from polyrec.embedindex import EmbeddingSpace
from polyrec.engine import RecommenderEngine
from polyrec.evaluation import evaluate
from polyrec.fusion import FusionInput, fuse
from polyrec.reccore import (
    InteractionMatrix,
    RankedList,
    item_cf_recommend,
    user_cf_recommend,
)
from polyrec.server import BackgroundServer
from polyrec import synth

from conftest import make_config
from oracles import brute_item_cf, brute_user_cf


def report(criterion: str, detail: str = ""):
    line = f"[PASS] {criterion}"
    if detail:
        line += f" — {detail}"
    print(f"\n{line}")


UNIFORM_SOURCES = [
    {"kind": "user_cf", "weight": 0.25, "params": {"k_neighbors": 30}},
    {"kind": "content", "weight": 0.25, "params": {"text_fields": ["title", "description"]}},
    {"kind": "embedding", "weight": 0.25, "params": {"space_id": "synth", "prune_m": "full"}},
    {"kind": "popularity", "weight": 0.25, "params": {}},
]

FULL_SOURCES = [
    {"kind": "user_cf", "weight": 0.25, "params": {"k_neighbors": 50}},
    {"kind": "item_cf", "weight": 0.15, "params": {}},
    {"kind": "content", "weight": 0.2, "params": {"text_fields": ["title", "description"]}},
    {"kind": "embedding", "weight": 0.2, "params": {"space_id": "synth", "prune_m": "full"}},
    {"kind": "popularity", "weight": 0.2, "params": {}},
]


def synth_domain_config(domain_id, sources=None, k=10, budget_ms=100):
    return make_config(
        domain_id,
        sources or UNIFORM_SOURCES,
        entity_types=("thing", "gadget"),
        interaction_types=("view", "click"),
        default_k=k,
        latency_budget_ms=budget_ms,
    )


# ---------------------------------------------------------------- criterion 1


def test_criterion_1_cf_oracle_equivalence():
    """User-CF and item-CF match brute force on 100 seeded instances (<10s)."""
    started = time.perf_counter()
    checked = 0
    for run in range(100):
        rng = random.Random(31_000 + run)
        n_users = rng.randint(2, 20)
        n_items = rng.randint(2, 30)
        pairs = sorted(
            {
                (f"u{rng.randint(0, n_users - 1)}", f"i{rng.randint(0, n_items - 1)}")
                for _ in range(rng.randint(1, 120))
            }
        )
        matrix = InteractionMatrix.from_pairs(pairs)
        k_neighbors = rng.randint(1, 8)
        for user in sorted(matrix.user_items):
            expected_u = brute_user_cf(pairs, user, 10, k_neighbors)
            actual_u = user_cf_recommend(matrix, user, 10, k_neighbors)
            assert actual_u.item_ids() == [i for i, _ in expected_u]
            for (_, a), (_, b) in zip(actual_u.entries, expected_u):
                assert abs(a - b) <= 1e-9
            expected_i = brute_item_cf(pairs, user, 10)
            actual_i = item_cf_recommend(matrix, user, 10)
            assert actual_i.item_ids() == [i for i, _ in expected_i]
            for (_, a), (_, b) in zip(actual_i.entries, expected_i):
                assert abs(a - b) <= 1e-9
            checked += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    report(
        "criterion 1: CF oracle equivalence",
        f"100 instances, {checked} user rankings, {elapsed:.2f}s",
    )


# ---------------------------------------------------------------- criterion 2


def test_criterion_2_embedding_oracle_equivalence():
    """query_topk(prune_m=full) equals exact_topk on 50 seeded spaces (<30s)."""
    started = time.perf_counter()
    queries_checked = 0
    for run in range(50):
        rng = random.Random(77_000 + run)
        dim = rng.randint(2, 64)
        n_items = rng.randint(1, 1000)
        space = EmbeddingSpace(f"space{run}", dim)
        for idx in range(n_items):
            vec = [rng.gauss(0, 1) for _ in range(dim)]
            if all(v == 0 for v in vec):
                vec[0] = 1.0
            space.index_vector(f"it{idx:05d}", vec)
        for _ in range(20):
            query = [rng.gauss(0, 1) for _ in range(dim)]
            if all(v == 0 for v in query):
                query[0] = 1.0
            approx = space.query_topk(query, k=10, prune_m="full")
            exact = space.exact_topk(query, k=10)
            assert approx.item_ids() == exact.item_ids()
            for (_, a), (_, b) in zip(approx.entries, exact.entries):
                assert abs(a - b) <= 1e-6
            queries_checked += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    report(
        "criterion 2: embedding index oracle equivalence",
        f"50 spaces, {queries_checked} queries, {elapsed:.2f}s",
    )


# ---------------------------------------------------------------- criterion 3


def test_criterion_3_pruning_tradeoff():
    """recall@10 is 1.0 at prune_m=dim; the curve is reported, ties deterministic."""
    rng = random.Random(64_123)
    dim = 64
    space = EmbeddingSpace("prune", dim)
    for idx in range(1000):
        space.index_vector(f"it{idx:04d}", [rng.gauss(0, 1) for _ in range(dim)])
    queries = [[rng.gauss(0, 1) for _ in range(dim)] for _ in range(50)]
    curve = {}
    for prune_m in (64, 32, 16, 8):
        hits = total = 0
        for query in queries:
            exact_ids = set(space.exact_topk(query, k=10).item_ids())
            approx_ids = set(space.query_topk(query, k=10, prune_m=prune_m).item_ids())
            hits += len(exact_ids & approx_ids)
            total += len(exact_ids)
        curve[prune_m] = hits / total
    assert curve[64] >= 0.99  # definitionally 1.0 at full m
    # Determinism: identical queries give identical lists, and exact score
    # ties order by item id.
    repeat_a = space.query_topk(queries[0], k=10, prune_m=8)
    repeat_b = space.query_topk(queries[0], k=10, prune_m=8)
    assert repeat_a.entries == repeat_b.entries
    twin = EmbeddingSpace("twin", 2)
    twin.index_vector("b", [1.0, 0.0])
    twin.index_vector("a", [1.0, 0.0])
    assert twin.query_topk([1.0, 0.0], k=2).item_ids() == ["a", "b"]
    report(
        "criterion 3: pruning trade-off",
        "recall@10 by prune_m: "
        + ", ".join(f"{m}={curve[m]:.4f}" for m in (64, 32, 16, 8)),
    )


# ---------------------------------------------------------------- criterion 4


def _random_fusion_inputs(rng):
    pool = [f"i{j}" for j in range(rng.randint(1, 30))]
    inputs = []
    for kind in rng.sample(
        ["user_cf", "item_cf", "content", "embedding", "popularity"], rng.randint(1, 5)
    ):
        chosen = rng.sample(pool, rng.randint(0, len(pool)))
        entries = sorted(
            ((i, rng.uniform(-10, 100)) for i in chosen), key=lambda t: (-t[1], t[0])
        )
        inputs.append(FusionInput(kind, rng.uniform(0.05, 5.0), RankedList(entries)))
    return inputs


def test_criterion_4_fusion_invariants():
    """Scaling, zero-weight removal and single-source invariants on 200 inputs each."""
    rng = random.Random(2_026)
    for _ in range(200):
        inputs = _random_fusion_inputs(rng)
        baseline = fuse(inputs, k=15).item_ids()
        idx = rng.randrange(len(inputs))
        factor = rng.uniform(1e-3, 1e3)
        scaled = list(inputs)
        src = scaled[idx]
        scaled[idx] = FusionInput(
            src.kind,
            src.weight,
            RankedList([(i, s * factor) for i, s in src.ranking.entries]),
        )
        assert fuse(scaled, k=15).item_ids() == baseline

    for _ in range(200):
        inputs = _random_fusion_inputs(rng)
        dead_pool = [f"z{j}" for j in range(6)]
        dead_entries = sorted(
            ((i, rng.uniform(0, 10)) for i in dead_pool), key=lambda t: (-t[1], t[0])
        )
        dead = FusionInput("content", 0.0, RankedList(dead_entries))
        assert fuse(inputs + [dead], k=15).entries == fuse(inputs, k=15).entries

    for _ in range(200):
        inputs = _random_fusion_inputs(rng)
        single = [inputs[rng.randrange(len(inputs))]]
        if single[0].weight <= 0:
            continue
        fused = fuse(single, k=100)
        assert fused.item_ids() == single[0].ranking.item_ids()
    report("criterion 4: fusion invariants", "3 invariants x 200 seeded inputs")


# ---------------------------------------------------------------- criterion 5


def test_criterion_5_fault_isolation(tmp_path):
    """All-source failure in A: 100% fallback == popularity oracle; B untouched."""
    engine = RecommenderEngine(tmp_path / "data", max_source_workers=64)
    datasets = {}
    for domain_id, seed in (("doma", 501), ("domb", 502)):
        engine.register_domain(synth_domain_config(domain_id, FULL_SOURCES))
        data = synth.generate(
            entity_types=["thing", "gadget"],
            interaction_types=["view", "click"],
            n_users=60,
            n_items=90,
            n_clusters=3,
            seed=seed,
            events_per_user=10,
            dim=16,
        )
        synth.ingest_dataset(engine, domain_id, data)
        datasets[domain_id] = data

    seen_by_user = {}
    for domain_id, data in datasets.items():
        per_user = {}
        for event in data.interactions:
            per_user.setdefault(event["user_id"], set()).add(event["item_id"])
        seen_by_user[domain_id] = per_user

    users = {d: sorted(seen_by_user[d])[:25] for d in datasets}
    k = 10

    def run_requests(client, domain_id):
        out = {}
        for user in users[domain_id]:
            body = {
                "mode": "for_user",
                "user_id": user,
                "k": k,
                "latency_budget_ms": 0,
            }
            response = client.post(f"/domains/{domain_id}/recommendations", json=body)
            response.raise_for_status()
            out[user] = response.json()
        return out

    with BackgroundServer(engine) as server:
        with httpx.Client(base_url=server.base_url, timeout=60.0) as client:
            baseline_b = run_requests(client, "domb")
            assert all(r["status"] == "ok" for r in baseline_b.values())

            for kind in ("user_cf", "item_cf", "content", "embedding", "popularity"):
                engine.set_fault("doma", kind, "error")

            # Concurrent traffic on both domains while A is fully failing.
            import threading

            results = {}

            def hammer(domain_id):
                with httpx.Client(base_url=server.base_url, timeout=60.0) as c:
                    results[domain_id] = run_requests(c, domain_id)

            threads = [
                threading.Thread(target=hammer, args=("doma",)),
                threading.Thread(target=hammer, args=("domb",)),
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

    fallback_a = results["doma"]
    assert len(fallback_a) == 25
    for user, response in fallback_a.items():
        assert response["status"] == "fallback"
        oracle = engine.popularity_recommend(
            "doma", k, "all_time", exclude=frozenset(seen_by_user["doma"][user])
        )
        assert response["items"] == oracle.to_payload()

    after_b = results["domb"]
    assert all(r["status"] == "ok" for r in after_b.values())
    for user in users["domb"]:
        assert after_b[user]["items"] == baseline_b[user]["items"]
    engine.close()
    report(
        "criterion 5: fault isolation",
        "25/25 A requests fallback==popularity oracle; 25/25 B requests ok and unchanged",
    )


# ---------------------------------------------------------------- criterion 6


@pytest.fixture(scope="module")
def reference_fixture(tmp_path_factory):
    """2 domains, 10k items, 50k interactions, dim-32 embeddings, budget 100ms."""
    root = tmp_path_factory.mktemp("reference")
    engine = RecommenderEngine(root / "data", max_source_workers=128)
    for domain_id, seed in (("alpha", 61), ("beta", 62)):
        engine.register_domain(
            synth_domain_config(domain_id, FULL_SOURCES, budget_ms=100)
        )
        data = synth.generate(
            entity_types=["thing", "gadget"],
            interaction_types=["view", "click"],
            n_users=2500,
            n_items=5000,
            n_clusters=8,
            seed=seed,
            events_per_user=10,
            dim=32,
        )
        synth.ingest_dataset(engine, domain_id, data)
    server = BackgroundServer(engine).start()
    yield engine, server
    server.stop()
    engine.close()


def test_criterion_6_realtime_contract(reference_fixture):
    """p99 <= 120ms, zero timeouts; a 500ms-delayed source times out cleanly."""
    engine, server = reference_fixture
    healthy = {}
    for domain_id in ("alpha", "beta"):
        healthy[domain_id] = latency_bench(
            server.base_url,
            domain_id,
            concurrency=8,
            n_requests=500,
            budget_ms=100,
            k=10,
        )
    for domain_id, result in healthy.items():
        assert result["n"] == 500
        assert result["errors"] == 0
        assert result["latency_ms"]["p99"] <= 120.0, result
        assert result["timeout_rate"] == 0.0, result

    engine.set_fault("alpha", "embedding", "delay", delay_ms=500)
    degraded = latency_bench(
        server.base_url, "alpha", concurrency=8, n_requests=300, budget_ms=100, k=10
    )
    engine.clear_faults("alpha")
    assert degraded["n"] == 300
    assert degraded["latency_ms"]["p99"] <= 120.0, degraded
    timeout_fraction = degraded["source_timeouts"].get("embedding", 0) / degraded["n"]
    assert timeout_fraction >= 0.99, degraded
    report(
        "criterion 6: real-time contract",
        f"healthy p99: alpha={healthy['alpha']['latency_ms']['p99']}ms, "
        f"beta={healthy['beta']['latency_ms']['p99']}ms; "
        f"delayed p99={degraded['latency_ms']['p99']}ms, "
        f"embedding timeout rate={timeout_fraction:.3f}",
    )


# ------------------------------------------------------- criteria 7 and 9


@pytest.fixture(scope="module")
def signal_recovery_report(tmp_path_factory):
    root = tmp_path_factory.mktemp("signal")
    engine = RecommenderEngine(root / "data")
    engine.register_domain(synth_domain_config("signal", UNIFORM_SOURCES))
    data = synth.generate(
        entity_types=["thing", "gadget"],
        interaction_types=["view", "click"],
        n_users=200,
        n_items=400,
        n_clusters=4,
        seed=94,
        events_per_user=12,
        dim=32,
    )
    synth.ingest_dataset(engine, "signal", data)
    with BackgroundServer(engine) as server:
        result = evaluate(server.base_url, "signal", k=10)
    engine.close()
    return result


def test_criterion_7_signal_recovery(signal_recovery_report):
    """Each planted-signal source beats popularity; hybrid within 0.02 of best."""
    result = signal_recovery_report
    pop = result.row("popularity").precision
    singles = {}
    for kind in ("user_cf", "content", "embedding"):
        singles[kind] = result.row(kind).precision
        assert singles[kind] > pop, (kind, singles[kind], pop)
    hybrid = result.row("hybrid").precision
    best = max(singles.values())
    assert hybrid >= best - 0.02, (hybrid, best)
    report(
        "criterion 7: signal recovery",
        f"precision@10 popularity={pop:.4f}, "
        + ", ".join(f"{k}={v:.4f}" for k, v in singles.items())
        + f", hybrid={hybrid:.4f}",
    )


def test_criterion_9_context_slicing(signal_recovery_report):
    """Weighted mean of per-slice precision equals overall within 1e-9."""
    result = signal_recovery_report
    profiles = {row.profile for row in result.rows}
    values_seen = set()
    for profile in profiles:
        overall = result.row(profile)
        slices = [
            row
            for row in result.rows
            if row.profile == profile and row.slice.startswith(f"{synth.CONTEXT_TAG}=")
        ]
        assert slices, profile
        values_seen.update(row.slice.split("=", 1)[1] for row in slices)
        assert sum(row.n_users for row in slices) == overall.n_users
        weighted = (
            sum(row.n_users * row.precision for row in slices) / overall.n_users
        )
        assert abs(weighted - overall.precision) <= 1e-9
    assert len(values_seen) == 3
    report(
        "criterion 9: context slicing",
        f"{len(profiles)} profiles x 3 context values partition exactly",
    )


# ---------------------------------------------------------------- criterion 8


def _durability_records(seed):
    rng = random.Random(seed)
    n_items = rng.randint(8, 16)
    items = [
        {
            "item_id": f"i{j:03d}",
            "entity_type": "thing",
            "text_fields": {
                "title": f"tok{rng.randint(0, 6)} tok{rng.randint(0, 6)}",
                "description": f"tok{rng.randint(0, 6)}",
            },
        }
        for j in range(n_items)
    ]
    embeddings = [
        {
            "item_id": f"i{j:03d}",
            "space_id": "synth",
            "vector": [rng.gauss(0, 1) for _ in range(6)],
        }
        for j in range(n_items)
    ]
    interactions = [
        {
            "user_id": f"u{rng.randint(0, 5)}",
            "item_id": f"i{rng.randint(0, n_items - 1):03d}",
            "interaction_type": rng.choice(["view", "click"]),
            "timestamp": 1000 + j,
            "context": {"location": rng.choice(["a", "b", "c"])},
        }
        for j in range(rng.randint(20, 60))
    ]
    return items, interactions, embeddings


_CHILD_INGESTER = textwrap.dedent(
    """
    import json, os, sys
    from polyrec.engine import RecommenderEngine
    payload = json.loads(sys.stdin.read())
    engine = RecommenderEngine(sys.argv[1])
    engine.register_domain(payload["config"])
    engine.ingest_items("dur", payload["items"])
    engine.ingest_interactions("dur", payload["interactions"])
    engine.ingest_embeddings("dur", payload["embeddings"])
    print("ACKED", flush=True)
    os._exit(1)  # hard kill: no shutdown hooks, no buffered flush
    """
)


def _source_rankings(engine, domain_id, users):
    """Fused items plus per-source rankings for a sample of users."""
    out = {}
    for user in users:
        response = engine.recommend(
            domain_id,
            {"mode": "for_user", "user_id": user, "k": 10, "latency_budget_ms": 0},
        )
        out[user] = {
            "status": response.status,
            "items": response.items.entries,
            "sources": sorted(
                (run.kind, run.outcome) for run in response.sources_used
            ),
        }
    out["__popularity__"] = engine.popularity_recommend(domain_id, 10).entries
    return out


def test_criterion_8_durability_replay(tmp_path):
    """20 seeded kill-and-restart runs reproduce rankings exactly."""
    config = synth_domain_config("dur", FULL_SOURCES)
    users = [f"u{j}" for j in range(6)]
    for run in range(20):
        seed = 88_000 + run
        items, interactions, embeddings = _durability_records(seed)
        payload = json.dumps(
            {
                "config": config,
                "items": items,
                "interactions": interactions,
                "embeddings": embeddings,
            }
        )
        killed_dir = tmp_path / f"killed-{run}"
        if run % 5 == 0:
            # Full kill semantics: child acks then hard-exits mid-process.
            proc = subprocess.run(
                [sys.executable, "-c", _CHILD_INGESTER, str(killed_dir)],
                input=payload,
                capture_output=True,
                text=True,
                timeout=180,
            )
            assert "ACKED" in proc.stdout, proc.stderr
        else:
            writer = RecommenderEngine(killed_dir)
            writer.register_domain(config)
            writer.ingest_items("dur", items)
            writer.ingest_interactions("dur", interactions)
            writer.ingest_embeddings("dur", embeddings)
            writer.close()  # acked events are already fsynced; no extra flush

        uninterrupted = RecommenderEngine(tmp_path / f"live-{run}")
        uninterrupted.register_domain(config)
        uninterrupted.ingest_items("dur", items)
        uninterrupted.ingest_interactions("dur", interactions)
        uninterrupted.ingest_embeddings("dur", embeddings)
        expected = _source_rankings(uninterrupted, "dur", users)
        uninterrupted.close()

        restarted = RecommenderEngine(killed_dir)
        actual = _source_rankings(restarted, "dur", users)
        restarted.close()
        assert actual == expected, f"seed {seed} diverged after restart"
    report("criterion 8: durability/replay", "20 seeded runs, exact ranking equality")
