"""Request-path orchestration: one engine hosting many isolated domains.

Each domain owns its event log, its state views and its worker pool. A
recommendation request snapshots the domain's config and state once, fans
out to the configured sources in parallel under the latency budget, fuses
whatever survived and falls back to popularity when nothing did. Failures
and timeouts are outcomes, never exceptions, and nothing in one domain can
touch another domain's workers or state.
"""

from __future__ import annotations

import shutil
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import storage
from .catalog import (
    EmbeddingRecord,
    Interaction,
    Item,
    StateBuilder,
    StateView,
    parse_embedding,
    parse_interaction,
    parse_item,
)
from .embedindex import EmbeddingSpace
from .errors import (
    CorruptSnapshot,
    InjectedFault,
    InvalidConfig,
    MalformedRequest,
    UnknownDomain,
    ZeroTotalWeight,
    ZeroVector,
)
from .fusion import FusionInput, apply_filters, fuse
from .registry import AlgorithmProfile, DomainConfig, DomainRegistry, DEFAULT_K_NEIGHBORS
from .reccore import (
    InteractionMatrix,
    RankedList,
    item_cf_recommend,
    item_cf_similar,
    popularity_rank,
    user_cf_recommend,
)

K_HARD_CAP = 1000

# Sources that can answer a similar_to request; user-only sources are skipped.
_ITEM_MODE_KINDS = frozenset({"content", "embedding", "item_cf"})


@dataclass(frozen=True)
class RecommendRequest:
    mode: str
    user_id: str | None = None
    item_id: str | None = None
    k: int | None = None
    context: dict[str, str] = field(default_factory=dict)
    allowed_entity_types: frozenset[str] | None = None
    exclude_items: frozenset[str] = frozenset()
    latency_budget_ms: int | None = None  # None: domain default; 0: unlimited


_REQUEST_FIELDS = {
    "mode",
    "user_id",
    "item_id",
    "k",
    "context",
    "allowed_entity_types",
    "exclude_items",
    "latency_budget_ms",
    "domain_id",
}


def parse_recommend_request(raw: Any) -> RecommendRequest:
    if not isinstance(raw, dict):
        raise MalformedRequest("request body must be a JSON object")
    unknown = set(raw) - _REQUEST_FIELDS
    if unknown:
        raise MalformedRequest(f"unknown request fields: {sorted(unknown)}")
    mode = raw.get("mode")
    if mode not in ("for_user", "similar_to"):
        raise MalformedRequest("mode must be \"for_user\" or \"similar_to\"")
    user_id = raw.get("user_id")
    item_id = raw.get("item_id")
    if mode == "for_user":
        if not isinstance(user_id, str) or not user_id:
            raise MalformedRequest("for_user mode requires user_id")
        if item_id is not None:
            raise MalformedRequest("for_user mode does not accept item_id")
    else:
        if not isinstance(item_id, str) or not item_id:
            raise MalformedRequest("similar_to mode requires item_id")
        if user_id is not None:
            raise MalformedRequest("similar_to mode does not accept user_id")
    k = raw.get("k")
    if k is not None:
        if isinstance(k, bool) or not isinstance(k, int) or k <= 0:
            raise MalformedRequest("k must be a positive integer")
        if k > K_HARD_CAP:
            raise MalformedRequest(f"k exceeds the hard cap of {K_HARD_CAP}")
    context = raw.get("context", {}) or {}
    if not isinstance(context, dict) or not all(
        isinstance(tag, str) and tag and isinstance(v, str)
        for tag, v in context.items()
    ):
        raise MalformedRequest("context must map nonempty tags to strings")
    allowed = raw.get("allowed_entity_types")
    if allowed is not None:
        if not isinstance(allowed, (list, set, frozenset)) or not all(
            isinstance(t, str) for t in allowed
        ):
            raise MalformedRequest("allowed_entity_types must be a list of strings")
        allowed = frozenset(allowed)
    exclude = raw.get("exclude_items", []) or []
    if not isinstance(exclude, (list, set, frozenset)) or not all(
        isinstance(i, str) for i in exclude
    ):
        raise MalformedRequest("exclude_items must be a list of item ids")
    budget = raw.get("latency_budget_ms")
    if budget is not None and (
        isinstance(budget, bool) or not isinstance(budget, int) or budget < 0
    ):
        raise MalformedRequest("latency_budget_ms must be a non-negative integer")
    return RecommendRequest(
        mode=mode,
        user_id=user_id,
        item_id=item_id,
        k=k,
        context=dict(context),
        allowed_entity_types=allowed,
        exclude_items=frozenset(exclude),
        latency_budget_ms=budget,
    )


@dataclass
class SourceRun:
    kind: str
    outcome: str  # ok | timeout | error | empty
    ranking: RankedList | None
    latency_ms: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "latency_ms": round(self.latency_ms, 3),
            "outcome": self.outcome,
        }


@dataclass
class RecommendResponse:
    items: RankedList
    status: str  # ok | degraded | fallback | empty
    sources_used: list[SourceRun]
    profile_version: int
    total_latency_ms: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "items": self.items.to_payload(),
            "status": self.status,
            "sources_used": [run.to_dict() for run in self.sources_used],
            "profile_version": self.profile_version,
            "total_latency_ms": round(self.total_latency_ms, 3),
        }


@dataclass
class IngestResult:
    accepted: int
    rejected: list[tuple[int, str]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "accepted": self.accepted,
            "rejected": [{"line": line, "reason": reason} for line, reason in self.rejected],
        }


def _run_timed(fn: Callable[[], RankedList]):
    """Run one source; failures become ('error', exc) so joins never raise."""
    t0 = time.perf_counter()
    try:
        ranking = fn()
        latency = (time.perf_counter() - t0) * 1000.0
        return ("ok" if ranking.entries else "empty", ranking, latency)
    except Exception as exc:  # noqa: BLE001 - any source failure is an outcome
        latency = (time.perf_counter() - t0) * 1000.0
        return ("error", exc, latency)


def enforce_deadline(
    executor: ThreadPoolExecutor,
    tasks: Sequence[tuple[str, Callable[[], RankedList]]],
    budget_ms: int,
) -> list[SourceRun]:
    """Run sources in parallel, each given the full budget.

    A source still pending at the deadline is marked timeout and its result,
    should it ever complete, is discarded. budget_ms = 0 disables the
    deadline (test mode).
    """
    submitted = [(kind, executor.submit(_run_timed, fn)) for kind, fn in tasks]
    if not submitted:
        return []
    timeout = None if budget_ms == 0 else budget_ms / 1000.0
    done, pending = wait([f for _, f in submitted], timeout=timeout)
    runs = []
    for kind, future in submitted:
        if future in done:
            outcome, value, latency = future.result()
            ranking = value if outcome in ("ok", "empty") else None
            runs.append(SourceRun(kind, outcome, ranking, latency))
        else:
            future.cancel()
            runs.append(SourceRun(kind, "timeout", None, float(budget_ms)))
    return runs


class _Domain:
    """Per-domain runtime: log, state views, workers, faults, counters."""

    def __init__(
        self,
        domain_id: str,
        directory: Path,
        log: storage.EventLog,
        lock: threading.Lock,
        max_workers: int,
    ):
        self.domain_id = domain_id
        self.dir = directory
        self.log = log
        self.lock = lock
        self.state = StateBuilder().build()
        self.executor = ThreadPoolExecutor(
            max_workers=max_workers, thread_name_prefix=f"src-{domain_id}"
        )
        self.faults: dict[str, tuple[str, int]] = {}
        self.failed = False
        self.outcomes: Counter[str] = Counter()
        self._counter_lock = threading.Lock()

    def record_outcome(self, status: str) -> None:
        with self._counter_lock:
            self.outcomes[status] += 1

    def close(self) -> None:
        self.executor.shutdown(wait=False, cancel_futures=True)
        self.log.close()


class RecommenderEngine:
    """Hosts all domains of one deployment over a data directory."""

    def __init__(
        self,
        data_dir: str | Path,
        default_budget_ms: int = 100,
        max_source_workers: int = 64,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.default_budget_ms = default_budget_ms
        self.max_source_workers = max_source_workers
        self._domains: dict[str, _Domain] = {}
        self.registry = DomainRegistry(on_persist=self._persist)
        self._load_existing()

    # ------------------------------------------------------------- admin

    def _persist(self, kind: str, domain_id: str, payload: dict) -> None:
        if kind == "domain_registered":
            directory = self.data_dir / domain_id
            log = storage.EventLog(directory / storage.LOG_FILENAME)
            log.append_batch([(kind, payload)])
            dom = _Domain(
                domain_id,
                directory,
                log,
                self.registry.write_lock(domain_id),
                self.max_source_workers,
            )
            dom.state.seq = log.last_seq
            self._domains[domain_id] = dom
        elif kind == "profile_updated":
            self._domains[domain_id].log.append_batch([(kind, payload)])

    def register_domain(self, config: DomainConfig | dict) -> int:
        if isinstance(config, dict):
            config = DomainConfig.from_dict(config)
        return self.registry.register(config)

    def update_profile(self, domain_id: str, profile: AlgorithmProfile | dict) -> int:
        if not self.registry.contains(domain_id):
            raise UnknownDomain(domain_id)
        if isinstance(profile, dict):
            profile = AlgorithmProfile.from_dict(profile)
        return self.registry.update_profile(domain_id, profile)

    def get_domain(self, domain_id: str) -> DomainConfig:
        return self.registry.get(domain_id)

    def delete_domain(self, domain_id: str) -> None:
        dom = self._get_domain(domain_id)
        with dom.lock:
            self.registry.remove(domain_id)
            self._domains.pop(domain_id, None)
            dom.close()
        shutil.rmtree(dom.dir, ignore_errors=True)

    def domain_ids(self) -> list[str]:
        return self.registry.domain_ids()

    def _get_domain(self, domain_id: str) -> _Domain:
        dom = self._domains.get(domain_id)
        if dom is None:
            raise UnknownDomain(domain_id)
        return dom

    # ------------------------------------------------------------ ingest

    def ingest_items(self, domain_id: str, records: Iterable[Any]) -> IngestResult:
        dom = self._get_domain(domain_id)
        config = self.registry.get(domain_id)
        parsed: list[Item] = []
        rejected: list[tuple[int, str]] = []
        for line_no, raw in enumerate(records, start=1):
            item, reason = parse_item(raw, config.entity_types)
            if reason:
                rejected.append((line_no, reason))
            else:
                parsed.append(item)
        if parsed:
            self._commit(dom, [("item_upserted", it.to_dict()) for it in parsed])
        return IngestResult(len(parsed), rejected)

    def ingest_interactions(
        self, domain_id: str, records: Iterable[Any]
    ) -> IngestResult:
        dom = self._get_domain(domain_id)
        config = self.registry.get(domain_id)
        parsed: list[Interaction] = []
        rejected: list[tuple[int, str]] = []
        for line_no, raw in enumerate(records, start=1):
            event, reason = parse_interaction(raw, config.interaction_types)
            if reason:
                rejected.append((line_no, reason))
            else:
                parsed.append(event)
        if parsed:
            self._commit(
                dom, [("interaction_appended", ev.to_dict()) for ev in parsed]
            )
        return IngestResult(len(parsed), rejected)

    def ingest_embeddings(self, domain_id: str, records: Iterable[Any]) -> IngestResult:
        dom = self._get_domain(domain_id)
        with dom.lock:
            # Dimension checks depend on current space state, so validation
            # runs under the writer lock; the first record of a new space
            # fixes that space's dimension for the rest of the batch.
            dims = {sid: sp.dim for sid, sp in dom.state.spaces.items()}
            parsed: list[EmbeddingRecord] = []
            rejected: list[tuple[int, str]] = []
            for line_no, raw in enumerate(records, start=1):
                record, reason = parse_embedding(raw)
                if reason:
                    rejected.append((line_no, reason))
                    continue
                known = dims.get(record.space_id)
                if known is None:
                    dims[record.space_id] = len(record.vector)
                elif len(record.vector) != known:
                    rejected.append(
                        (
                            line_no,
                            f"DimensionMismatch: space {record.space_id!r} has "
                            f"dimension {known}, got {len(record.vector)}",
                        )
                    )
                    continue
                parsed.append(record)
            if parsed:
                self._commit_locked(
                    dom, [("embedding_indexed", r.to_dict()) for r in parsed]
                )
        return IngestResult(len(parsed), rejected)

    def _commit(self, dom: _Domain, events: list[tuple[str, dict]]) -> None:
        with dom.lock:
            self._commit_locked(dom, events)

    def _commit_locked(self, dom: _Domain, events: list[tuple[str, dict]]) -> None:
        try:
            dom.log.append_batch(events)  # durable before visible
        except Exception:
            dom.failed = True
            raise
        builder = StateBuilder(dom.state)
        for kind, payload in events:
            _apply_payload(builder, kind, payload)
        view = builder.build()
        view.seq = dom.log.last_seq
        view.last_ingest_ms = int(time.time() * 1000)
        dom.state = view

    # -------------------------------------------------------- persistence

    def snapshot(self, domain_id: str) -> str:
        dom = self._get_domain(domain_id)
        config = self.registry.get(domain_id)
        with dom.lock:
            view = dom.state
            interactions = [
                env["payload"]
                for env in dom.log.read_after(0)
                if env["kind"] == "interaction_appended" and env["seq"] <= view.seq
            ]
            doc = {
                "seq": view.seq,
                "config": config.to_dict(),
                "items": [view.items[i].to_dict() for i in sorted(view.items)],
                "interactions": interactions,
                "spaces": [
                    view.spaces[sid].to_records() for sid in sorted(view.spaces)
                ],
            }
            return storage.write_snapshot(dom.dir, view.seq, doc)

    def restore(self, domain_id: str, handle: str) -> None:
        dom = self._get_domain(domain_id)
        with dom.lock:
            doc = storage.read_snapshot(dom.dir, handle)
            if doc["config"].get("domain_id") != domain_id:
                raise CorruptSnapshot("snapshot belongs to a different domain")
            config, builder = _state_from_snapshot(doc)
            last_seq = int(doc["seq"])
            for envelope in dom.log.read_after(last_seq):
                config = _apply_envelope(builder, envelope, config)
                last_seq = envelope["seq"]
            view = builder.build()
            view.seq = last_seq
            dom.state = view
            self.registry.install(config)

    def _load_existing(self) -> None:
        for directory in storage.domain_dirs(self.data_dir):
            domain_id = directory.name
            log = storage.EventLog(directory / storage.LOG_FILENAME)
            config: DomainConfig | None = None
            builder = StateBuilder()
            after = 0
            handle = storage.latest_snapshot(directory)
            if handle is not None:
                try:
                    doc = storage.read_snapshot(directory, handle)
                    config, builder = _state_from_snapshot(doc)
                    after = int(doc["seq"])
                except CorruptSnapshot:
                    config, builder, after = None, StateBuilder(), 0
            last_seq = after
            for envelope in log.read_after(after):
                config = _apply_envelope(builder, envelope, config)
                last_seq = envelope["seq"]
            if config is None:
                log.close()  # directory without a registration event
                continue
            dom = _Domain(
                domain_id,
                directory,
                log,
                self.registry.write_lock(domain_id),
                self.max_source_workers,
            )
            view = builder.build()
            view.seq = max(last_seq, log.last_seq)
            dom.state = view
            self._domains[domain_id] = dom
            self.registry.install(config)

    # ------------------------------------------------------------ serving

    def popularity_recommend(
        self,
        domain_id: str,
        k: int,
        window: int | str = "all_time",
        exclude: frozenset[str] = frozenset(),
    ) -> RankedList:
        dom = self._get_domain(domain_id)
        return popularity_rank(dom.state.popularity_counts(window), k, exclude)

    def recommend(self, domain_id: str, request: RecommendRequest | dict) -> RecommendResponse:
        t0 = time.perf_counter()
        dom = self._get_domain(domain_id)
        config = self.registry.get(domain_id)
        if isinstance(request, dict):
            request = parse_recommend_request(request)
        view = dom.state  # one consistent snapshot for the whole request
        k = request.k if request.k is not None else config.default_k
        budget_ms = (
            request.latency_budget_ms
            if request.latency_budget_ms is not None
            else config.latency_budget_ms
        )

        exclude: set[str] = set(request.exclude_items)
        seen: frozenset[str] = frozenset()
        if request.mode == "for_user":
            seen = frozenset(view.user_items.get(request.user_id, ()))
            exclude |= seen
        else:
            exclude.add(request.item_id)
        if request.allowed_entity_types is not None:
            allowed = request.allowed_entity_types
            exclude.update(
                item_id
                for item_id, etype in view.entity_type_map().items()
                if etype not in allowed
            )
            exclude.update(view.dangling)  # unknown type cannot pass the filter
        exclude_f = frozenset(exclude)

        applicable = [
            spec
            for spec in config.profile.sources
            if request.mode == "for_user" or spec.kind in _ITEM_MODE_KINDS
        ]
        tasks = [
            (spec.kind, self._source_job(dom, spec, view, request, k, exclude_f, seen))
            for spec in applicable
        ]
        runs = enforce_deadline(dom.executor, tasks, budget_ms)

        inputs = [
            FusionInput(spec.kind, spec.weight, run.ranking)
            for spec, run in zip(applicable, runs)
            if run.ranking is not None
        ]
        fused = RankedList([], "fused")
        if inputs:
            try:
                fused = fuse(inputs, k, exclude_f)
            except ZeroTotalWeight:
                fused = RankedList([], "fused")
        if request.allowed_entity_types is not None:
            fused = apply_filters(
                fused,
                exclude_f,
                request.allowed_entity_types,
                view.entity_type_map(),
            )

        if fused.entries:
            status = "ok" if all(run.outcome == "ok" for run in runs) else "degraded"
            items = fused
        else:
            window = _fallback_window(config.profile)
            pop = popularity_rank(view.popularity_counts(window), k, exclude_f)
            if pop.entries:
                status, items = "fallback", pop
            else:
                status, items = "empty", RankedList([], "popularity")

        dom.record_outcome(status)
        return RecommendResponse(
            items=items,
            status=status,
            sources_used=runs,
            profile_version=config.version,
            total_latency_ms=(time.perf_counter() - t0) * 1000.0,
        )

    def _source_job(
        self,
        dom: _Domain,
        spec,
        view: StateView,
        request: RecommendRequest,
        k: int,
        exclude: frozenset[str],
        seen: frozenset[str],
    ) -> Callable[[], RankedList]:
        fault = dom.faults.get(spec.kind)

        def job() -> RankedList:
            if fault is not None:
                mode, delay_ms = fault
                if mode == "delay":
                    time.sleep(delay_ms / 1000.0)
                else:
                    raise InjectedFault(f"injected failure for {spec.kind}")
            return self._run_source(spec, view, request, k, exclude, seen)

        return job

    def _run_source(
        self,
        spec,
        view: StateView,
        request: RecommendRequest,
        k: int,
        exclude: frozenset[str],
        seen: frozenset[str],
    ) -> RankedList:
        kind = spec.kind
        if request.mode == "for_user":
            if kind == "user_cf":
                matrix = InteractionMatrix(view.user_items, view.item_users)
                ranked = user_cf_recommend(
                    matrix,
                    request.user_id,
                    k + len(exclude - seen),
                    spec.param("k_neighbors", DEFAULT_K_NEIGHBORS),
                )
                return _drop_excluded(ranked, exclude, k)
            if kind == "item_cf":
                matrix = InteractionMatrix(view.user_items, view.item_users)
                ranked = item_cf_recommend(matrix, request.user_id, k + len(exclude - seen))
                return _drop_excluded(ranked, exclude, k)
            if kind == "content":
                fields = spec.param("text_fields")
                index = view.content_index(tuple(fields) if fields else None)
                return index.recommend_for_user(seen, k, exclude)
            if kind == "embedding":
                return self._embedding_for_user(spec, view, seen, k, exclude)
            if kind == "popularity":
                window = spec.param("window", "all_time")
                return popularity_rank(view.popularity_counts(window), k, exclude)
        else:
            if kind == "content":
                fields = spec.param("text_fields")
                index = view.content_index(tuple(fields) if fields else None)
                return index.similar_items(request.item_id, k, exclude)
            if kind == "embedding":
                space = _require_space(view, spec.param("space_id"))
                vector = space.vectors.get(request.item_id)
                if vector is None:
                    return RankedList([], "embedding")
                return space.query_topk(
                    vector, k, spec.param("prune_m", "full"), exclude
                )
            if kind == "item_cf":
                matrix = InteractionMatrix(view.user_items, view.item_users)
                return item_cf_similar(matrix, request.item_id, k, exclude)
        raise InvalidConfig(f"source kind {kind!r} cannot serve mode {request.mode!r}")

    def _embedding_for_user(
        self,
        spec,
        view: StateView,
        seen: frozenset[str],
        k: int,
        exclude: frozenset[str],
    ) -> RankedList:
        """Query with the mean vector of the user's items in this space."""
        space = _require_space(view, spec.param("space_id"))
        profile = None
        for item_id in sorted(seen):  # pinned order: bit-exact replays
            vector = space.vectors.get(item_id)
            if vector is not None:
                profile = vector if profile is None else profile + vector
        if profile is None:
            return RankedList([], "embedding")
        try:
            return space.query_topk(profile, k, spec.param("prune_m", "full"), exclude)
        except ZeroVector:
            return RankedList([], "embedding")

    # ------------------------------------------------------------- health

    def health(self) -> dict[str, Any]:
        domains: dict[str, Any] = {}
        for domain_id in self.registry.domain_ids():
            dom = self._domains.get(domain_id)
            if dom is None:
                continue
            view = dom.state
            domains[domain_id] = {
                "healthy": not dom.failed,
                "items": len(view.items),
                "interactions": view.n_interactions,
                "embedding_spaces": len(view.spaces),
                "dangling_items": len(view.dangling),
                "last_ingest_ms": view.last_ingest_ms,
                "request_outcomes": dict(dom.outcomes),
            }
        return {"domains": domains}

    # --------------------------------------------------------- test seams

    def set_fault(
        self, domain_id: str, source_kind: str, mode: str, delay_ms: int = 0
    ) -> None:
        """Inject 'error' or 'delay' into one source of one domain."""
        if mode not in ("error", "delay"):
            raise ValueError("fault mode must be 'error' or 'delay'")
        self._get_domain(domain_id).faults[source_kind] = (mode, delay_ms)

    def clear_faults(self, domain_id: str) -> None:
        self._get_domain(domain_id).faults.clear()

    def set_domain_failed(self, domain_id: str, failed: bool = True) -> None:
        self._get_domain(domain_id).failed = failed

    # ------------------------------------------------------------- export

    def iter_items(self, domain_id: str) -> list[dict]:
        view = self._get_domain(domain_id).state
        return [view.items[i].to_dict() for i in sorted(view.items)]

    def iter_interactions(self, domain_id: str) -> list[dict]:
        dom = self._get_domain(domain_id)
        return [
            env["payload"]
            for env in dom.log.read_after(0)
            if env["kind"] == "interaction_appended"
        ]

    def iter_embeddings(self, domain_id: str) -> list[dict]:
        view = self._get_domain(domain_id).state
        records = []
        for sid in sorted(view.spaces):
            space = view.spaces[sid]
            for item_id in sorted(space.vectors):
                records.append(
                    {
                        "item_id": item_id,
                        "space_id": sid,
                        "vector": space.vectors[item_id].tolist(),
                    }
                )
        return records

    def close(self) -> None:
        for dom in list(self._domains.values()):
            dom.close()


def _drop_excluded(ranked: RankedList, exclude: frozenset[str], k: int) -> RankedList:
    if not exclude:
        return RankedList(ranked.entries[:k], ranked.source_kind)
    entries = [(i, s) for i, s in ranked.entries if i not in exclude]
    return RankedList(entries[:k], ranked.source_kind)


def _require_space(view: StateView, space_id: str) -> EmbeddingSpace:
    space = view.spaces.get(space_id)
    if space is None:
        # Deferred validation: the profile may reference a space whose
        # vectors have not arrived yet; failing here degrades the request.
        raise InvalidConfig(f"embedding space {space_id!r} has not been ingested")
    return space


def _fallback_window(profile: AlgorithmProfile) -> int | str:
    for spec in profile.sources:
        if spec.kind == "popularity":
            return spec.param("window", "all_time")
    return "all_time"


def _apply_payload(builder: StateBuilder, kind: str, payload: dict) -> None:
    if kind == "item_upserted":
        builder.apply_item(
            Item(
                item_id=payload["item_id"],
                entity_type=payload["entity_type"],
                text_fields=dict(payload.get("text_fields", {})),
                attributes=dict(payload.get("attributes", {})),
                created_at=payload.get("created_at", 0),
            )
        )
    elif kind == "interaction_appended":
        builder.apply_interaction(
            Interaction(
                user_id=payload["user_id"],
                item_id=payload["item_id"],
                interaction_type=payload["interaction_type"],
                timestamp=payload["timestamp"],
                context=dict(payload.get("context", {})),
            )
        )
    elif kind == "embedding_indexed":
        builder.apply_embedding(
            EmbeddingRecord(
                item_id=payload["item_id"],
                space_id=payload["space_id"],
                vector=tuple(payload["vector"]),
            )
        )


def _apply_envelope(
    builder: StateBuilder, envelope: dict, config: DomainConfig | None
) -> DomainConfig | None:
    kind = envelope["kind"]
    payload = envelope["payload"]
    if kind == "domain_registered":
        return DomainConfig.from_dict(payload)
    if kind == "profile_updated":
        if config is None:
            raise CorruptSnapshot("profile update before registration in log")
        return replace(
            config,
            profile=AlgorithmProfile.from_dict(payload["profile"]),
            version=payload["version"],
        )
    _apply_payload(builder, kind, payload)
    return config


def _state_from_snapshot(doc: dict) -> tuple[DomainConfig, StateBuilder]:
    try:
        config = DomainConfig.from_dict(doc["config"])
        builder = StateBuilder()
        for payload in doc["items"]:
            _apply_payload(builder, "item_upserted", payload)
        for payload in doc["interactions"]:
            _apply_payload(builder, "interaction_appended", payload)
        for space_doc in doc["spaces"]:
            space = EmbeddingSpace(space_doc["space_id"], int(space_doc["dim"]))
            for record in space_doc["items"]:
                space.set_unit_vector(record["item_id"], record["vector"])
            builder.view.spaces[space.space_id] = space
    except (KeyError, TypeError, ValueError, InvalidConfig) as exc:
        raise CorruptSnapshot(f"snapshot contents invalid: {exc}") from exc
    return config, builder
