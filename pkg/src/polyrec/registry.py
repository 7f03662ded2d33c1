"""Per-domain configuration: which algorithms run, with which weights.

Every tenant (domain) declares its entity types, interaction types and an
algorithm profile. The registry keeps configs immutable and versioned:
readers always see a complete config object, writers swap the whole thing.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterator

from .errors import DuplicateDomain, InvalidConfig, UnknownDomain

SOURCE_KINDS = ("user_cf", "item_cf", "content", "embedding", "popularity")
FUSION_MODES = ("weighted_sum",)

DEFAULT_K = 10
DEFAULT_LATENCY_BUDGET_MS = 100
DEFAULT_K_NEIGHBORS = 50

# Parameter keys each source kind accepts. Anything else is a config error.
_PARAMS_BY_KIND = {
    "user_cf": frozenset({"k_neighbors"}),
    "item_cf": frozenset(),
    "content": frozenset({"text_fields"}),
    "embedding": frozenset({"space_id", "prune_m"}),
    "popularity": frozenset({"window"}),
}


@dataclass(frozen=True)
class SourceSpec:
    """One recommendation source inside a profile."""

    kind: str
    weight: float
    params: dict[str, Any] = field(default_factory=dict)

    def param(self, name: str, default: Any = None) -> Any:
        return self.params.get(name, default)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "weight": self.weight, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SourceSpec":
        if not isinstance(raw, dict):
            raise InvalidConfig("source spec must be an object")
        return cls(
            kind=raw.get("kind", ""),
            weight=raw.get("weight", 0.0),
            params=dict(raw.get("params", {}) or {}),
        )


@dataclass(frozen=True)
class AlgorithmProfile:
    sources: tuple[SourceSpec, ...]
    fusion_mode: str = "weighted_sum"

    def to_dict(self) -> dict[str, Any]:
        return {
            "sources": [s.to_dict() for s in self.sources],
            "fusion_mode": self.fusion_mode,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "AlgorithmProfile":
        if not isinstance(raw, dict):
            raise InvalidConfig("profile must be an object")
        sources = raw.get("sources", [])
        if not isinstance(sources, list):
            raise InvalidConfig("profile.sources must be a list")
        return cls(
            sources=tuple(SourceSpec.from_dict(s) for s in sources),
            fusion_mode=raw.get("fusion_mode", "weighted_sum"),
        )


@dataclass(frozen=True)
class DomainConfig:
    domain_id: str
    entity_types: frozenset[str]
    interaction_types: frozenset[str]
    profile: AlgorithmProfile
    default_k: int = DEFAULT_K
    latency_budget_ms: int = DEFAULT_LATENCY_BUDGET_MS
    version: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "domain_id": self.domain_id,
            "entity_types": sorted(self.entity_types),
            "interaction_types": sorted(self.interaction_types),
            "profile": self.profile.to_dict(),
            "default_k": self.default_k,
            "latency_budget_ms": self.latency_budget_ms,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "DomainConfig":
        if not isinstance(raw, dict):
            raise InvalidConfig("config must be an object")
        unknown = set(raw) - {
            "domain_id",
            "entity_types",
            "interaction_types",
            "profile",
            "default_k",
            "latency_budget_ms",
            "version",
        }
        if unknown:
            raise InvalidConfig(f"unknown config fields: {sorted(unknown)}")
        return cls(
            domain_id=raw.get("domain_id", ""),
            entity_types=frozenset(raw.get("entity_types", []) or []),
            interaction_types=frozenset(raw.get("interaction_types", []) or []),
            profile=AlgorithmProfile.from_dict(raw.get("profile", {})),
            default_k=raw.get("default_k", DEFAULT_K),
            latency_budget_ms=raw.get("latency_budget_ms", DEFAULT_LATENCY_BUDGET_MS),
            version=raw.get("version", 0),
        )


def _validate_source(spec: SourceSpec) -> str | None:
    if spec.kind not in SOURCE_KINDS:
        return f"unknown source kind: {spec.kind!r}"
    if not isinstance(spec.weight, (int, float)) or isinstance(spec.weight, bool):
        return f"{spec.kind}: weight must be a number"
    if not math.isfinite(spec.weight) or spec.weight < 0:
        return f"{spec.kind}: weight must be finite and >= 0"
    allowed = _PARAMS_BY_KIND[spec.kind]
    unknown = set(spec.params) - allowed
    if unknown:
        return f"{spec.kind}: invalid parameters {sorted(unknown)}"
    if spec.kind == "user_cf":
        kn = spec.param("k_neighbors", DEFAULT_K_NEIGHBORS)
        if not isinstance(kn, int) or isinstance(kn, bool) or kn <= 0:
            return "user_cf: k_neighbors must be a positive integer"
    elif spec.kind == "content":
        fields = spec.param("text_fields")
        if fields is not None:
            if not isinstance(fields, list) or not all(
                isinstance(f, str) and f for f in fields
            ):
                return "content: text_fields must be a list of field names"
    elif spec.kind == "embedding":
        space_id = spec.param("space_id")
        if not isinstance(space_id, str) or not space_id:
            return "embedding: space_id is required"
        prune_m = spec.param("prune_m", "full")
        if prune_m != "full" and (
            not isinstance(prune_m, int) or isinstance(prune_m, bool) or prune_m <= 0
        ):
            return "embedding: prune_m must be a positive integer or \"full\""
    elif spec.kind == "popularity":
        window = spec.param("window", "all_time")
        if window != "all_time" and (
            not isinstance(window, int) or isinstance(window, bool) or window <= 0
        ):
            return "popularity: window must be \"all_time\" or a positive duration in ms"
    return None


def validate_profile(profile: AlgorithmProfile) -> str | None:
    if not profile.sources:
        return "profile must declare at least one source"
    if profile.fusion_mode not in FUSION_MODES:
        return f"unknown fusion_mode: {profile.fusion_mode!r}"
    n_popularity = sum(1 for s in profile.sources if s.kind == "popularity")
    if n_popularity > 1:
        return "at most one popularity source is allowed"
    total = 0.0
    for spec in profile.sources:
        reason = _validate_source(spec)
        if reason:
            return reason
        total += spec.weight
    if total <= 0:
        return "zero total weight"
    return None


def validate_config(config: DomainConfig) -> InvalidConfig | None:
    """Pure validation; returns the error instead of raising it."""
    if not isinstance(config.domain_id, str) or not config.domain_id:
        return InvalidConfig("domain_id must be a nonempty string")
    if not config.entity_types or not all(
        isinstance(t, str) and t for t in config.entity_types
    ):
        return InvalidConfig("entity_types must be a nonempty set of strings")
    if not config.interaction_types or not all(
        isinstance(t, str) and t for t in config.interaction_types
    ):
        return InvalidConfig("interaction_types must be a nonempty set of strings")
    if (
        not isinstance(config.default_k, int)
        or isinstance(config.default_k, bool)
        or config.default_k <= 0
    ):
        return InvalidConfig("default_k must be a positive integer")
    if (
        not isinstance(config.latency_budget_ms, int)
        or isinstance(config.latency_budget_ms, bool)
        or config.latency_budget_ms <= 0
    ):
        return InvalidConfig("latency_budget_ms must be a positive integer")
    reason = validate_profile(config.profile)
    if reason:
        return InvalidConfig(reason)
    return None


# Hook signature: (event_kind, domain_id, payload). Raising aborts the write.
PersistHook = Callable[[str, str, dict], None]


class DomainRegistry:
    """Versioned store of domain configs.

    Reads are wait-free snapshots of immutable config objects. Writes are
    serialized per domain; an optional persistence hook runs inside the
    write lock before the new config becomes visible, so a failed append
    never publishes a half-registered domain.
    """

    def __init__(self, on_persist: PersistHook | None = None):
        self._configs: dict[str, DomainConfig] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._admission = threading.Lock()
        self._on_persist = on_persist

    def write_lock(self, domain_id: str) -> threading.RLock:
        """Per-domain writer lock, shared with ingestion to keep one log writer.

        Reentrant: restore-style operations hold it across nested registry calls.
        """
        with self._admission:
            lock = self._locks.get(domain_id)
            if lock is None:
                lock = self._locks[domain_id] = threading.RLock()
            return lock

    def register(self, config: DomainConfig) -> int:
        err = validate_config(config)
        if err is not None:
            raise err
        lock = self.write_lock(config.domain_id)
        with lock:
            if config.domain_id in self._configs:
                raise DuplicateDomain(config.domain_id)
            cfg = replace(config, version=1)
            if self._on_persist is not None:
                self._on_persist("domain_registered", cfg.domain_id, cfg.to_dict())
            self._configs[cfg.domain_id] = cfg
            return cfg.version

    def update_profile(self, domain_id: str, profile: AlgorithmProfile) -> int:
        reason = validate_profile(profile)
        if reason:
            raise InvalidConfig(reason)
        with self.write_lock(domain_id):
            current = self._configs.get(domain_id)
            if current is None:
                raise UnknownDomain(domain_id)
            cfg = replace(current, profile=profile, version=current.version + 1)
            if self._on_persist is not None:
                self._on_persist(
                    "profile_updated",
                    domain_id,
                    {"profile": profile.to_dict(), "version": cfg.version},
                )
            self._configs[domain_id] = cfg
            return cfg.version

    def get(self, domain_id: str) -> DomainConfig:
        config = self._configs.get(domain_id)
        if config is None:
            raise UnknownDomain(domain_id)
        return config

    def contains(self, domain_id: str) -> bool:
        return domain_id in self._configs

    def domain_ids(self) -> list[str]:
        return sorted(self._configs)

    def __iter__(self) -> Iterator[DomainConfig]:
        return iter([self._configs[d] for d in self.domain_ids()])

    def install(self, config: DomainConfig) -> None:
        """Install a config as-is (replay path); skips persistence."""
        err = validate_config(config)
        if err is not None:
            raise err
        with self.write_lock(config.domain_id):
            self._configs[config.domain_id] = config

    def remove(self, domain_id: str) -> None:
        with self.write_lock(domain_id):
            self._configs.pop(domain_id, None)
