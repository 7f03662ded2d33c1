import threading

import pytest

from polyrec.errors import DuplicateDomain, InvalidConfig, UnknownDomain
from polyrec.registry import (
    AlgorithmProfile,
    DomainConfig,
    DomainRegistry,
    SourceSpec,
    validate_config,
)

from conftest import load_fixture, make_config


def cfg(raw: dict) -> DomainConfig:
    return DomainConfig.from_dict(raw)


POP_ONLY = [{"kind": "popularity", "weight": 1.0, "params": {}}]


class TestValidateConfig:
    def test_minimal_popularity_config_ok(self):
        assert validate_config(cfg(make_config("d", POP_ONLY))) is None

    def test_zero_total_weight(self):
        sources = [{"kind": "popularity", "weight": 0.0, "params": {}}]
        err = validate_config(cfg(make_config("d", sources)))
        assert isinstance(err, InvalidConfig)
        assert "zero total weight" in err.reason

    def test_negative_weight(self):
        sources = [{"kind": "content", "weight": -1.0, "params": {}}]
        assert isinstance(validate_config(cfg(make_config("d", sources))), InvalidConfig)

    def test_empty_entity_types(self):
        raw = make_config("d", POP_ONLY, entity_types=())
        assert isinstance(validate_config(cfg(raw)), InvalidConfig)

    def test_two_popularity_sources(self):
        raw = make_config("d", POP_ONLY + POP_ONLY)
        err = validate_config(cfg(raw))
        assert isinstance(err, InvalidConfig)

    def test_unknown_source_param(self):
        sources = [{"kind": "item_cf", "weight": 1.0, "params": {"bogus": 1}}]
        assert isinstance(validate_config(cfg(make_config("d", sources))), InvalidConfig)

    def test_embedding_requires_space_id(self):
        sources = [{"kind": "embedding", "weight": 1.0, "params": {}}]
        assert isinstance(validate_config(cfg(make_config("d", sources))), InvalidConfig)

    def test_bad_prune_m(self):
        sources = [
            {"kind": "embedding", "weight": 1.0, "params": {"space_id": "s", "prune_m": 0}}
        ]
        assert isinstance(validate_config(cfg(make_config("d", sources))), InvalidConfig)

    def test_non_finite_weight(self):
        sources = [{"kind": "content", "weight": float("inf"), "params": {}}]
        assert isinstance(validate_config(cfg(make_config("d", sources))), InvalidConfig)


class TestRegistry:
    def test_register_shipped_fixtures(self):
        registry = DomainRegistry()
        assert registry.register(cfg(load_fixture("talto.json"))) == 1
        assert registry.register(cfg(load_fixture("cogsteps.json"))) == 1
        talto = registry.get("talto")
        assert talto.entity_types == frozenset(
            {"job_posting", "company_profile", "career_article"}
        )
        cogsteps = registry.get("cogsteps")
        assert "founder_profile" in cogsteps.entity_types

    def test_register_duplicate(self):
        registry = DomainRegistry()
        registry.register(cfg(make_config("d", POP_ONLY)))
        with pytest.raises(DuplicateDomain):
            registry.register(cfg(make_config("d", POP_ONLY)))

    def test_round_trip_exact(self):
        registry = DomainRegistry()
        raw = load_fixture("talto.json")
        registry.register(cfg(raw))
        stored = registry.get("talto").to_dict()
        raw_with_version = dict(raw, version=1)
        assert stored == cfg(raw_with_version).to_dict()

    def test_update_profile_increments_version(self):
        registry = DomainRegistry()
        registry.register(cfg(make_config("talto", POP_ONLY)))
        profile = AlgorithmProfile(
            sources=(
                SourceSpec("content", 0.5, {}),
                SourceSpec("embedding", 0.5, {"space_id": "d2v"}),
            )
        )
        assert registry.update_profile("talto", profile) == 2
        assert registry.get("talto").version == 2
        assert registry.get("talto").profile == profile

    def test_update_unknown_domain(self):
        registry = DomainRegistry()
        with pytest.raises(UnknownDomain):
            registry.update_profile("ghost", AlgorithmProfile((SourceSpec("popularity", 1.0),)))

    def test_update_invalid_profile(self):
        registry = DomainRegistry()
        registry.register(cfg(make_config("d", POP_ONLY)))
        bad = AlgorithmProfile(
            sources=(SourceSpec("popularity", 1.0), SourceSpec("popularity", 1.0))
        )
        with pytest.raises(InvalidConfig):
            registry.update_profile("d", bad)

    def test_get_unknown(self):
        with pytest.raises(UnknownDomain):
            DomainRegistry().get("ghost")

    def test_version_sequence_no_gaps(self):
        registry = DomainRegistry()
        registry.register(cfg(make_config("d", POP_ONLY)))
        versions = [registry.get("d").version]
        for _ in range(5):
            profile = registry.get("d").profile
            versions.append(registry.update_profile("d", profile))
        assert versions == [1, 2, 3, 4, 5, 6]

    def test_persist_hook_failure_aborts(self):
        def exploding(kind, domain_id, payload):
            raise OSError("disk is gone")

        registry = DomainRegistry(on_persist=exploding)
        with pytest.raises(OSError):
            registry.register(cfg(make_config("d", POP_ONLY)))
        assert not registry.contains("d")


class TestConcurrentReaders:
    def test_no_blended_config_during_updates(self):
        # Two internally consistent profiles; weights and params must flip together.
        profile_a = AlgorithmProfile(
            sources=(
                SourceSpec("content", 1.0, {"text_fields": ["title"]}),
                SourceSpec("popularity", 0.0, {}),
            )
        )
        profile_b = AlgorithmProfile(
            sources=(
                SourceSpec("content", 0.0, {"text_fields": ["body"]}),
                SourceSpec("popularity", 1.0, {}),
            )
        )
        registry = DomainRegistry()
        registry.register(
            DomainConfig(
                domain_id="d",
                entity_types=frozenset({"t"}),
                interaction_types=frozenset({"view"}),
                profile=profile_a,
            )
        )
        stop = threading.Event()
        violations: list[AlgorithmProfile] = []

        def reader():
            while not stop.is_set():
                profile = registry.get("d").profile
                if profile not in (profile_a, profile_b):
                    violations.append(profile)

        threads = [threading.Thread(target=reader) for _ in range(4)]
        for t in threads:
            t.start()
        for i in range(200):
            registry.update_profile("d", profile_b if i % 2 == 0 else profile_a)
        stop.set()
        for t in threads:
            t.join()
        assert violations == []
        assert registry.get("d").version == 201
