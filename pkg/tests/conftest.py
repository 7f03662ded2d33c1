import json
from pathlib import Path

import pytest

from polyrec.engine import RecommenderEngine
from polyrec.server import BackgroundServer

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def load_fixture(name: str) -> dict:
    return json.loads((FIXTURES / name).read_text())


def make_config(
    domain_id: str,
    sources: list[dict],
    entity_types=("thing",),
    interaction_types=("view",),
    default_k: int = 10,
    latency_budget_ms: int = 100,
) -> dict:
    return {
        "domain_id": domain_id,
        "entity_types": list(entity_types),
        "interaction_types": list(interaction_types),
        "profile": {"sources": sources, "fusion_mode": "weighted_sum"},
        "default_k": default_k,
        "latency_budget_ms": latency_budget_ms,
    }


@pytest.fixture
def engine(tmp_path):
    eng = RecommenderEngine(tmp_path / "data")
    yield eng
    eng.close()


@pytest.fixture
def server(engine):
    with BackgroundServer(engine) as handle:
        yield handle
