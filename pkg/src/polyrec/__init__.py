"""polyrec: a multi-domain, real-time recommendation service."""

from .engine import (
    RecommendRequest,
    RecommendResponse,
    RecommenderEngine,
    enforce_deadline,
)
from .registry import AlgorithmProfile, DomainConfig, SourceSpec, validate_config
from .reccore import InteractionMatrix, RankedList

__version__ = "0.1.0"

__all__ = [
    "AlgorithmProfile",
    "DomainConfig",
    "InteractionMatrix",
    "RankedList",
    "RecommendRequest",
    "RecommendResponse",
    "RecommenderEngine",
    "SourceSpec",
    "enforce_deadline",
    "validate_config",
    "__version__",
]
