"""Exception types shared across the service.

Ingestion endpoints report most of these per record (as rejection reasons)
rather than raising; library-level operations raise them directly.
"""


class PolyrecError(Exception):
    """Base class for all service errors."""


class UnknownDomain(PolyrecError):
    def __init__(self, domain_id: str):
        super().__init__(f"unknown domain: {domain_id!r}")
        self.domain_id = domain_id


class DuplicateDomain(PolyrecError):
    def __init__(self, domain_id: str):
        super().__init__(f"domain already registered: {domain_id!r}")
        self.domain_id = domain_id


class InvalidConfig(PolyrecError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class MalformedRequest(PolyrecError):
    pass


class MalformedRecord(PolyrecError):
    pass


class InvalidEntityType(MalformedRecord):
    pass


class DimensionMismatch(PolyrecError):
    pass


class ZeroVector(PolyrecError):
    pass


class NonFiniteComponent(PolyrecError):
    pass


class UnknownItem(PolyrecError):
    def __init__(self, item_id: str):
        super().__init__(f"unknown item: {item_id!r}")
        self.item_id = item_id


class ZeroTotalWeight(PolyrecError):
    pass


class CorruptSnapshot(PolyrecError):
    pass


class IoFailure(PolyrecError):
    pass


class EmptyTestSet(PolyrecError):
    pass


class InjectedFault(PolyrecError):
    """Raised by the fault-injection seam to simulate a failing source."""
