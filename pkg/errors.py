# errors.py
"""Exception hierarchy shared by every geomem module.

Gate rejections at ingestion are returned as values (memory_store.Rejected),
not raised; everything here signals a caller or environment problem.
"""
from __future__ import annotations


class GeomemError(Exception):
    """Base class for all engine errors."""


class DimensionMismatchError(GeomemError, ValueError):
    pass


class InvalidPointError(GeomemError, ValueError):
    """Coordinates outside the open unit ball or not finite."""


class ZeroVectorError(GeomemError, ValueError):
    pass


class PreconditionError(GeomemError, ValueError):
    pass


# ── Store ────────────────────────────────────────────────────────────────────

class StoreError(GeomemError):
    pass


class StoreBusyError(StoreError):
    """Another writer holds the lock on this store file."""


class StoreClosedError(StoreError):
    pass


class UnknownMemoryError(StoreError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its arg otherwise
        return str(self.args[0]) if self.args else "unknown memory"


# ── Adapters ─────────────────────────────────────────────────────────────────

class AdapterError(GeomemError):
    pass


class FeaturelessTextError(AdapterError, ZeroVectorError):
    """The hash embedder found no token to hash, or the hashed features cancelled out."""


class PrecomputedMissError(AdapterError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "no precomputed vector"


class RemoteServiceError(AdapterError):
    def __init__(self, message: str, *, attempts: int = 1, status: int | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.status = status

    def __str__(self) -> str:
        base = super().__str__()
        return f"{base} (after {self.attempts} attempt{'s' if self.attempts != 1 else ''})"


class RemoteProtocolError(AdapterError):
    """Malformed payload from a remote model service."""
