# conftest.py
import socket
from datetime import datetime, timezone

import numpy as np
import pytest

from adapters import HashFeatureEmbedder, PrecomputedEmbedder
from memory_store import MemoryStore
from settings import Settings

FIXED_NOW = datetime(2025, 1, 1, tzinfo=timezone.utc).timestamp()


class FakeClock:
    """Settable clock for stores under test."""

    def __init__(self, t: float = FIXED_NOW):
        self.t = t

    def __call__(self) -> float:
        return self.t

    def advance(self, seconds: float) -> None:
        self.t += seconds


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted during tests")
    monkeypatch.setattr(socket.socket, "connect", refuse)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def settings(tmp_path):
    return Settings(db_path=str(tmp_path / "memory.db"), profile_id="default", embed_dim=64)


@pytest.fixture
def make_store(settings, clock):
    """Factory: make_store(embedder=None, **kwargs) -> open MemoryStore on the tmp db."""
    opened = []

    def factory(embedder=None, **kwargs):
        kwargs.setdefault("clock", clock)
        st = MemoryStore(kwargs.pop("path", settings.db_path), kwargs.pop("settings", settings),
                         embedder or HashFeatureEmbedder(settings.embed_dim), **kwargs)
        opened.append(st)
        return st

    yield factory
    for st in opened:
        st.close()


@pytest.fixture
def store(make_store):
    return make_store()


@pytest.fixture
def precomputed():
    """Factory: precomputed(mapping, dim) with a hash fallback for unlisted text."""
    def factory(vectors: dict, dim: int = 64) -> PrecomputedEmbedder:
        return PrecomputedEmbedder(vectors, dim=dim, fallback=HashFeatureEmbedder(dim))
    return factory
