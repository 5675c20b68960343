# adapters.py
"""
Embedder and reranker adapters.

Built-ins (hash-feature embedder, precomputed lookup, lexical-overlap
reranker) are deterministic and never touch the network. The remote client
speaks a small JSON-over-HTTP protocol:

    embed   POST {"texts": [...]}                -> {"vectors": [[...], ...]}
    rerank  POST {"query": "...", "docs": [...]} -> {"scores": [...]}
"""
from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np
import requests
from scipy.special import logit

from errors import (AdapterError, DimensionMismatchError, FeaturelessTextError, PrecomputedMissError,
                    PreconditionError, RemoteProtocolError, RemoteServiceError)
from utils.utils import tokenize, with_backoff

log = logging.getLogger("geomem.adapters")

OVERLAP_CLAMP = 1e-6


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


class Reranker(Protocol):
    def score(self, query: str, doc: str) -> float: ...

    def score_batch(self, query: str, docs: Sequence[str]) -> np.ndarray: ...


def _check_vectors(arr: np.ndarray, n: int, dim: int) -> np.ndarray:
    if arr.ndim != 2 or arr.shape[0] != n:
        raise RemoteProtocolError(f"expected {n} vectors, got shape {arr.shape}")
    if arr.shape[1] != dim:
        raise DimensionMismatchError(f"vectors have dim {arr.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise RemoteProtocolError("vectors contain non-finite values")
    return arr


# ---------------------------------------------------------------------------
# Built-in embedders
# ---------------------------------------------------------------------------

class HashFeatureEmbedder:
    """Signed feature hashing of tokens into `dim` buckets, L2-normalised."""

    def __init__(self, dim: int = 384):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _bucket(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")
        return h % self.dim, (1.0 if (h >> 63) & 1 == 0 else -1.0)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise PreconditionError("cannot embed empty text")
        tokens = tokenize(text)
        if not tokens:
            raise FeaturelessTextError(f"no token of two or more characters in {text[:60]!r}")
        vec = np.zeros(self.dim)
        for tok in tokens:
            bucket, sign = self._bucket(tok)
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise FeaturelessTextError(f"hashed features of {text[:60]!r} cancel out")
        return vec / norm

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.empty((0, self.dim))
        return np.stack([self.embed(t) for t in texts])


class PrecomputedEmbedder:
    """Exact-text lookup; an optional fallback embedder covers misses."""

    def __init__(self, vectors: Mapping[str, Sequence[float]], dim: int | None = None,
                 fallback: Embedder | None = None):
        table = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in vectors.items()}
        dims = {v.shape[0] for v in table.values()}
        if dim is None:
            if len(dims) != 1:
                raise DimensionMismatchError("cannot infer a single dimension from the vectors")
            dim = dims.pop()
        elif dims - {dim}:
            raise DimensionMismatchError(f"precomputed vectors must all have dim {dim}")
        if fallback is not None and fallback.dim != dim:
            raise DimensionMismatchError("fallback embedder dimension differs")
        self.dim = dim
        self._table = table
        self._fallback = fallback

    @classmethod
    def from_file(cls, path: str, fallback: Embedder | None = None) -> "PrecomputedEmbedder":
        """JSON lines of {"text": ..., "vector": [...]}, or one JSON object text -> vector."""
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
        try:
            data = json.loads(raw)
            if not isinstance(data, dict):
                raise ValueError
        except ValueError:
            data = {}
            for line in raw.splitlines():
                if line.strip():
                    row = json.loads(line)
                    data[row["text"]] = row["vector"]
        return cls(data, fallback=fallback)

    def embed(self, text: str) -> np.ndarray:
        vec = self._table.get(text)
        if vec is None:
            if self._fallback is None:
                raise PrecomputedMissError(f"no precomputed vector for {text[:60]!r}")
            return self._fallback.embed(text)
        return vec.copy()

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.empty((0, self.dim))
        return np.stack([self.embed(t) for t in texts])


# ---------------------------------------------------------------------------
# Remote
# ---------------------------------------------------------------------------

class RemoteClient:
    """POSTs JSON to one endpoint with a timeout, retries and bounded in-flight calls."""

    def __init__(self, url: str, *, api_key: str | None = None, timeout: float = 10.0,
                 retries: int = 2, max_in_flight: int = 4, base_sleep: float = 0.5,
                 session: requests.Session | None = None, sleep=time.sleep):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.base_sleep = base_sleep
        self._api_key = api_key
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep

    def __repr__(self) -> str:
        return f"RemoteClient(url={self.url!r}, timeout={self.timeout}, retries={self.retries})"

    def _post_once(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        try:
            resp = self._session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as e:
            raise RemoteServiceError(f"{self.url}: {e}") from e
        if not (200 <= resp.status_code < 300):
            raise RemoteServiceError(f"{self.url}: HTTP {resp.status_code}", status=resp.status_code)
        try:
            data = resp.json()
        except ValueError as e:
            raise RemoteProtocolError(f"{self.url}: response is not JSON") from e
        if not isinstance(data, dict):
            raise RemoteProtocolError(f"{self.url}: response is not a JSON object")
        return data

    def post(self, payload: dict) -> dict:
        with self._slots:
            return with_backoff(self._post_once, payload, tries=self.retries + 1, base_sleep=self.base_sleep,
                                retry_on=(RemoteServiceError,), sleep=self._sleep)


class RemoteEmbedder:
    def __init__(self, client: RemoteClient, dim: int):
        self.client = client
        self.dim = dim

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.empty((0, self.dim))
        data = self.client.post({"texts": texts})
        if "vectors" not in data:
            raise RemoteProtocolError("response has no 'vectors'")
        try:
            arr = np.asarray(data["vectors"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise RemoteProtocolError(f"malformed vectors: {e}") from e
        return _check_vectors(arr, len(texts), self.dim)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


class RemoteReranker:
    def __init__(self, client: RemoteClient):
        self.client = client

    def score_batch(self, query: str, docs: Sequence[str]) -> np.ndarray:
        docs = list(docs)
        if not docs:
            return np.empty(0)
        data = self.client.post({"query": query, "docs": docs})
        try:
            scores = np.asarray(data["scores"], dtype=np.float64).reshape(-1)
        except (KeyError, TypeError, ValueError) as e:
            raise RemoteProtocolError(f"malformed scores: {e}") from e
        if scores.shape[0] != len(docs) or not np.all(np.isfinite(scores)):
            raise RemoteProtocolError("scores do not match docs or are not finite")
        return scores

    def score(self, query: str, doc: str) -> float:
        return float(self.score_batch(query, [doc])[0])


# ---------------------------------------------------------------------------
# Lexical reranker
# ---------------------------------------------------------------------------

class LexicalOverlapReranker:
    """logit of the query-token overlap fraction, so logistic(score) gives the fraction back."""

    def score(self, query: str, doc: str) -> float:
        q = set(tokenize(query))
        if not q:
            frac = 0.0
        else:
            frac = len(q & set(tokenize(doc))) / len(q)
        return float(logit(min(max(frac, OVERLAP_CLAMP), 1.0 - OVERLAP_CLAMP)))

    def score_batch(self, query: str, docs: Sequence[str]) -> np.ndarray:
        return np.array([self.score(query, d) for d in docs], dtype=np.float64)


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmbedderSpec:
    kind: str          # hash | precomputed | remote
    dim: int
    target: str | None = None


@dataclass(frozen=True)
class RerankerSpec:
    kind: str          # lexical | remote | off
    target: str | None = None


def parse_embedder_spec(text: str, dim: int) -> EmbedderSpec:
    kind, _, target = text.partition(":")
    kind = kind.strip().lower()
    if kind == "hash" and not target:
        return EmbedderSpec("hash", dim)
    if kind in ("precomputed", "remote") and target:
        return EmbedderSpec(kind, dim, target)
    raise PreconditionError(f"bad embedder spec {text!r} (hash | precomputed:<path> | remote:<url>)")


def parse_reranker_spec(text: str) -> RerankerSpec:
    kind, _, target = text.partition(":")
    kind = kind.strip().lower()
    if kind in ("lexical", "off", "disabled") and not target:
        return RerankerSpec("off" if kind == "disabled" else kind)
    if kind == "remote" and target:
        return RerankerSpec("remote", target)
    raise PreconditionError(f"bad reranker spec {text!r} (lexical | remote:<url> | off)")


def build_embedder(spec: EmbedderSpec, *, api_key: str | None = None, timeout: float = 10.0,
                   retries: int = 2, max_in_flight: int = 4) -> Embedder:
    if spec.kind == "hash":
        return HashFeatureEmbedder(spec.dim)
    if spec.kind == "precomputed":
        emb = PrecomputedEmbedder.from_file(spec.target)
        if emb.dim != spec.dim:
            log.warning("Precomputed vectors have dim %d; using it instead of %d", emb.dim, spec.dim)
        return emb
    if spec.kind == "remote":
        client = RemoteClient(spec.target, api_key=api_key, timeout=timeout, retries=retries,
                              max_in_flight=max_in_flight)
        return RemoteEmbedder(client, spec.dim)
    raise AdapterError(f"unknown embedder kind {spec.kind!r}")


def build_reranker(spec: RerankerSpec, *, api_key: str | None = None, timeout: float = 10.0,
                   retries: int = 2, max_in_flight: int = 4) -> Reranker | None:
    if spec.kind == "off":
        return None
    if spec.kind == "lexical":
        return LexicalOverlapReranker()
    if spec.kind == "remote":
        return RemoteReranker(RemoteClient(spec.target, api_key=api_key, timeout=timeout, retries=retries,
                                           max_in_flight=max_in_flight))
    raise AdapterError(f"unknown reranker kind {spec.kind!r}")
