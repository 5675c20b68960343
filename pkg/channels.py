# channels.py
"""
The three non-semantic retrieval channels: BM25 keyword search, spreading
activation over the entity graph, and temporal proximity. Each returns a
ranked candidate list; fusion only ever consumes the ranks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import networkx as nx

from utils.utils import SECONDS_PER_DAY, tokenize


@dataclass(frozen=True)
class ChannelConfig:
    k1: float = 1.2
    b: float = 0.75
    max_hops: int = 3
    decay: float = 0.7
    tau_days: float = 30.0
    expired_penalty: float = 0.5
    top_n: int = 50


@dataclass(frozen=True)
class RankedCandidate:
    memory_id: str
    score: float
    rank: int


def rank_scores(scores: Mapping[str, float], top_n: int | None = None) -> list[RankedCandidate]:
    """Sort by score descending, memory id ascending on ties, ranks 1..n."""
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    if top_n is not None:
        ordered = ordered[:top_n]
    return [RankedCandidate(mid, float(s), i) for i, (mid, s) in enumerate(ordered, 1)]


# ---------------------------------------------------------------------------
# BM25
# ---------------------------------------------------------------------------

@dataclass
class Bm25Index:
    postings: dict[str, dict[str, int]] = field(default_factory=dict)   # term -> {memory_id: tf}
    doc_lengths: dict[str, int] = field(default_factory=dict)
    k1: float = 1.2
    b: float = 0.75

    @classmethod
    def from_documents(cls, docs: Mapping[str, str], k1: float = 1.2, b: float = 0.75) -> "Bm25Index":
        idx = cls(k1=k1, b=b)
        for mid in sorted(docs):
            idx.add_document(mid, tokenize(docs[mid]))
        return idx

    @classmethod
    def from_postings(cls, rows: Iterable[tuple[str, str, int]], doc_lengths: Mapping[str, int],
                      k1: float = 1.2, b: float = 0.75) -> "Bm25Index":
        idx = cls(k1=k1, b=b, doc_lengths=dict(doc_lengths))
        for term, mid, tf in rows:
            if tf < 1:
                raise ValueError(f"posting ({term!r}, {mid!r}) has tf {tf}")
            idx.postings.setdefault(term, {})[mid] = int(tf)
        return idx

    def add_document(self, memory_id: str, tokens: list[str]) -> None:
        self.remove_document(memory_id)
        self.doc_lengths[memory_id] = len(tokens)
        for term, tf in term_frequencies(tokens).items():
            self.postings.setdefault(term, {})[memory_id] = tf

    def remove_document(self, memory_id: str) -> None:
        if memory_id not in self.doc_lengths:
            return
        del self.doc_lengths[memory_id]
        for term in [t for t, docs in self.postings.items() if memory_id in docs]:
            del self.postings[term][memory_id]
            if not self.postings[term]:
                del self.postings[term]

    @property
    def doc_count(self) -> int:
        return len(self.doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        if not self.doc_lengths:
            return 0.0
        return sum(self.doc_lengths.values()) / len(self.doc_lengths)

    def idf(self, term: str) -> float:
        n = len(self.postings.get(term, ()))
        N = self.doc_count
        return math.log((N - n + 0.5) / (n + 0.5) + 1.0)


def term_frequencies(tokens: list[str]) -> dict[str, int]:
    tf: dict[str, int] = {}
    for t in tokens:
        tf[t] = tf.get(t, 0) + 1
    return tf


def bm25_score(index: Bm25Index, query_terms: list[str], memory_id: str) -> float:
    length = index.doc_lengths.get(memory_id)
    if length is None:
        return 0.0
    avgdl = index.avg_doc_length or 1.0
    norm = index.k1 * (1.0 - index.b + index.b * length / avgdl)
    score = 0.0
    for term in dict.fromkeys(query_terms):
        f = index.postings.get(term, {}).get(memory_id, 0)
        if f:
            score += index.idf(term) * f * (index.k1 + 1.0) / (f + norm)
    return score


def bm25_search(index: Bm25Index, query: str, top_n: int = 50) -> list[RankedCandidate]:
    terms = tokenize(query)
    if not terms or not index.doc_count:
        return []
    matched = sorted({mid for t in terms for mid in index.postings.get(t, ())})
    return rank_scores({mid: bm25_score(index, terms, mid) for mid in matched}, top_n)


# ---------------------------------------------------------------------------
# Entity graph
# ---------------------------------------------------------------------------

def cooccurrence_weight(count: int) -> float:
    """1 - 2^-count: first co-mention gives 0.5, approaching 1 with repetition."""
    return 1.0 - 0.5 ** count


class EntityGraph:
    def __init__(self):
        self.graph = nx.Graph()
        self.mentions: dict[str, set[str]] = {}

    @classmethod
    def from_rows(cls, edges: Iterable[tuple[str, str, int]], mentions: Iterable[tuple[str, str]]) -> "EntityGraph":
        g = cls()
        for entity, mid in mentions:
            g.add_mention(entity, mid)
        for a, b, count in edges:
            if count > 0:
                g.add_edge(a, b, cooccurrence_weight(count), count=count)
        return g

    def add_mention(self, entity: str, memory_id: str) -> None:
        self.graph.add_node(entity)
        self.mentions.setdefault(entity, set()).add(memory_id)

    def add_edge(self, a: str, b: str, weight: float, count: int = 1) -> None:
        if a == b:
            raise ValueError("self-loops are not allowed")
        if not (0 < weight <= 1):
            raise ValueError("edge weight must be in (0, 1]")
        self.graph.add_edge(a, b, weight=weight, count=count)

    def add_cooccurrence(self, entities: Iterable[str], memory_id: str) -> None:
        ents = sorted(set(entities))
        for e in ents:
            self.add_mention(e, memory_id)
        for i, a in enumerate(ents):
            for b in ents[i + 1:]:
                count = self.graph.edges[a, b]["count"] + 1 if self.graph.has_edge(a, b) else 1
                self.add_edge(a, b, cooccurrence_weight(count), count=count)

    def memories_of(self, entity: str) -> set[str]:
        return self.mentions.get(entity, set())

    def __contains__(self, entity: str) -> bool:
        return entity in self.graph


def spread_activation(g: EntityGraph, seeds: Iterable[str], max_hops: int = 3,
                      decay: float = 0.7) -> dict[str, float]:
    """
    Layered BFS from the seeds (activation 1.0). A node first reached at hop h
    takes the max over its hop-(h-1) neighbours of activation * decay * weight.
    """
    act = {s: 1.0 for s in sorted(set(seeds)) if s in g.graph}
    frontier = list(act)
    for _ in range(max_hops):
        reached: dict[str, float] = {}
        for u in frontier:
            for v, attrs in g.graph[u].items():
                if v in act:
                    continue
                val = act[u] * decay * attrs.get("weight", 1.0)
                if val > reached.get(v, 0.0):
                    reached[v] = val
        if not reached:
            break
        act.update(reached)
        frontier = sorted(reached)
    return act


def entity_channel(g: EntityGraph, query_entities: Iterable[str], top_n: int = 50,
                   max_hops: int = 3, decay: float = 0.7) -> list[RankedCandidate]:
    seeds = set(query_entities)
    if not seeds:
        return []
    act = spread_activation(g, seeds, max_hops, decay)
    scores: dict[str, float] = {}
    for entity in sorted(act):
        for mid in sorted(g.memories_of(entity)):
            scores[mid] = scores.get(mid, 0.0) + act[entity]
    return rank_scores(scores, top_n)


# ---------------------------------------------------------------------------
# Temporal
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalRecord:
    memory_id: str
    observed_at: float
    refers_to: float | None = None
    valid_from: float | None = None
    valid_until: float | None = None

    def __post_init__(self):
        if self.valid_from is not None and self.valid_until is not None and self.valid_from > self.valid_until:
            raise ValueError("valid_from must not be after valid_until")

    def covers(self, t: float) -> bool:
        if self.valid_from is not None and t < self.valid_from:
            return False
        if self.valid_until is not None and t > self.valid_until:
            return False
        return True


def temporal_kernel(delta_days: float, tau_days: float = 30.0) -> float:
    return math.exp(-abs(delta_days) / tau_days)


def temporal_channel(records: Iterable[TemporalRecord], anchor: float | None, top_n: int = 50,
                     tau_days: float = 30.0, penalty: float = 0.5,
                     now: float | None = None) -> list[RankedCandidate]:
    """
    With an anchor, proximity of refers_to (or observed_at) to the anchor.
    Without one, recency of observed_at relative to `now`, which defaults to
    the newest observation so results do not depend on the wall clock.
    """
    records = list(records)
    if not records:
        return []
    if anchor is not None:
        ref_time = anchor
    else:
        ref_time = now if now is not None else max(r.observed_at for r in records)
    scores = {}
    for r in records:
        t = (r.refers_to if r.refers_to is not None else r.observed_at) if anchor is not None else r.observed_at
        score = temporal_kernel((ref_time - t) / SECONDS_PER_DAY, tau_days)
        if not r.covers(ref_time):
            score *= penalty
        scores[r.memory_id] = score
    return rank_scores(scores, top_n)
