# bench.py
"""
Seeded synthetic benchmark with planted relevance.

Three query families over a 1000-memory corpus:
  semantic  - one target plus ten cosine-closer distractors whose extra
              mass sits on a single confident dimension
  temporal  - five dated notes per project, the query names one date
  multihop  - "A works with B", "B works with C", query asks what links A and C

Every configuration is scored with NDCG@10 and hit@20 (share of relevant
memories in the top 20), with a bootstrap interval and a per-family split.
"""
from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np
import pandas as pd

from adapters import HashFeatureEmbedder, PrecomputedEmbedder
from fusion import TOGGLES, Ablation, retrieve
from memory_store import MemoryStore, Rejected
from settings import Settings

log = logging.getLogger("geomem.bench")

DIM = 64
SEMANTIC_QUERIES = 80
DISTRACTORS = 10
TEMPORAL_QUERIES = 10
NOTES_PER_PROJECT = 5
MULTIHOP_QUERIES = 10
FILLERS = 50

TARGET_NOISE = 0.6
SPIKE = 0.5
DISTRACTOR_NOISE = 0.05

BENCH_NOW = datetime(2026, 1, 1, tzinfo=timezone.utc).timestamp()

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_RESERVED = {"may", "mar", "jun", "jul", "dec", "nov", "oct", "sep", "aug", "apr", "jan", "feb",
             "when", "before", "after", "since", "until", "both", "between", "vs"}


@dataclass(frozen=True)
class BenchQuery:
    qid: str
    family: str
    text: str
    relevant: tuple[int, ...]      # corpus positions


@dataclass
class BenchCorpus:
    memories: list[tuple[str, dict]] = field(default_factory=list)
    vectors: dict[str, list[float]] = field(default_factory=dict)
    queries: list[BenchQuery] = field(default_factory=list)

    def add(self, content: str, timestamp: float, vector: np.ndarray | None = None) -> int:
        self.memories.append((content, {"timestamp": timestamp}))
        if vector is not None:
            self.vectors[content] = vector.tolist()
        return len(self.memories) - 1


def configurations(names: str = "full,all_math_off") -> dict[str, Ablation]:
    if names.strip() == "all":
        out = {"full": Ablation()}
        out.update({t: Ablation.from_names([t]) for t in TOGGLES})
        out["all_math_off"] = Ablation.from_names(["all_math_off"])
        return out
    out = {}
    for name in (n.strip() for n in names.split(",") if n.strip()):
        out[name] = Ablation() if name == "full" else Ablation.from_names(name.split("+"))
    return out


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

class _Words:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set()

    def take(self, syllables: int = 3) -> str:
        while True:
            w = "".join(self.rng.choice(list(_CONSONANTS)) + self.rng.choice(list(_VOWELS)) for _ in range(syllables))
            if w not in self.used and w not in _RESERVED:
                self.used.add(w)
                return w


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def build_corpus(seed: int = 0) -> BenchCorpus:
    rng = np.random.default_rng(seed)
    words = _Words(rng)
    corpus = BenchCorpus()
    fillers = [words.take(2) for _ in range(200)]
    day = 86_400.0

    # semantic family, oldest
    t0 = datetime(2020, 1, 1, tzinfo=timezone.utc).timestamp()
    for i in range(SEMANTIC_QUERIES):
        q = _unit(rng.standard_normal(DIM))
        topic = " ".join(words.take() for _ in range(4))
        ts = t0 + i * day
        target = _unit(q + TARGET_NOISE * _unit(rng.standard_normal(DIM)))
        pos = corpus.add(f"{topic} entry", ts, target)
        quiet = np.argsort(np.abs(q))[:DISTRACTORS]
        for dim in quiet:
            spike = np.zeros(DIM)
            spike[dim] = SPIKE * (1.0 if q[dim] >= 0 else -1.0)
            vec = _unit(q + spike + DISTRACTOR_NOISE * rng.standard_normal(DIM) / math.sqrt(DIM))
            extra = " ".join(rng.choice(fillers, 3, replace=False))
            corpus.add(f"{topic} {extra}", ts, vec)
        corpus.vectors[topic] = q.tolist()
        corpus.queries.append(BenchQuery(f"sem-{i:03d}", "semantic", topic, (pos,)))

    # multi-hop chains
    t1 = datetime(2021, 1, 1, tzinfo=timezone.utc).timestamp()
    for i in range(MULTIHOP_QUERIES):
        a, b, c = (words.take().capitalize() for _ in range(3))
        ts = t1 + i * day
        p1 = corpus.add(f"{a} works with {b} on the {words.take()} project.", ts)
        p2 = corpus.add(f"{b} works with {c} at the {words.take()} office.", ts + 60.0)
        corpus.queries.append(BenchQuery(f"hop-{i:03d}", "multihop", f"What connects {a} and {c}?", (p1, p2)))

    # temporal family: dated project notes
    base = datetime(2024, 1, 1, tzinfo=timezone.utc)
    for i in range(TEMPORAL_QUERIES):
        project = words.take().capitalize()
        dates = [base + timedelta(days=40 * i + 7 * j) for j in range(NOTES_PER_PROJECT)]
        positions = []
        for d in dates:
            topic = " ".join(rng.choice(fillers, 2, replace=False))
            positions.append(corpus.add(f"{project} review meeting held on {d:%Y-%m-%d} covered {topic}.",
                                        (d + timedelta(hours=9)).timestamp()))
        pick = int(rng.integers(NOTES_PER_PROJECT))
        corpus.queries.append(BenchQuery(f"tmp-{i:03d}", "temporal",
                                         f"What happened in the {project} review on {dates[pick]:%Y-%m-%d}?",
                                         (positions[pick],)))

    # fillers, newest
    t2 = datetime(2025, 6, 1, tzinfo=timezone.utc).timestamp()
    for i in range(FILLERS):
        corpus.add(" ".join(rng.choice(fillers, 6, replace=False)), t2 + i * day)
    return corpus


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def ndcg_at(ranked: list[str], relevant: set[str], k: int = 10) -> float:
    dcg = sum(1.0 / math.log2(i + 2) for i, mid in enumerate(ranked[:k]) if mid in relevant)
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(len(relevant), k)))
    return dcg / ideal if ideal else 0.0


def hit_at(ranked: list[str], relevant: set[str], k: int = 20) -> float:
    if not relevant:
        return 0.0
    return len(relevant & set(ranked[:k])) / len(relevant)


def bootstrap_ci(values, seed: int = 0, resamples: int = 1000, level: float = 0.95) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    means = values[rng.integers(0, values.size, (resamples, values.size))].mean(axis=1)
    tail = (1.0 - level) / 2.0 * 100.0
    return float(np.percentile(means, tail)), float(np.percentile(means, 100.0 - tail))


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

@dataclass
class BenchResult:
    summary: pd.DataFrame
    per_query: pd.DataFrame


def load_corpus(store: MemoryStore, corpus: BenchCorpus, profile_id: str = "bench") -> list[str]:
    ids = []
    for content, meta in corpus.memories:
        rec = store.store(content, meta, profile_id)
        if isinstance(rec, Rejected):
            raise RuntimeError(f"bench memory rejected: {content!r} ({rec})")
        ids.append(rec.id)
    store.record_accesses(ids, times=store.settings.similarity.ramp_threshold, profile_id=profile_id)
    return ids


def run_bench(seed: int = 0, configs: str = "full,all_math_off", top_k: int = 20,
              db_path: str | None = None) -> BenchResult:
    corpus = build_corpus(seed)
    embedder = PrecomputedEmbedder(corpus.vectors, dim=DIM, fallback=HashFeatureEmbedder(DIM))
    settings = Settings(embed_dim=DIM, profile_id="bench")
    with tempfile.TemporaryDirectory() as tmp:
        path = db_path or os.path.join(tmp, "bench.db")
        with MemoryStore(path, settings, embedder, clock=lambda: BENCH_NOW) as store:
            ids = load_corpus(store, corpus)
            log.info("Bench corpus: %d memories, %d queries", len(ids), len(corpus.queries))
            rows = []
            for name, ablation in configurations(configs).items():
                for q in corpus.queries:
                    got = retrieve(store, q.text, top_k, ablation).ids
                    rel = {ids[p] for p in q.relevant}
                    rows.append({"config": name, "qid": q.qid, "family": q.family,
                                 "ndcg@10": ndcg_at(got, rel), "hit@20": hit_at(got, rel, 20)})
    per_query = pd.DataFrame(rows)

    summary = []
    for name, grp in per_query.groupby("config", sort=False):
        lo, hi = bootstrap_ci(grp["ndcg@10"], seed)
        row = {"config": name, "ndcg@10": grp["ndcg@10"].mean(), "ndcg_lo": lo, "ndcg_hi": hi,
               "hit@20": grp["hit@20"].mean()}
        for fam, fgrp in grp.groupby("family", sort=True):
            row[f"ndcg@10_{fam}"] = fgrp["ndcg@10"].mean()
        summary.append(row)
    return BenchResult(pd.DataFrame(summary), per_query)
