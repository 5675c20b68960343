# test_bench.py
import math

import numpy as np
import pytest

from bench import (DISTRACTORS, MULTIHOP_QUERIES, SEMANTIC_QUERIES, TEMPORAL_QUERIES, bootstrap_ci, build_corpus,
                   configurations, hit_at, ndcg_at, run_bench)
from errors import PreconditionError


def test_metrics():
    assert ndcg_at(["x", "r"], {"r"}) == pytest.approx(1.0 / math.log2(3))
    assert ndcg_at(["r1", "r2"], {"r1", "r2"}) == pytest.approx(1.0)
    assert ndcg_at([], {"r"}) == 0.0
    assert ndcg_at(["r"], set()) == 0.0
    assert hit_at(["a", "b"], {"b", "c"}) == 0.5
    assert hit_at(["a"], set()) == 0.0


def test_bootstrap_ci():
    assert bootstrap_ci([0.4] * 20) == (pytest.approx(0.4), pytest.approx(0.4))
    lo, hi = bootstrap_ci(np.linspace(0, 1, 50), seed=1)
    assert lo < 0.5 < hi
    assert bootstrap_ci([]) == (0.0, 0.0)


def test_configurations():
    everything = configurations("all")
    assert len(everything) == 9
    assert everything["all_math_off"].label == "all_math_off"
    picked = configurations("full, bm25_off+entity_off")
    assert list(picked) == ["full", "bm25_off+entity_off"]
    assert picked["bm25_off+entity_off"].names == ["bm25_off", "entity_off"]
    with pytest.raises(PreconditionError):
        configurations("full,nonsense")


def test_corpus_is_seeded():
    a, b = build_corpus(3), build_corpus(3)
    assert a.memories == b.memories and a.queries == b.queries
    assert a.memories != build_corpus(4).memories
    assert len(a.queries) == SEMANTIC_QUERIES + TEMPORAL_QUERIES + MULTIHOP_QUERIES
    assert len(a.memories) == 1000
    sem = [q for q in a.queries if q.family == "semantic"]
    assert all(len(q.relevant) == 1 for q in sem)
    # every semantic topic has a target plus its distractors
    assert sum(a.memories[i][0].startswith(sem[0].text) for i in range(len(a.memories))) == 1 + DISTRACTORS


@pytest.mark.slow
def test_bench_is_deterministic():
    first = run_bench(seed=1, configs="full")
    second = run_bench(seed=1, configs="full")
    assert first.per_query.equals(second.per_query)
    assert set(first.summary.columns) >= {"config", "ndcg@10", "ndcg_lo", "ndcg_hi", "hit@20",
                                          "ndcg@10_semantic", "ndcg@10_temporal", "ndcg@10_multihop"}


@pytest.mark.slow
def test_math_layers_improve_retrieval():
    summary = run_bench(seed=0).summary.set_index("config")
    assert summary.loc["full", "ndcg@10"] > summary.loc["all_math_off", "ndcg@10"]
