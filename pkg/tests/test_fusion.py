# test_fusion.py
import json

import numpy as np
import pytest

from channels import EntityGraph, RankedCandidate
from errors import AdapterError, PreconditionError
from fusion import (Ablation, FusedCandidate, FusionConfig, Origin, QueryType, blend_rerank, bridge_discover,
                    classify_query, profile_lookup, retrieve, scene_expand, sufficiency, wrrf_fuse)

WEIGHTS = FusionConfig().channel_weights()


def _top(mid, score=1.0):
    return [RankedCandidate(mid, score, 1)]


# ── WRRF ─────────────────────────────────────────────────────────────────────

def test_wrrf_single_and_all_channels():
    one = wrrf_fuse({"semantic": _top("m")}, WEIGHTS)
    assert one[0].wrrf == pytest.approx(1.2 / 61)
    assert one[0].ranks == {"semantic": 1}
    four = wrrf_fuse({c: _top("m") for c in ("semantic", "bm25", "entity", "temporal")}, WEIGHTS)
    assert four[0].wrrf == pytest.approx(4.5 / 61)


def test_wrrf_multipliers_and_order():
    results = {"semantic": [RankedCandidate("a", 0.9, 1), RankedCandidate("b", 0.8, 2)],
               "entity": [RankedCandidate("b", 1.0, 1)]}
    fused = wrrf_fuse(results, WEIGHTS, {"entity": 1.5})
    assert [c.memory_id for c in fused] == ["b", "a"]
    assert fused[0].wrrf == pytest.approx(1.2 / 62 + 1.3 * 1.5 / 61)
    assert wrrf_fuse({}, WEIGHTS) == []
    assert wrrf_fuse({"semantic": _top("a")}, {"semantic": 0.0}) == []


def test_wrrf_ties_break_by_id():
    fused = wrrf_fuse({"semantic": _top("b"), "bm25": [RankedCandidate("a", 1.0, 1)]},
                      {"semantic": 1.0, "bm25": 1.0})
    assert [c.memory_id for c in fused] == ["a", "b"]


def _random_channels(rng, pool, channels=("semantic", "bm25", "entity", "temporal")):
    out = {}
    for ch in channels:
        picked = rng.permutation(pool)[: int(rng.integers(1, len(pool) + 1))]
        out[ch] = [RankedCandidate(str(mid), 1.0 / (r + 1), r + 1) for r, mid in enumerate(picked)]
    return out


def test_wrrf_ignores_channel_order_and_rewards_promotion(rng):
    pool = [f"m{i:02d}" for i in range(12)]
    for _ in range(50):
        results = _random_channels(rng, pool)
        base = wrrf_fuse(results, WEIGHTS)
        names = list(results)
        shuffled = {str(ch): results[str(ch)] for ch in rng.permutation(names)}
        again = wrrf_fuse(shuffled, WEIGHTS)
        assert [c.memory_id for c in again] == [c.memory_id for c in base]
        assert [c.wrrf for c in again] == [c.wrrf for c in base]

        ch = str(rng.choice(names))
        lst = results[ch]
        if len(lst) < 2:
            continue
        pos = int(rng.integers(1, len(lst)))
        target = lst[pos].memory_id
        # swap the target with its upper neighbour, one rank up
        ids = [c.memory_id for c in lst]
        ids[pos - 1], ids[pos] = ids[pos], ids[pos - 1]
        promoted = [RankedCandidate(mid, c.score, c.rank) for mid, c in zip(ids, lst)]
        after = {c.memory_id: c.wrrf for c in wrrf_fuse({**results, ch: promoted}, WEIGHTS)}
        before = {c.memory_id: c.wrrf for c in base}
        assert after[target] >= before[target]


# ── Classification ───────────────────────────────────────────────────────────

def test_classify_query_types():
    known = {"alice", "bob"}
    temporal = classify_query("What happened last month?", known, now=1_700_000_000.0)
    assert temporal.query_type is QueryType.TEMPORAL
    assert temporal.channel_multipliers["temporal"] == 1.5 and temporal.channel_multipliers["entity"] == 0.8
    assert temporal.blend_alpha == 0.5

    multi = classify_query("How are Alice and Bob connected?", known)
    assert multi.query_type is QueryType.MULTI_HOP
    assert multi.query_entities == {"alice", "bob"} and multi.channel_multipliers["entity"] == 1.5

    assert classify_query("What is the capital?", known).query_type is QueryType.OPEN_DOMAIN
    single = classify_query("Tell me about Alice", known)
    assert single.query_type is QueryType.SINGLE_HOP and single.blend_alpha == 0.75


def test_profile_lookup():
    profiles = {"alice": {"favourite_color": {"value": "blue", "memory_id": "mem-000001"}}}
    assert profile_lookup("What is Alice's favourite color?", profiles) == \
        ("alice", "favourite_color", {"value": "blue", "memory_id": "mem-000001"})
    assert profile_lookup("What is Alice’s favourite color", profiles)[1] == "favourite_color"
    assert profile_lookup("What is Bob's favourite color?", profiles) is None
    assert profile_lookup("Tell me about Alice", profiles) is None


# ── Ablation ─────────────────────────────────────────────────────────────────

def test_ablation_names():
    ab = Ablation.from_names(["bm25", " entity_off", ""])
    assert ab.names == ["bm25_off", "entity_off"] and ab.label == "bm25_off+entity_off"
    assert not ab.channel_enabled("bm25") and ab.channel_enabled("semantic")
    assert Ablation.from_names(["all_math_off"]).label == "all_math_off"
    assert Ablation().label == "full"
    with pytest.raises(PreconditionError):
        Ablation.from_names(["vibes"])


# ── Expansion stages ─────────────────────────────────────────────────────────

def test_scene_expand():
    fused = [FusedCandidate("a", 0.1), FusedCandidate("c", 0.02)]
    out = scene_expand(fused, {"s1": ["a", "b"], "s2": ["c"]})
    by_id = {c.memory_id: c for c in out}
    assert by_id["b"].wrrf == pytest.approx(0.05) and by_id["b"].origin is Origin.SCENE_EXPANSION
    assert by_id["a"].wrrf == 0.1 and by_id["a"].origin is Origin.CHANNEL
    assert [c.memory_id for c in out] == ["a", "b", "c"]


def test_bridge_discover():
    g = EntityGraph()
    for e in ("alice", "bob", "x", "far"):
        g.add_mention(e, f"m-{e}")
    g.add_edge("alice", "x", 1.0)
    g.add_edge("x", "bob", 1.0)
    g.add_edge("bob", "far", 1.0)
    fused = [FusedCandidate("m-alice", 0.1)]
    bridges = bridge_discover(g, {"alice", "bob"}, fused)
    assert [(b.memory_id, b.origin) for b in bridges] == [("m-x", Origin.BRIDGE)]
    assert bridges[0].wrrf == pytest.approx(0.07)
    assert bridge_discover(g, {"alice"}, fused) == []
    assert bridge_discover(g, {"alice", "bob"}, []) == []


def test_bridge_needs_connected_terminals():
    g = EntityGraph()
    g.add_mention("alice", "m1")
    g.add_mention("bob", "m2")
    assert bridge_discover(g, {"alice", "bob"}, [FusedCandidate("m1", 0.1)]) == []


def test_blend_rerank():
    fused = [FusedCandidate("a", 0.05), FusedCandidate("b", 0.04)]
    blended = blend_rerank(fused, {"a": 0.0, "b": 5.0}, alpha=0.75)
    assert blended[0].memory_id == "b"
    assert {c.memory_id: c.final for c in blended}["a"] == pytest.approx(0.3875)
    plain = blend_rerank(fused, None, alpha=0.75)
    assert [c.final for c in plain] == [0.05, 0.04]
    with pytest.raises(PreconditionError):
        blend_rerank(fused, {"a": 0.0}, alpha=0.5)
    with pytest.raises(ValueError):
        blend_rerank(fused, None, alpha=1.5)


def test_sufficiency():
    ents = {"m1": {"alice"}, "m2": {"alice", "bob"}}
    half = sufficiency({"alice", "bob"}, [FusedCandidate("m1", 0.1, final=0.5)], ents)
    assert half.entity_coverage == 0.5 and half.missing == ["bob"] and not half.sufficient
    full = sufficiency({"alice", "bob"}, [FusedCandidate("m2", 0.1, final=0.5)], ents)
    assert full.sufficient and full.covered == ["alice", "bob"]
    assert not sufficiency(set(), [], ents).sufficient
    assert not sufficiency(set(), [FusedCandidate("m1", 0.1, final=0.001)], ents).sufficient


# ── End to end ───────────────────────────────────────────────────────────────

def _seed(store):
    for text in ("Alice lives in Paris.", "Bob likes green tea.", "Carol plays the violin."):
        store.store(text)


def test_retrieve_end_to_end(store):
    _seed(store)
    out = retrieve(store, "Where does Alice live?", top_k=2)
    assert out.ids[0] == "mem-000001"
    assert len(out.results) == 2
    finals = [c.final for c in out.results]
    assert finals == sorted(finals, reverse=True)
    assert out.contents["mem-000001"] == "Alice lives in Paris."
    stages = [s.name for s in out.trace.stages]
    assert stages == ["classify", "profile_lookup", "channels", "wrrf_fuse", "scene_expand", "rerank",
                      "post_process"]
    json.dumps(out.trace.to_record())
    assert out.trace.sufficiency.sufficient


def test_retrieve_is_read_only(store):
    _seed(store)
    retrieve(store, "Where does Alice live?")
    assert store.get("mem-000001").n_access == 0


def test_retrieve_edge_cases(store):
    assert retrieve(store, "anything at all").results == []
    _seed(store)
    assert retrieve(store, "   ").results == []
    assert retrieve(store, "a b").trace.channels["semantic"] == []
    with pytest.raises(ValueError):
        retrieve(store, "Alice", top_k=0)


def test_profile_lookup_promotes_the_fact(store):
    _seed(store)
    store.store("Alice's favourite color is blue.")
    out = retrieve(store, "What is Alice's favourite color?")
    assert out.results[0].memory_id == "mem-000004"
    assert out.results[0].origin is Origin.PROFILE_LOOKUP


def test_superseded_memory_is_demoted(make_store, precomputed):
    e0, e1 = np.zeros(64), np.zeros(64)
    e0[0], e1[1] = 1.0, 1.0
    store = make_store(precomputed({"paris": e0, "london": e1}))
    store.store("Alice lives in Paris.")
    store.store("Alice lives in London.")
    full = retrieve(store, "Where does Alice live?")
    assert full.ids[0] == "mem-000002"
    off = retrieve(store, "Where does Alice live?", ablation=Ablation(sheaf_off=True))
    final = {c.memory_id: c.final for c in full.results}
    final_off = {c.memory_id: c.final for c in off.results}
    assert final["mem-000001"] == pytest.approx(0.25 * final_off["mem-000001"])
    assert final["mem-000002"] == pytest.approx(final_off["mem-000002"])


def test_ablation_drops_channels(store):
    _seed(store)
    out = retrieve(store, "Where does Alice live?", ablation=Ablation(bm25_off=True, cross_encoder_off=True))
    assert set(out.trace.channels) == {"semantic", "entity", "temporal"}
    assert all(c.ce_score is None for c in out.results)
    assert out.trace.ablation == ["bm25_off", "cross_encoder_off"]


class FailingReranker:
    def score_batch(self, query, docs):
        raise AdapterError("reranker down")

    def score(self, query, doc):
        raise AdapterError("reranker down")


def test_reranker_failure_falls_back_to_fused_scores(make_store):
    store = make_store(reranker=FailingReranker())
    _seed(store)
    out = retrieve(store, "Where does Alice live?")
    assert out.ids[0] == "mem-000001"
    rerank = next(s for s in out.trace.stages if s.name == "rerank")
    assert rerank.detail["blended"] is False


def test_zero_alpha_blend_keeps_fused_order(rng):
    for _ in range(100):
        n = int(rng.integers(1, 30))
        fused = [FusedCandidate(f"m{i:03d}", float(w)) for i, w in enumerate(rng.uniform(0.001, 0.1, n))]
        fused.sort(key=lambda c: (-c.wrrf, c.memory_id))
        ce = {c.memory_id: float(s) for c, s in zip(fused, rng.normal(0, 3, n))}
        blended = blend_rerank(fused, ce, alpha=0.0)
        assert [c.memory_id for c in blended] == [c.memory_id for c in fused]
