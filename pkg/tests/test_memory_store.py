# test_memory_store.py
import io
from dataclasses import replace

import numpy as np
import pytest

from adapters import HashFeatureEmbedder
from conftest import FIXED_NOW
from errors import (DimensionMismatchError, PreconditionError, StoreBusyError, StoreClosedError, StoreError,
                    UnknownMemoryError)
from fusion import retrieve
from langevin import LifecycleState
from memory_store import Rejected
from settings import StoreConfig

PARIS = "Alice lives in Paris."
LONDON = "Alice lives in London."


@pytest.fixture
def cities(precomputed):
    e0, e1 = np.zeros(64), np.zeros(64)
    e0[0], e1[1] = 1.0, 1.0
    return precomputed({"paris": e0, "london": e1})


class Boom(RuntimeError):
    pass


def _fail_at(step):
    def hook(name):
        if name == step:
            raise Boom(name)
    return hook


# ── Ingestion ────────────────────────────────────────────────────────────────

def test_store_and_get(store):
    rec = store.store(PARIS, {"session_id": "s1", "speaker": "user"})
    assert rec.id == "mem-000001"
    assert rec.entities == {"alice", "paris"}
    assert rec.facts == ("fact-000001",)
    assert rec.lifecycle is LifecycleState.ACTIVE and rec.n_access == 0
    assert rec.t_created == FIXED_NOW
    assert rec.provenance.session_id == "s1" and rec.provenance.speaker == "user"
    assert rec.embedding.dim == 64
    got = store.get(rec.id)
    assert got.content == PARIS and got.observation.token_count == 4
    assert store.facts(rec.id)[0].object_text == "paris"
    assert store.store("Bob likes green tea.").id == "mem-000002"


def test_empty_content_is_a_precondition(store):
    with pytest.raises(PreconditionError):
        store.store("   ")


def test_low_entropy_rejected_without_side_effects(store):
    out = store.store("ok ok ok ok ok")
    assert isinstance(out, Rejected) and out.gate == "entropy_gate"
    assert out.to_record()["rejected"] is True
    assert store.memory_ids() == []
    assert store.store(PARIS).id == "mem-000001"


def test_zero_embedding_rejected(store):
    out = store.store("a b c")
    assert isinstance(out, Rejected) and out.gate == "embedding"
    assert "no token" in out.detail
    assert store.memory_ids() == []


def test_embedding_dimension_fixed_by_first_memory(make_store):
    first = make_store()
    first.store(PARIS)
    first.close()
    with pytest.raises(DimensionMismatchError):
        make_store(HashFeatureEmbedder(32)).store(LONDON)


def test_explicit_timestamp_and_validity(store):
    rec = store.store("Alice started the new job.", {"timestamp": "2024-05-01T09:00:00Z"})
    assert rec.t_created == pytest.approx(1714554000.0)
    with pytest.raises(PreconditionError):
        store.store("Alice booked the venue.", {"valid_from": 200.0, "valid_until": 100.0})


def test_scenes_group_by_document_and_window(store):
    meta = {"source_document": "notes.md"}
    a = store.store("Alice met Bob at the cafe.", {**meta, "timestamp": FIXED_NOW})
    b = store.store("Bob ordered a large coffee.", {**meta, "timestamp": FIXED_NOW + 60})
    c = store.store("Alice drove back home later.", {**meta, "timestamp": FIXED_NOW + 3600})
    d = store.store("Carol wrote the quarterly report.", {"timestamp": FIXED_NOW + 30})
    assert a.scene_id == b.scene_id == "scene-000001"
    assert c.scene_id == "scene-000003"
    assert d.scene_id is None
    assert store.stats()["profiles"]["default"]["scenes"] == 2


# ── Consistency ──────────────────────────────────────────────────────────────

def test_contradicting_fact_supersedes_older(make_store, cities):
    store = make_store(cities)
    old = store.store(PARIS)
    new = store.store(LONDON)
    edges = store.supersedes_edges()
    assert [(n, o) for n, o, _ in edges] == [(new.id, old.id)]
    assert edges[0][2] > 0.45
    assert store.facts(old.id)[0].superseded_by == new.facts[0]
    assert store.facts(new.id)[0].superseded_by is None
    prof = store.profile_record("alice")
    assert prof.attributes["lives_in"] == {"value": "london", "memory_id": new.id}


def test_repeated_fact_does_not_supersede(make_store, cities):
    store = make_store(cities)
    store.store(PARIS)
    store.store(PARIS)
    assert store.supersedes_edges() == []


def test_sweep_creates_missing_supersedes(make_store, settings, cities):
    lax = make_store(cities, settings=replace(settings, store=StoreConfig(tau=10.0)))
    lax.store(PARIS)
    lax.store(LONDON)
    assert lax.supersedes_edges() == []
    lax.close()

    strict = make_store(cities)
    check = strict.check_consistency()
    assert [(d.newer_memory_id, d.older_memory_id) for d in check.created] == [("mem-000002", "mem-000001")]
    assert set(check.slots) == {"alice/lives_in"}
    assert check.report.kappa > 0.45
    assert check.to_record()["supersedes_created"][0]["newer"] == "mem-000002"
    assert strict.check_consistency().created == []


def test_consistency_on_empty_store(store):
    check = store.check_consistency()
    assert check.report.kappa == 0.0 and check.report.h1_dim == 0 and check.created == []


# ── Access and lifecycle ─────────────────────────────────────────────────────

def test_record_access(store, clock):
    rec = store.store(PARIS)
    clock.advance(100.0)
    after = store.record_access(rec.id, times=2)
    assert after.n_access == 2
    assert after.t_accessed == FIXED_NOW + 100.0
    assert after.lifecycle is LifecycleState.ACTIVE


def test_record_access_is_atomic(store):
    rec = store.store(PARIS)
    with pytest.raises(UnknownMemoryError):
        store.record_accesses([rec.id, "mem-999999"])
    assert store.get(rec.id).n_access == 0
    with pytest.raises(ValueError):
        store.record_accesses([rec.id], times=0)


def test_maintain(store):
    ids = [store.store(t).id for t in (PARIS, "Bob likes green tea.", "Carol plays the violin.")]
    report = store.maintain(steps=20, seed=3)
    assert sorted(report.states) == ids
    assert sum(report.counts_after.values()) == 3
    moved = store.get(ids[0]).langevin
    assert moved.xi.norm > 0.0 and moved.last_step_time == FIXED_NOW
    assert store.maintain(steps=0).transitions == []


def test_maintain_deterministic(make_store, tmp_path):
    coords = []
    for name in ("a.db", "b.db"):
        st = make_store(path=str(tmp_path / name))
        mid = st.store(PARIS).id
        st.maintain(steps=15, seed=9)
        coords.append(st.get(mid).langevin.xi.coords)
    assert np.array_equal(coords[0], coords[1])


# ── Erase ────────────────────────────────────────────────────────────────────

def test_erase_memory(store):
    a = store.store("Alice met Bob at the cafe.")
    store.store("Bob ordered a large coffee.")
    assert store.erase(a.id) == 1
    with pytest.raises(UnknownMemoryError):
        store.get(a.id)
    assert store.erase(a.id) == 0
    stats = store.stats()["profiles"]["default"]
    assert stats["memories"] == 1 and stats["entity_edges"] == 0 and stats["entities"] == 1


def test_erase_by_entity_clears_derived_rows(make_store, cities):
    store = make_store(cities)
    old = store.store(PARIS)
    new = store.store(LONDON)
    assert store.erase(entity="london") == 1
    assert store.memory_ids() == [old.id]
    assert store.supersedes_edges() == []
    assert store.facts(old.id)[0].superseded_by is None
    assert store.profile_record("alice").attributes == {"lives_in": {"value": "paris", "memory_id": old.id}}
    with pytest.raises(UnknownMemoryError):
        store.get(new.id)


def test_erasing_the_newer_fact_restores_the_older(make_store, cities):
    store = make_store(cities)
    old = store.store(PARIS)
    new = store.store(LONDON)
    assert store.erase(new.id) == 1
    assert store.facts(old.id)[0].superseded_by is None
    assert store.profile_record("alice").attributes["lives_in"] == {"value": "paris", "memory_id": old.id}
    assert store.snapshot().profiles["alice"]["lives_in"]["memory_id"] == old.id


def test_erasing_the_older_fact_keeps_the_current_one(make_store, cities):
    store = make_store(cities)
    old = store.store(PARIS)
    new = store.store(LONDON)
    assert store.erase(old.id) == 1
    assert store.profile_record("alice").attributes["lives_in"] == {"value": "london", "memory_id": new.id}


def test_erase_profile(store):
    store.store(PARIS, profile_id="p1")
    store.store("Bob likes green tea.", profile_id="p2")
    assert store.erase(profile_id="p1") == 1
    assert store.profiles() == ["p2"]


def test_erase_needs_one_selector(store):
    with pytest.raises(PreconditionError):
        store.erase()
    with pytest.raises(PreconditionError):
        store.erase("mem-000001", entity="alice")


# ── Profiles ─────────────────────────────────────────────────────────────────

def test_profiles_are_isolated(store):
    a = store.store(PARIS, profile_id="a")
    b = store.store("Bob likes green tea.", profile_id="b")
    assert store.memory_ids("a") == [a.id] and store.memory_ids("b") == [b.id]
    with pytest.raises(UnknownMemoryError):
        store.get(a.id, profile_id="b")
    assert store.snapshot("b").known_entities == {"bob"}
    assert store.stats("a")["profiles"].keys() == {"a"}


def test_reads_default_to_the_handle_profile(store):
    other = store.store(PARIS, profile_id="other")
    assert other.profile_id == "other"
    with pytest.raises(UnknownMemoryError):
        store.get(other.id)
    with pytest.raises(UnknownMemoryError):
        store.record_access(other.id)
    assert store.facts(other.id) == []
    assert store.get(other.id, profile_id="other").content == PARIS
    assert store.record_access(other.id, profile_id="other").n_access == 1


# ── Concurrency and durability ───────────────────────────────────────────────

def test_second_writer_is_refused(store, make_store):
    with pytest.raises(StoreBusyError):
        make_store()


def test_read_only_handle(store, make_store, tmp_path):
    store.store(PARIS)
    ro = make_store(read_only=True)
    assert ro.get("mem-000001").content == PARIS
    with pytest.raises(StoreError):
        ro.store(LONDON)
    with pytest.raises(StoreError):
        make_store(path=str(tmp_path / "missing.db"), read_only=True)


def test_closed_store(store):
    store.close()
    with pytest.raises(StoreClosedError):
        store.get("mem-000001")
    store.close()


@pytest.mark.parametrize("step", ["embed", "sheaf", "persist", "persist:memories", "persist:facts",
                                  "persist:supersedes", "persist:profiles"])
def test_crash_during_store_leaves_file_unchanged(make_store, cities, step):
    store = make_store(cities)
    store.store(PARIS)
    before = io.StringIO()
    store.export_jsonl(before)
    store.fault_hook = _fail_at(step)
    with pytest.raises(Boom):
        store.store(LONDON)
    after = io.StringIO()
    store.export_jsonl(after)
    assert after.getvalue() == before.getvalue()
    store.fault_hook = None
    assert store.store(LONDON).id == "mem-000002"


def test_crash_during_erase_rolls_back(store):
    rec = store.store(PARIS)
    store.fault_hook = _fail_at("erase:cleanup")
    with pytest.raises(Boom):
        store.erase(rec.id)
    assert store.get(rec.id).content == PARIS


# ── Stats, compaction, export ────────────────────────────────────────────────

def test_stats(make_store, cities):
    store = make_store(cities)
    store.store(PARIS)
    store.store(LONDON)
    store.compact()
    s = store.stats()
    p = s["profiles"]["default"]
    assert p["memories"] == 2 and p["facts"] == 2 and p["supersedes"] == 1
    assert p["lifecycle"] == {"active": 2, "warm": 0, "cold": 0, "archived": 0}
    assert s["db_bytes"] > 0


def test_compact_keeps_data(store):
    rec = store.store(PARIS)
    store.compact()
    assert store.get(rec.id).content == PARIS


def test_export_import_round_trip(make_store, cities, tmp_path):
    src = make_store(cities)
    src.store(PARIS, {"source_document": "notes.md"})
    src.store(LONDON, {"source_document": "notes.md"})
    src.record_access("mem-000001")
    dump = io.StringIO()
    n = src.export_jsonl(dump)
    assert dump.getvalue().splitlines()[0] == '{"format": "geomem-export", "version": 1}'

    dst = make_store(cities, path=str(tmp_path / "copy.db"))
    assert dst.import_jsonl(io.StringIO(dump.getvalue())) == n - sum(
        1 for line in dump.getvalue().splitlines() if '"table": "config"' in line)
    again = io.StringIO()
    dst.export_jsonl(again)
    assert again.getvalue() == dump.getvalue()
    assert dst.get("mem-000001").n_access == 1
    assert dst.supersedes_edges() == src.supersedes_edges()
    assert dst.store("Carol plays the violin.").id == "mem-000003"


def test_import_rejects_conflicts_and_bad_input(store):
    store.store(PARIS)
    dump = io.StringIO()
    store.export_jsonl(dump)
    with pytest.raises(StoreError):
        store.import_jsonl(io.StringIO(dump.getvalue()))
    assert store.memory_ids() == ["mem-000001"]
    with pytest.raises(PreconditionError):
        store.import_jsonl(io.StringIO('{"table": "memories", "row": {}}\n'))
    with pytest.raises(PreconditionError):
        store.import_jsonl(io.StringIO('{"format": "geomem-export", "version": 1}\n{"table": "nope", "row": {}}\n'))


# ── Two-profile interleaving ─────────────────────────────────────────────────

NAMES = ("Alice", "Bob", "Carol", "Dave")
PLACES = ("Paris", "London", "Madrid", "Oslo", "Vienna")
DOINGS = ("cooked dinner", "painted the fence", "read a novel", "fixed the bike", "watched a concert")


def _assert_confined(store, owned, profile):
    mine = owned[profile]
    snap = store.snapshot(profile)
    assert set(snap.ids) == mine
    assert set(snap.contents) <= mine
    assert {m for ms in snap.scenes.values() for m in ms} <= mine
    assert snap.superseded <= mine
    assert {a["memory_id"] for attrs in snap.profiles.values() for a in attrs.values()} <= mine
    assert store.memory_ids(profile) == sorted(mine)
    assert store.stats(profile)["profiles"][profile]["memories"] == len(mine)
    for newer, older, _ in store.supersedes_edges(profile):
        assert newer in mine and older in mine


@pytest.mark.slow
def test_interleaved_profiles_never_leak(store, clock):
    rng = np.random.default_rng(2024)
    owned = {"a": set(), "b": set()}
    for step in range(1000):
        me = str(rng.choice(["a", "b"]))
        other = "b" if me == "a" else "a"
        op = rng.choice(["store", "retrieve", "access", "erase_id", "erase_entity", "maintain"],
                        p=[0.45, 0.2, 0.1, 0.1, 0.05, 0.1])
        clock.advance(float(rng.integers(1, 900)))
        name, place, doing = rng.choice(NAMES), rng.choice(PLACES), rng.choice(DOINGS)

        if op == "store":
            text = f"{name} {doing} in {place} during step {step}."
            meta = {"source_document": f"{me}-notes.md"} if rng.random() < 0.5 else {}
            rec = store.store(text, meta, profile_id=me)
            if not isinstance(rec, Rejected):
                assert rec.profile_id == me
                owned[me].add(rec.id)
        elif op == "retrieve":
            out = retrieve(store, f"What did {name} do in {place}?", top_k=10, profile_id=me)
            assert set(out.ids) <= owned[me]
        elif op == "access" and owned[other]:
            foreign = str(rng.choice(sorted(owned[other])))
            with pytest.raises(UnknownMemoryError):
                store.record_access(foreign, profile_id=me)
            if owned[me]:
                store.record_access(str(rng.choice(sorted(owned[me]))), profile_id=me)
        elif op == "erase_id" and owned[other]:
            foreign = str(rng.choice(sorted(owned[other])))
            assert store.erase(foreign, profile_id=me) == 0
            if owned[me] and rng.random() < 0.5:
                victim = str(rng.choice(sorted(owned[me])))
                assert store.erase(victim, profile_id=me) == 1
                owned[me].discard(victim)
        elif op == "erase_entity":
            before_other = store.memory_ids(other)
            n = store.erase(profile_id=me, entity=name.lower())
            remaining = set(store.memory_ids(me))
            assert remaining <= owned[me] and len(owned[me] - remaining) == n
            owned[me] = remaining
            assert store.memory_ids(other) == before_other
        elif op == "maintain":
            report = store.maintain(profile_id=me, steps=2, seed=step)
            assert set(report.states) == owned[me]

        _assert_confined(store, owned, me)
        _assert_confined(store, owned, other)
