# memory_store.py
"""
Single-file SQLite memory store.

One writer per file (advisory flock on <db>.lock plus BEGIN IMMEDIATE),
any number of readers. Every write path runs inside one transaction, so a
failure at any point leaves the file as it was before the call.
"""
from __future__ import annotations

import fcntl
import json
import logging
import os
import sqlite3
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, TextIO

import numpy as np

from adapters import Embedder, Reranker, build_embedder, build_reranker, parse_embedder_spec, parse_reranker_spec
from channels import Bm25Index, EntityGraph, TemporalRecord, term_frequencies
from db_schema import BLOB_COLUMNS, TABLES, from_blob, initialize_database, to_blob
from errors import (DimensionMismatchError, PreconditionError, StoreBusyError, StoreClosedError, StoreError,
                    UnknownMemoryError, ZeroVectorError)
from extraction import entropy_gate, extract_entities, extract_facts, find_date
from fusion import CorpusSnapshot
from hyperbolic import BallPoint
from info_geometry import GaussianEmbedding, estimate_variance
from langevin import D_STATE, LangevinState, LifecycleState, MaintenanceReport, access_boost, lifecycle_of, maintenance_pass
from settings import Settings
from sheaf import (ConsistencyReport, ContextSheaf, FactObservation, SupersedesDirective, check_new_fact,
                   complete_sheaf, consistency_report, sweep_slot)
from utils.utils import to_epoch, tokenize

log = logging.getLogger("geomem.store")

EXPORT_FORMAT = "geomem-export"
EXPORT_VERSION = 1

INGEST_STEPS = ("embed", "metadata", "entities", "facts", "emotions", "graph", "sheaf", "foresight",
                "observation", "entropy_gate", "persist")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProvenanceRecord:
    session_id: str | None
    speaker: str | None
    timestamp: float
    source_document: str | None


@dataclass(frozen=True)
class Observation:
    token_count: int
    entity_count: int
    entropy_bits: float


@dataclass(frozen=True, eq=False)
class FactRecord:
    id: str
    memory_id: str
    subject: str
    predicate: str
    object_text: str
    embedding: np.ndarray
    context_id: str
    observed_at: float
    superseded_by: str | None = None


@dataclass(frozen=True, eq=False)
class MemoryRecord:
    id: str
    profile_id: str
    content: str
    embedding: GaussianEmbedding
    entities: frozenset[str]
    facts: tuple[str, ...]
    scene_id: str | None
    context_id: str
    t_created: float
    t_accessed: float
    n_access: int
    lifecycle: LifecycleState
    langevin: LangevinState
    provenance: ProvenanceRecord
    observation: Observation

    def to_record(self) -> dict:
        return {"id": self.id, "profile_id": self.profile_id, "content": self.content,
                "entities": sorted(self.entities), "facts": list(self.facts), "scene_id": self.scene_id,
                "n_access": self.n_access, "lifecycle": self.lifecycle.name.lower(),
                "t_created": self.t_created, "t_accessed": self.t_accessed}


@dataclass(frozen=True)
class ProfileRecord:
    profile_id: str
    entity_id: str
    attributes: dict[str, dict]


@dataclass(frozen=True)
class Rejected:
    gate: str
    detail: str
    entropy_bits: float | None = None

    def to_record(self) -> dict:
        return {"rejected": True, "reason": self.gate, "detail": self.detail, "entropy_bits": self.entropy_bits}


@dataclass
class ConsistencyCheck:
    profile_id: str
    report: ConsistencyReport
    slots: dict[str, ConsistencyReport] = field(default_factory=dict)
    created: list[SupersedesDirective] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"profile_id": self.profile_id, **self.report.to_record(),
                "slots": {k: v.to_record() for k, v in sorted(self.slots.items())},
                "supersedes_created": [{"newer": d.newer_memory_id, "older": d.older_memory_id, "kappa": d.kappa}
                                       for d in self.created]}


# ---------------------------------------------------------------------------
# Handle registry (open is idempotent per path)
# ---------------------------------------------------------------------------

_OPEN: dict[tuple[str, bool], "MemoryStore"] = {}
_OPEN_LOCK = threading.Lock()


def _remote_kwargs(settings: Settings) -> dict:
    return dict(api_key=settings.remote_api_key, timeout=settings.remote_timeout,
                retries=settings.remote_retries, max_in_flight=settings.remote_concurrency)


def default_embedder(settings: Settings) -> Embedder:
    return build_embedder(parse_embedder_spec(settings.embedder, settings.embed_dim), **_remote_kwargs(settings))


def default_reranker(settings: Settings) -> Reranker | None:
    return build_reranker(parse_reranker_spec(settings.reranker), **_remote_kwargs(settings))


def open_store(path: str, settings: Settings | None = None, embedder: Embedder | None = None,
               reranker: Reranker | None = None, read_only: bool = False,
               clock: Callable[[], float] = time.time) -> "MemoryStore":
    key = (os.path.realpath(path), read_only)
    with _OPEN_LOCK:
        existing = _OPEN.get(key)
        if existing is not None and not existing.closed:
            return existing
        st = MemoryStore(path, settings, embedder, reranker, read_only=read_only, clock=clock)
        _OPEN[key] = st
        return st


class MemoryStore:
    def __init__(self, path: str, settings: Settings | None = None, embedder: Embedder | None = None,
                 reranker: Reranker | None = None, read_only: bool = False,
                 clock: Callable[[], float] = time.time, fault_hook: Callable[[str], None] | None = None,
                 use_default_reranker: bool = True):
        self.path = path
        self.settings = settings or Settings.from_env()
        if embedder is None:
            embedder = default_embedder(self.settings)
        if reranker is None and use_default_reranker:
            reranker = default_reranker(self.settings)
        self.embedder = embedder
        self.reranker = reranker
        self.read_only = read_only
        self.clock = clock
        self.fault_hook = fault_hook
        self.closed = False
        self._lock = threading.RLock()
        self._lock_fh = None
        self._generation = 0
        self._snapshots: dict[str, tuple[tuple[int, int], CorpusSnapshot]] = {}

        if read_only:
            if not os.path.exists(path):
                raise StoreError(f"no store at {path}")
            try:
                self.conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True, isolation_level=None,
                                            check_same_thread=False, timeout=5.0)
            except sqlite3.Error as e:
                raise StoreError(f"cannot open {path}: {e}") from e
        else:
            self._acquire_writer_lock()
            try:
                self.conn = sqlite3.connect(path, isolation_level=None, check_same_thread=False, timeout=5.0)
                self.conn.execute("PRAGMA journal_mode=WAL")
                self.conn.execute("PRAGMA synchronous=NORMAL")
            except sqlite3.Error as e:
                self._release_writer_lock()
                raise StoreError(f"cannot open {path}: {e}") from e
        self.conn.row_factory = sqlite3.Row
        self.conn.execute("PRAGMA foreign_keys=ON")
        if not read_only:
            with self._transaction():
                initialize_database(self.conn)
        log.debug("Opened %s (%s)", path, "read-only" if read_only else "writer")

    # ── lifecycle ───────────────────────────────────────────────────────────
    def _acquire_writer_lock(self) -> None:
        fh = open(self.path + ".lock", "a+")
        try:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            fh.close()
            raise StoreBusyError(f"{self.path} is held by another writer")
        self._lock_fh = fh

    def _release_writer_lock(self) -> None:
        if self._lock_fh is not None:
            fcntl.flock(self._lock_fh.fileno(), fcntl.LOCK_UN)
            self._lock_fh.close()
            self._lock_fh = None

    def close(self) -> None:
        with self._lock:
            if self.closed:
                return
            if not self.read_only:
                self.conn.execute("PRAGMA wal_checkpoint(PASSIVE)")
            self.conn.close()
            self._release_writer_lock()
            self.closed = True
            self._snapshots.clear()
        with _OPEN_LOCK:
            for key, st in list(_OPEN.items()):
                if st is self:
                    del _OPEN[key]
        log.debug("Closed %s", self.path)

    def __enter__(self) -> "MemoryStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def now(self) -> float:
        return float(self.clock())

    def _check_open(self) -> None:
        if self.closed:
            raise StoreClosedError(f"store {self.path} is closed")

    def _check_writable(self) -> None:
        self._check_open()
        if self.read_only:
            raise StoreError(f"store {self.path} is open read-only")

    def _fault(self, step: str) -> None:
        if self.fault_hook is not None:
            self.fault_hook(step)

    @contextmanager
    def _transaction(self, mode: str = "IMMEDIATE"):
        try:
            self.conn.execute(f"BEGIN {mode}")
        except sqlite3.OperationalError as e:
            if "locked" in str(e) or "busy" in str(e):
                raise StoreBusyError(f"{self.path}: {e}") from e
            raise
        try:
            yield self.conn
        except BaseException:
            self.conn.execute("ROLLBACK")
            raise
        else:
            self.conn.execute("COMMIT")
            if mode == "IMMEDIATE":
                self._generation += 1

    def _profile(self, profile_id: str | None) -> str:
        return profile_id or self.settings.profile_id

    # ── config counters ─────────────────────────────────────────────────────
    def _config(self, key: str, default: str | None = None) -> str | None:
        row = self.conn.execute("SELECT value FROM config WHERE key = ?", (key,)).fetchone()
        return row["value"] if row else default

    def _set_config(self, key: str, value) -> None:
        self.conn.execute("INSERT INTO config (key, value) VALUES (?, ?) "
                          "ON CONFLICT(key) DO UPDATE SET value = excluded.value", (key, str(value)))

    # ---------------------------------------------------------------------------
    # Ingestion
    # ---------------------------------------------------------------------------

    def store(self, content: str, metadata: dict | None = None,
              profile_id: str | None = None) -> MemoryRecord | Rejected:
        self._check_writable()
        if not content or not content.strip():
            raise PreconditionError("content must be non-empty")
        profile = self._profile(profile_id)
        meta = dict(metadata or {})
        cfg = self.settings.store

        with self._lock:
            now = self.now()
            mem_seq = int(self._config("next_memory_seq", "1"))
            fact_seq = int(self._config("next_fact_seq", "1"))
            mem_id = f"mem-{mem_seq:06d}"

            # (1) embed
            self._fault("embed")
            try:
                vec = np.asarray(self.embedder.embed(content), dtype=np.float64).reshape(-1)
            except ZeroVectorError as e:
                log.info("Rejected (embedding): %s", e)
                return Rejected("embedding", str(e))
            dim = self._config("embed_dim")
            if dim is not None and int(dim) != vec.shape[0]:
                raise DimensionMismatchError(f"embedder gives dim {vec.shape[0]}, store holds dim {dim}")
            try:
                emb = estimate_variance(vec, self.settings.similarity)
            except ZeroVectorError:
                log.info("Rejected (embedding): %r embeds to the zero vector", content[:60])
                return Rejected("embedding", "content embeds to the zero vector")

            # (2) metadata
            self._fault("metadata")
            ts = to_epoch(meta.get("timestamp"))
            timestamp = now if ts is None else ts
            provenance = ProvenanceRecord(meta.get("session_id"), meta.get("speaker"), timestamp,
                                          meta.get("source_document"))
            refers_to = to_epoch(meta["refers_to"]) if meta.get("refers_to") is not None else find_date(content, timestamp)
            valid_from = to_epoch(meta.get("valid_from"))
            valid_until = to_epoch(meta.get("valid_until"))
            if valid_from is not None and valid_until is not None and valid_from > valid_until:
                raise PreconditionError("valid_from must not be after valid_until")
            scene_id, scene_is_new = self._scene_for(profile, provenance.source_document, timestamp, mem_seq)
            context_id = str(meta.get("context") or scene_id or mem_id)

            # (3) entities
            self._fault("entities")
            entities = extract_entities(content, self._known_entities(profile))

            # (4) facts
            self._fault("facts")
            facts = extract_facts(content, entities, embed=self.embedder.embed)
            fact_ids = [f"fact-{fact_seq + i:06d}" for i in range(len(facts))]

            # (5) emotions / beliefs: not modelled
            self._fault("emotions")

            # (6) entity graph
            self._fault("graph")
            pairs = list(combinations(sorted(entities), 2))

            # (7) sheaf check per fact slot
            self._fault("sheaf")
            directives: list[tuple[SupersedesDirective, str, str]] = []  # directive, subject, predicate
            pending: list[FactObservation] = []
            for fact in facts:
                existing = self._slot_observations(profile, fact.subject, fact.predicate)
                existing += [p for p, f in zip(pending, facts) if (f.subject, f.predicate) == (fact.subject, fact.predicate)]
                ob = FactObservation(mem_id, context_id, fact.embedding, timestamp)
                _, directive = check_new_fact(existing, ob, cfg.tau, cfg.sheaf_eps)
                if directive is not None:
                    directives.append((directive, fact.subject, fact.predicate))
                pending.append(ob)

            # (8) foresight: not modelled
            self._fault("foresight")

            # (9) observation summary
            self._fault("observation")
            tokens = tokenize(content)
            gate = entropy_gate(content, cfg.entropy_threshold_bits, cfg.min_tokens)
            observation = Observation(len(tokens), len(entities), gate.entropy_bits)

            # (10) entropy gate
            self._fault("entropy_gate")
            if not gate.passed:
                log.info("Rejected (entropy_gate): %s", gate.reason)
                return Rejected("entropy_gate", gate.reason or "", gate.entropy_bits)

            # (11) persist
            self._fault("persist")
            with self._transaction() as c:
                self._set_config("next_memory_seq", mem_seq + 1)
                self._set_config("next_fact_seq", fact_seq + len(facts))
                if dim is None:
                    self._set_config("embed_dim", vec.shape[0])
                if scene_id is not None:
                    if scene_is_new:
                        c.execute("INSERT INTO scenes (scene_id, profile_id, source_document, started_at, last_at) "
                                  "VALUES (?, ?, ?, ?, ?)",
                                  (scene_id, profile, provenance.source_document, timestamp, timestamp))
                    else:
                        c.execute("UPDATE scenes SET last_at = MAX(last_at, ?), started_at = MIN(started_at, ?) "
                                  "WHERE scene_id = ?", (timestamp, timestamp, scene_id))
                self._fault("persist:scenes")

                c.execute("""
                    INSERT INTO memories (id, profile_id, content, mu, var, dim, scene_id, context_id, t_created,
                                          t_accessed, n_access, lifecycle, token_count, entity_count, entropy_bits)
                    VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, 0, ?, ?, ?, ?)
                """, (mem_id, profile, content, to_blob(emb.mu), to_blob(emb.var), emb.dim, scene_id, context_id,
                      timestamp, timestamp, int(LifecycleState.ACTIVE), observation.token_count,
                      observation.entity_count, observation.entropy_bits))
                self._fault("persist:memories")

                c.execute("INSERT INTO provenance VALUES (?, ?, ?, ?, ?, ?)",
                          (mem_id, profile, provenance.session_id, provenance.speaker, provenance.timestamp,
                           provenance.source_document))
                c.execute("INSERT INTO temporal_events VALUES (?, ?, ?, ?, ?, ?)",
                          (mem_id, profile, timestamp, refers_to, valid_from, valid_until))
                c.execute("INSERT INTO langevin_states VALUES (?, ?, ?, ?)",
                          (mem_id, profile, to_blob(np.zeros(D_STATE)), timestamp))
                self._fault("persist:provenance")

                for ent in sorted(entities):
                    c.execute("INSERT OR IGNORE INTO entities VALUES (?, ?, ?)", (profile, ent, timestamp))
                    c.execute("INSERT INTO entity_mentions VALUES (?, ?, ?)", (profile, ent, mem_id))
                for a, b in pairs:
                    c.execute("INSERT INTO entity_edges VALUES (?, ?, ?, 1) ON CONFLICT(profile_id, entity_a, entity_b) "
                              "DO UPDATE SET count = count + 1", (profile, a, b))
                self._fault("persist:entities")

                c.executemany("INSERT INTO bm25_postings VALUES (?, ?, ?, ?)",
                              [(profile, term, mem_id, tf) for term, tf in sorted(term_frequencies(tokens).items())])
                self._fault("persist:bm25")

                for fid, fact in zip(fact_ids, facts):
                    c.execute("INSERT INTO facts VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, NULL)",
                              (fid, profile, mem_id, fact.subject, fact.predicate, fact.object_text,
                               to_blob(fact.embedding), context_id, timestamp))
                self._fault("persist:facts")

                for directive, subject, predicate in directives:
                    self._persist_directive(profile, directive, subject, predicate, now)
                self._fault("persist:supersedes")

                for fact in facts:
                    self._set_profile_attribute(profile, fact.subject, fact.predicate, fact.object_text, mem_id)
                self._fault("persist:profiles")

            log.info("Stored %s (profile=%s, %d entities, %d facts, %d supersedes)",
                     mem_id, profile, len(entities), len(facts), len(directives))
        return self.get(mem_id, profile)

    def _scene_for(self, profile: str, source_document: str | None, ts: float,
                   mem_seq: int) -> tuple[str | None, bool]:
        if not source_document:
            return None, False
        window = self.settings.store.scene_window_s
        row = self.conn.execute("""
            SELECT scene_id FROM scenes
            WHERE profile_id = ? AND source_document = ? AND ? BETWEEN started_at - ? AND last_at + ?
            ORDER BY last_at DESC, scene_id LIMIT 1
        """, (profile, source_document, ts, window, window)).fetchone()
        if row:
            return row["scene_id"], False
        return f"scene-{mem_seq:06d}", True

    def _known_entities(self, profile: str) -> set[str]:
        return {r[0] for r in self.conn.execute("SELECT entity_id FROM entities WHERE profile_id = ?", (profile,))}

    def _slot_observations(self, profile: str, subject: str, predicate: str) -> list[FactObservation]:
        rows = self.conn.execute("""
            SELECT memory_id, context_id, embedding, observed_at FROM facts
            WHERE profile_id = ? AND subject = ? AND predicate = ?
            ORDER BY observed_at, id
        """, (profile, subject, predicate)).fetchall()
        return [FactObservation(r["memory_id"], r["context_id"], from_blob(r["embedding"]), r["observed_at"])
                for r in rows]

    def _persist_directive(self, profile: str, d: SupersedesDirective, subject: str, predicate: str,
                           now: float) -> bool:
        cur = self.conn.execute("INSERT OR IGNORE INTO supersedes_edges VALUES (?, ?, ?, ?, ?)",
                                (profile, d.newer_memory_id, d.older_memory_id, d.kappa, now))
        newer = self.conn.execute("SELECT id FROM facts WHERE memory_id = ? AND subject = ? AND predicate = ? "
                                  "ORDER BY id LIMIT 1", (d.newer_memory_id, subject, predicate)).fetchone()
        if newer is not None:
            self.conn.execute("UPDATE facts SET superseded_by = ? WHERE memory_id = ? AND subject = ? AND predicate = ? "
                              "AND superseded_by IS NULL", (newer["id"], d.older_memory_id, subject, predicate))
        if cur.rowcount:
            log.info("SUPERSEDES %s -> %s (kappa=%.3f)", d.newer_memory_id, d.older_memory_id, d.kappa)
        return bool(cur.rowcount)

    def _set_profile_attribute(self, profile: str, entity: str, attr: str, value: str, memory_id: str) -> None:
        row = self.conn.execute("SELECT attributes FROM profiles WHERE profile_id = ? AND entity_id = ?",
                                (profile, entity)).fetchone()
        attrs = json.loads(row["attributes"]) if row else {}
        attrs[attr] = {"value": value, "memory_id": memory_id}
        self.conn.execute("INSERT INTO profiles VALUES (?, ?, ?) ON CONFLICT(profile_id, entity_id) "
                          "DO UPDATE SET attributes = excluded.attributes",
                          (profile, entity, json.dumps(attrs, sort_keys=True)))

    # ---------------------------------------------------------------------------
    # Reads
    # ---------------------------------------------------------------------------

    def get(self, memory_id: str, profile_id: str | None = None) -> MemoryRecord:
        self._check_open()
        profile = self._profile(profile_id)
        with self._lock:
            row = self.conn.execute("""
                SELECT m.*, p.session_id, p.speaker, p.timestamp, p.source_document, l.xi, l.last_step_time
                FROM memories m
                JOIN provenance p ON p.memory_id = m.id
                JOIN langevin_states l ON l.memory_id = m.id
                WHERE m.id = ?
            """, (memory_id,)).fetchone()
            if row is None or row["profile_id"] != profile:
                raise UnknownMemoryError(memory_id)
            ents = frozenset(r[0] for r in self.conn.execute(
                "SELECT entity_id FROM entity_mentions WHERE memory_id = ?", (memory_id,)))
            fact_ids = tuple(r[0] for r in self.conn.execute(
                "SELECT id FROM facts WHERE memory_id = ? ORDER BY id", (memory_id,)))
        return MemoryRecord(
            id=row["id"], profile_id=row["profile_id"], content=row["content"],
            embedding=GaussianEmbedding(from_blob(row["mu"]), from_blob(row["var"]),
                                        var_floor=self.settings.similarity.var_floor),
            entities=ents, facts=fact_ids, scene_id=row["scene_id"], context_id=row["context_id"],
            t_created=row["t_created"], t_accessed=row["t_accessed"], n_access=row["n_access"],
            lifecycle=LifecycleState(row["lifecycle"]),
            langevin=LangevinState(BallPoint(from_blob(row["xi"])), row["last_step_time"]),
            provenance=ProvenanceRecord(row["session_id"], row["speaker"], row["timestamp"], row["source_document"]),
            observation=Observation(row["token_count"], row["entity_count"], row["entropy_bits"]),
        )

    def memory_ids(self, profile_id: str | None = None) -> list[str]:
        self._check_open()
        with self._lock:
            return [r[0] for r in self.conn.execute("SELECT id FROM memories WHERE profile_id = ? ORDER BY id",
                                                    (self._profile(profile_id),))]

    def facts(self, memory_id: str, profile_id: str | None = None) -> list[FactRecord]:
        self._check_open()
        with self._lock:
            rows = self.conn.execute("SELECT * FROM facts WHERE memory_id = ? AND profile_id = ? ORDER BY id",
                                     (memory_id, self._profile(profile_id))).fetchall()
        return [FactRecord(r["id"], r["memory_id"], r["subject"], r["predicate"], r["object"],
                           from_blob(r["embedding"]), r["context_id"], r["observed_at"], r["superseded_by"])
                for r in rows]

    def profile_record(self, entity: str, profile_id: str | None = None) -> ProfileRecord | None:
        self._check_open()
        profile = self._profile(profile_id)
        with self._lock:
            row = self.conn.execute("SELECT attributes FROM profiles WHERE profile_id = ? AND entity_id = ?",
                                    (profile, entity)).fetchone()
        return ProfileRecord(profile, entity, json.loads(row["attributes"])) if row else None

    def supersedes_edges(self, profile_id: str | None = None) -> list[tuple[str, str, float]]:
        self._check_open()
        with self._lock:
            rows = self.conn.execute("SELECT newer_id, older_id, kappa FROM supersedes_edges WHERE profile_id = ? "
                                     "ORDER BY newer_id, older_id", (self._profile(profile_id),)).fetchall()
        return [(r[0], r[1], r[2]) for r in rows]

    def profiles(self) -> list[str]:
        self._check_open()
        with self._lock:
            return [r[0] for r in self.conn.execute("SELECT DISTINCT profile_id FROM memories ORDER BY profile_id")]

    # ---------------------------------------------------------------------------
    # Access
    # ---------------------------------------------------------------------------

    def record_access(self, memory_id: str, times: int = 1, profile_id: str | None = None) -> MemoryRecord:
        self.record_accesses([memory_id], times, profile_id)
        return self.get(memory_id, profile_id)

    def record_accesses(self, memory_ids: Iterable[str], times: int = 1, profile_id: str | None = None) -> int:
        """n_access += times, t_accessed = now, one access boost per access; all ids in one transaction."""
        self._check_writable()
        if times < 1:
            raise ValueError("times must be >= 1")
        profile = self._profile(profile_id)
        strength = self.settings.store.access_strength
        with self._lock:
            now = self.now()
            with self._transaction() as c:
                count = 0
                for mid in memory_ids:
                    row = c.execute("""
                        SELECT m.profile_id, m.t_created, m.lifecycle, l.xi, l.last_step_time
                        FROM memories m JOIN langevin_states l ON l.memory_id = m.id WHERE m.id = ?
                    """, (mid,)).fetchone()
                    if row is None or row["profile_id"] != profile:
                        raise UnknownMemoryError(mid)
                    state = LangevinState(BallPoint(from_blob(row["xi"])), row["last_step_time"])
                    for _ in range(times):
                        state = access_boost(state, strength)
                    lifecycle = min(lifecycle_of(state.xi, self.settings.thresholds), LifecycleState(row["lifecycle"]))
                    c.execute("UPDATE memories SET n_access = n_access + ?, t_accessed = ?, lifecycle = ? WHERE id = ?",
                              (times, max(now, row["t_created"]), int(lifecycle), mid))
                    c.execute("UPDATE langevin_states SET xi = ? WHERE memory_id = ?", (to_blob(state.xi.coords), mid))
                    count += 1
        return count

    # ---------------------------------------------------------------------------
    # Erase
    # ---------------------------------------------------------------------------

    def erase(self, memory_id: str | None = None, *, profile_id: str | None = None,
              entity: str | None = None) -> int:
        """
        Hard delete by exactly one selector: a memory id, a whole profile, or
        every memory of `profile_id` (default profile) mentioning `entity`.
        """
        self._check_writable()
        if memory_id is not None and entity is not None:
            raise PreconditionError("erase takes one selector")
        if memory_id is None and entity is None and profile_id is None:
            raise PreconditionError("erase needs a memory id, a profile or an entity")
        with self._lock:
            with self._transaction() as c:
                if memory_id is not None:
                    rows = c.execute("SELECT id, profile_id FROM memories WHERE id = ?", (memory_id,)).fetchall()
                    if profile_id is not None:
                        rows = [r for r in rows if r["profile_id"] == profile_id]
                elif entity is not None:
                    rows = c.execute("""
                        SELECT m.id, m.profile_id FROM memories m
                        JOIN entity_mentions e ON e.memory_id = m.id
                        WHERE e.profile_id = ? AND e.entity_id = ? ORDER BY m.id
                    """, (self._profile(profile_id), entity)).fetchall()
                else:
                    rows = c.execute("SELECT id, profile_id FROM memories WHERE profile_id = ? ORDER BY id",
                                     (profile_id,)).fetchall()
                victims = [(r["id"], r["profile_id"]) for r in rows]
                orphaned: set[tuple[str, str, str]] = set()
                for mid, profile in victims:
                    ents = sorted(r[0] for r in c.execute("SELECT entity_id FROM entity_mentions WHERE memory_id = ?",
                                                          (mid,)))
                    for a, b in combinations(ents, 2):
                        c.execute("UPDATE entity_edges SET count = count - 1 "
                                  "WHERE profile_id = ? AND entity_a = ? AND entity_b = ?", (profile, a, b))
                    self._fault("erase:edges")
                    c.execute("DELETE FROM memories WHERE id = ?", (mid,))
                    self._fault("erase:memory")
                    orphaned |= {(profile, e, a) for e, a in self._drop_profile_attributes(profile, mid)}
                c.execute("DELETE FROM entity_edges WHERE count <= 0")
                c.execute("UPDATE facts SET superseded_by = NULL WHERE superseded_by IS NOT NULL "
                          "AND superseded_by NOT IN (SELECT id FROM facts)")
                self._restore_profile_attributes(orphaned)
                for profile in sorted({p for _, p in victims}):
                    c.execute("DELETE FROM entities WHERE profile_id = ? AND entity_id NOT IN "
                              "(SELECT entity_id FROM entity_mentions WHERE profile_id = ?)", (profile, profile))
                    c.execute("DELETE FROM entity_edges WHERE profile_id = ? AND (entity_a NOT IN "
                              "(SELECT entity_id FROM entities WHERE profile_id = ?) OR entity_b NOT IN "
                              "(SELECT entity_id FROM entities WHERE profile_id = ?))", (profile, profile, profile))
                c.execute("DELETE FROM scenes WHERE scene_id NOT IN "
                          "(SELECT scene_id FROM memories WHERE scene_id IS NOT NULL)")
                self._fault("erase:cleanup")
        if victims:
            log.info("Erased %d memories", len(victims))
        return len(victims)

    def _drop_profile_attributes(self, profile: str, memory_id: str) -> set[tuple[str, str]]:
        """Remove attributes sourced from `memory_id`; returns the (entity, attribute) pairs removed."""
        dropped: set[tuple[str, str]] = set()
        rows = self.conn.execute("SELECT entity_id, attributes FROM profiles WHERE profile_id = ?", (profile,)).fetchall()
        for r in rows:
            attrs = json.loads(r["attributes"])
            kept = {k: v for k, v in attrs.items() if v.get("memory_id") != memory_id}
            if kept == attrs:
                continue
            dropped |= {(r["entity_id"], k) for k in attrs.keys() - kept.keys()}
            if kept:
                self.conn.execute("UPDATE profiles SET attributes = ? WHERE profile_id = ? AND entity_id = ?",
                                  (json.dumps(kept, sort_keys=True), profile, r["entity_id"]))
            else:
                self.conn.execute("DELETE FROM profiles WHERE profile_id = ? AND entity_id = ?",
                                  (profile, r["entity_id"]))
        return dropped

    def _restore_profile_attributes(self, slots: Iterable[tuple[str, str, str]]) -> None:
        """Point each (profile, entity, attribute) back at the newest surviving fact nothing supersedes."""
        for profile, entity, attr in sorted(slots):
            row = self.conn.execute("""
                SELECT memory_id, object FROM facts
                WHERE profile_id = ? AND subject = ? AND predicate = ? AND superseded_by IS NULL
                ORDER BY observed_at DESC, id DESC LIMIT 1
            """, (profile, entity, attr)).fetchone()
            if row is not None:
                self._set_profile_attribute(profile, entity, attr, row["object"], row["memory_id"])

    # ---------------------------------------------------------------------------
    # Maintenance and consistency
    # ---------------------------------------------------------------------------

    def maintain(self, profile_id: str | None = None, steps: int = 1, seed: int = 0) -> MaintenanceReport:
        self._check_writable()
        profile = self._profile(profile_id)
        with self._lock:
            now = self.now()
            with self._transaction() as c:
                rows = c.execute("SELECT memory_id, xi, last_step_time FROM langevin_states WHERE profile_id = ? "
                                 "ORDER BY memory_id", (profile,)).fetchall()
                states = {r["memory_id"]: LangevinState(BallPoint(from_blob(r["xi"])), r["last_step_time"])
                          for r in rows}
                report = maintenance_pass(states, self.settings.potential, steps, seed,
                                          self.settings.thresholds, now=now if steps else None)
                if steps:
                    for mid, st in report.states.items():
                        c.execute("UPDATE langevin_states SET xi = ?, last_step_time = ? WHERE memory_id = ?",
                                  (to_blob(st.xi.coords), st.last_step_time, mid))
                        c.execute("UPDATE memories SET lifecycle = ? WHERE id = ?", (int(report.lifecycles[mid]), mid))
        return report

    def check_consistency(self, profile_id: str | None = None) -> ConsistencyCheck:
        """
        Replay every (subject, predicate) slot chronologically, create missing
        SUPERSEDES edges, and report kappa and H^1 over the union of the
        per-slot complete sheaves.
        """
        self._check_writable()
        profile = self._profile(profile_id)
        cfg = self.settings.store
        with self._lock:
            now = self.now()
            with self._transaction() as c:
                slots = c.execute("SELECT DISTINCT subject, predicate FROM facts WHERE profile_id = ? "
                                  "ORDER BY subject, predicate", (profile,)).fetchall()
                union: ContextSheaf | None = None
                per_slot: dict[str, ConsistencyReport] = {}
                created: list[SupersedesDirective] = []
                for subject, predicate in slots:
                    obs = self._slot_observations(profile, subject, predicate)
                    key = f"{subject}/{predicate}"
                    report, directives = sweep_slot(obs, cfg.tau, cfg.sheaf_eps)
                    per_slot[key] = report
                    union = complete_sheaf(obs, prefix=key + ":", into=union)
                    for d in directives:
                        if self._persist_directive(profile, d, subject, predicate, now):
                            created.append(d)
        overall = consistency_report(union, cfg.sheaf_eps) if union is not None else ConsistencyReport(0.0, 0, [])
        log.info("Consistency sweep (profile=%s): kappa=%.4f h1=%d, %d new supersedes",
                 profile, overall.kappa, overall.h1_dim, len(created))
        return ConsistencyCheck(profile, overall, per_slot, created)

    # ---------------------------------------------------------------------------
    # Snapshot for retrieval
    # ---------------------------------------------------------------------------

    def snapshot(self, profile_id: str | None = None) -> CorpusSnapshot:
        self._check_open()
        profile = self._profile(profile_id)
        with self._lock:
            version = (self.conn.execute("PRAGMA data_version").fetchone()[0], self._generation)
            cached = self._snapshots.get(profile)
            if cached is not None and cached[0] == version:
                return cached[1]
            with self._transaction(mode="DEFERRED") as c:
                snap = self._load_snapshot(c, profile)
            self._snapshots[profile] = (version, snap)
            return snap

    def _load_snapshot(self, c: sqlite3.Connection, profile: str) -> CorpusSnapshot:
        rows = c.execute("SELECT id, content, mu, var, n_access, lifecycle, token_count, scene_id FROM memories "
                         "WHERE profile_id = ? ORDER BY id", (profile,)).fetchall()
        ids = [r["id"] for r in rows]
        dim = int(self._config("embed_dim") or self.settings.embed_dim)
        if rows:
            mus = np.stack([from_blob(r["mu"]) for r in rows])
            variances = np.stack([from_blob(r["var"]) for r in rows])
        else:
            mus = variances = np.zeros((0, dim))
        ccfg = self.settings.channels
        bm25 = Bm25Index.from_postings(
            ((r[0], r[1], r[2]) for r in c.execute(
                "SELECT term, memory_id, tf FROM bm25_postings WHERE profile_id = ? ORDER BY term, memory_id",
                (profile,))),
            {r["id"]: r["token_count"] for r in rows}, k1=ccfg.k1, b=ccfg.b)
        mentions = [(r[0], r[1]) for r in c.execute(
            "SELECT entity_id, memory_id FROM entity_mentions WHERE profile_id = ? ORDER BY entity_id, memory_id",
            (profile,))]
        edges = [(r[0], r[1], r[2]) for r in c.execute(
            "SELECT entity_a, entity_b, count FROM entity_edges WHERE profile_id = ? ORDER BY entity_a, entity_b",
            (profile,))]
        memory_entities: dict[str, set[str]] = {}
        for ent, mid in mentions:
            memory_entities.setdefault(mid, set()).add(ent)
        temporal = [TemporalRecord(r[0], r[1], r[2], r[3], r[4]) for r in c.execute(
            "SELECT memory_id, observed_at, refers_to, valid_from, valid_until FROM temporal_events "
            "WHERE profile_id = ? ORDER BY memory_id", (profile,))]
        scenes: dict[str, list[str]] = {}
        for r in rows:
            if r["scene_id"] is not None:
                scenes.setdefault(r["scene_id"], []).append(r["id"])
        superseded = {r[0] for r in c.execute("SELECT older_id FROM supersedes_edges WHERE profile_id = ?", (profile,))}
        profiles = {r[0]: json.loads(r[1]) for r in c.execute(
            "SELECT entity_id, attributes FROM profiles WHERE profile_id = ?", (profile,))}
        known = {r[0] for r in c.execute("SELECT entity_id FROM entities WHERE profile_id = ?", (profile,))}
        return CorpusSnapshot(
            profile_id=profile, ids=ids, mus=mus, variances=variances,
            n_access=np.array([r["n_access"] for r in rows], dtype=np.int64),
            lifecycles=np.array([r["lifecycle"] for r in rows], dtype=np.int64),
            contents={r["id"]: r["content"] for r in rows}, bm25=bm25, graph=EntityGraph.from_rows(edges, mentions),
            temporal=temporal, scenes=scenes, superseded=superseded, profiles=profiles, known_entities=known,
            memory_entities=memory_entities,
        )

    # ---------------------------------------------------------------------------
    # Stats, compaction, export / import
    # ---------------------------------------------------------------------------

    def stats(self, profile_id: str | None = None) -> dict:
        self._check_open()
        with self._lock:
            profiles = [profile_id] if profile_id else self.profiles()
            out = {"db_path": self.path, "db_bytes": os.path.getsize(self.path) if os.path.exists(self.path) else 0,
                   "profiles": {}}
            for p in profiles:
                def count(sql: str) -> int:
                    return self.conn.execute(sql, (p,)).fetchone()[0]
                lifecycle = {s.name.lower(): 0 for s in LifecycleState}
                for r in self.conn.execute("SELECT lifecycle, COUNT(*) FROM memories WHERE profile_id = ? "
                                           "GROUP BY lifecycle", (p,)):
                    lifecycle[LifecycleState(r[0]).name.lower()] = r[1]
                out["profiles"][p] = {
                    "memories": count("SELECT COUNT(*) FROM memories WHERE profile_id = ?"),
                    "lifecycle": lifecycle,
                    "facts": count("SELECT COUNT(*) FROM facts WHERE profile_id = ?"),
                    "entities": count("SELECT COUNT(*) FROM entities WHERE profile_id = ?"),
                    "entity_edges": count("SELECT COUNT(*) FROM entity_edges WHERE profile_id = ?"),
                    "scenes": count("SELECT COUNT(*) FROM scenes WHERE profile_id = ?"),
                    "supersedes": count("SELECT COUNT(*) FROM supersedes_edges WHERE profile_id = ?"),
                }
        return out

    def compact(self) -> None:
        self._check_writable()
        with self._lock:
            self.conn.execute("PRAGMA wal_checkpoint(TRUNCATE)")
            self.conn.execute("VACUUM")
            self._generation += 1
        log.info("Compacted %s", self.path)

    def export_jsonl(self, fh: TextIO, profile_id: str | None = None) -> int:
        """Write the header line and one {"table", "row"} line per row. Returns the row count."""
        self._check_open()
        fh.write(json.dumps({"format": EXPORT_FORMAT, "version": EXPORT_VERSION}) + "\n")
        n = 0
        with self._lock, self._transaction(mode="DEFERRED") as c:
            for table in TABLES:
                if table == "config":
                    if profile_id is not None:
                        continue
                    cur = c.execute("SELECT * FROM config ORDER BY key")
                else:
                    where = "WHERE profile_id = ?" if profile_id is not None else ""
                    cur = c.execute(f"SELECT * FROM {table} {where} ORDER BY rowid",
                                    (profile_id,) if profile_id is not None else ())
                blobs = BLOB_COLUMNS.get(table, ())
                for r in cur:
                    row = {k: (from_blob(r[k]).tolist() if k in blobs and r[k] is not None else r[k]) for k in r.keys()}
                    fh.write(json.dumps({"table": table, "row": row}, sort_keys=True) + "\n")
                    n += 1
        log.info("Exported %d rows", n)
        return n

    def import_jsonl(self, fh: TextIO) -> int:
        self._check_writable()
        header = json.loads(fh.readline() or "{}")
        if header.get("format") != EXPORT_FORMAT:
            raise PreconditionError("not a geomem export (missing header line)")
        if header.get("version") != EXPORT_VERSION:
            raise PreconditionError(f"unsupported export version {header.get('version')}")
        n = 0
        columns: dict[str, set[str]] = {}
        with self._lock, self._transaction() as c:
            for lineno, line in enumerate(fh, 2):
                if not line.strip():
                    continue
                rec = json.loads(line)
                table, row = rec.get("table"), rec.get("row")
                if table not in TABLES or not isinstance(row, dict):
                    raise PreconditionError(f"line {lineno}: bad record")
                if table == "config":
                    current = self._config(row["key"])
                    if row["key"].startswith("next_") and current is not None:
                        self._set_config(row["key"], max(int(current), int(row["value"])))
                    else:
                        self._set_config(row["key"], row["value"])
                    continue
                if table not in columns:
                    columns[table] = {r["name"] for r in c.execute(f"PRAGMA table_info({table})")}
                unknown = set(row) - columns[table]
                if unknown:
                    raise PreconditionError(f"line {lineno}: unknown {table} columns {sorted(unknown)}")
                blobs = BLOB_COLUMNS.get(table, ())
                values = {k: (to_blob(v) if k in blobs and v is not None else v) for k, v in row.items()}
                cols = sorted(values)
                try:
                    c.execute(f"INSERT INTO {table} ({', '.join(cols)}) VALUES ({', '.join('?' * len(cols))})",
                              [values[k] for k in cols])
                except sqlite3.IntegrityError as e:
                    raise StoreError(f"line {lineno}: {table} row conflicts with existing data ({e})") from e
                n += 1
        log.info("Imported %d rows", n)
        return n
