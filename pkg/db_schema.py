# db_schema.py

import sqlite3

import numpy as np

SCHEMA_VERSION = 1

# Export order: parents before children so an import never trips a foreign key.
TABLES = (
    "config",
    "scenes",
    "memories",
    "provenance",
    "temporal_events",
    "langevin_states",
    "entities",
    "entity_mentions",
    "entity_edges",
    "bm25_postings",
    "facts",
    "supersedes_edges",
    "profiles",
)

BLOB_COLUMNS = {
    "memories": ("mu", "var"),
    "facts": ("embedding",),
    "langevin_states": ("xi",),
}


def to_blob(vec) -> bytes:
    return np.asarray(vec, dtype="<f8").tobytes()


def from_blob(blob: bytes) -> np.ndarray:
    return np.frombuffer(blob, dtype="<f8").copy()


def initialize_database(connection: sqlite3.Connection) -> None:
    cursor = connection.cursor()

    cursor.execute("""
    CREATE TABLE IF NOT EXISTS config (
        key   TEXT PRIMARY KEY,
        value TEXT NOT NULL
    );
    """)

    # ── Scenes ───────────────────────────────────────────────────────────────
    cursor.execute("""
    CREATE TABLE IF NOT EXISTS scenes (
        scene_id        TEXT PRIMARY KEY,
        profile_id      TEXT NOT NULL,
        source_document TEXT NOT NULL,
        started_at      REAL NOT NULL,
        last_at         REAL NOT NULL
    );
    """)

    # ── Memories ─────────────────────────────────────────────────────────────
    cursor.execute("""
    CREATE TABLE IF NOT EXISTS memories (
        id           TEXT PRIMARY KEY,
        profile_id   TEXT    NOT NULL,
        content      TEXT    NOT NULL,
        mu           BLOB    NOT NULL,       -- float64 little-endian
        var          BLOB    NOT NULL,
        dim          INTEGER NOT NULL,
        scene_id     TEXT,
        context_id   TEXT    NOT NULL,
        t_created    REAL    NOT NULL,
        t_accessed   REAL    NOT NULL,
        n_access     INTEGER NOT NULL DEFAULT 0,
        lifecycle    INTEGER NOT NULL DEFAULT 0,  -- 0 active, 1 warm, 2 cold, 3 archived
        token_count  INTEGER NOT NULL,
        entity_count INTEGER NOT NULL,
        entropy_bits REAL    NOT NULL,
        CHECK (t_accessed >= t_created),
        CHECK (n_access >= 0)
    );
    """)
    cursor.execute("CREATE INDEX IF NOT EXISTS idx_memories_profile ON memories(profile_id);")

    cursor.execute("""
    CREATE TABLE IF NOT EXISTS provenance (
        memory_id       TEXT PRIMARY KEY REFERENCES memories(id) ON DELETE CASCADE,
        profile_id      TEXT NOT NULL,
        session_id      TEXT,
        speaker         TEXT,
        timestamp       REAL NOT NULL,
        source_document TEXT
    );
    """)

    cursor.execute("""
    CREATE TABLE IF NOT EXISTS temporal_events (
        memory_id   TEXT PRIMARY KEY REFERENCES memories(id) ON DELETE CASCADE,
        profile_id  TEXT NOT NULL,
        observed_at REAL NOT NULL,
        refers_to   REAL,
        valid_from  REAL,
        valid_until REAL,
        CHECK (valid_from IS NULL OR valid_until IS NULL OR valid_from <= valid_until)
    );
    """)

    cursor.execute("""
    CREATE TABLE IF NOT EXISTS langevin_states (
        memory_id      TEXT PRIMARY KEY REFERENCES memories(id) ON DELETE CASCADE,
        profile_id     TEXT NOT NULL,
        xi             BLOB NOT NULL,
        last_step_time REAL NOT NULL
    );
    """)

    # ── Entity graph ─────────────────────────────────────────────────────────
    cursor.execute("""
    CREATE TABLE IF NOT EXISTS entities (
        profile_id TEXT NOT NULL,
        entity_id  TEXT NOT NULL,
        first_seen REAL NOT NULL,
        PRIMARY KEY (profile_id, entity_id)
    );
    """)

    cursor.execute("""
    CREATE TABLE IF NOT EXISTS entity_mentions (
        profile_id TEXT NOT NULL,
        entity_id  TEXT NOT NULL,
        memory_id  TEXT NOT NULL REFERENCES memories(id) ON DELETE CASCADE,
        PRIMARY KEY (profile_id, entity_id, memory_id)
    );
    """)
    cursor.execute("CREATE INDEX IF NOT EXISTS idx_mentions_memory ON entity_mentions(memory_id);")

    cursor.execute("""
    CREATE TABLE IF NOT EXISTS entity_edges (
        profile_id TEXT NOT NULL,
        entity_a   TEXT NOT NULL,
        entity_b   TEXT NOT NULL,
        count      INTEGER NOT NULL,
        PRIMARY KEY (profile_id, entity_a, entity_b),
        CHECK (entity_a < entity_b)
    );
    """)

    # ── Keyword index ────────────────────────────────────────────────────────
    cursor.execute("""
    CREATE TABLE IF NOT EXISTS bm25_postings (
        profile_id TEXT    NOT NULL,
        term       TEXT    NOT NULL,
        memory_id  TEXT    NOT NULL REFERENCES memories(id) ON DELETE CASCADE,
        tf         INTEGER NOT NULL CHECK (tf >= 1),
        PRIMARY KEY (term, memory_id)
    );
    """)
    cursor.execute("CREATE INDEX IF NOT EXISTS idx_postings_profile ON bm25_postings(profile_id);")

    # ── Facts and contradictions ─────────────────────────────────────────────
    cursor.execute("""
    CREATE TABLE IF NOT EXISTS facts (
        id            TEXT PRIMARY KEY,
        profile_id    TEXT NOT NULL,
        memory_id     TEXT NOT NULL REFERENCES memories(id) ON DELETE CASCADE,
        subject       TEXT NOT NULL,
        predicate     TEXT NOT NULL,
        object        TEXT NOT NULL,
        embedding     BLOB NOT NULL,
        context_id    TEXT NOT NULL,
        observed_at   REAL NOT NULL,
        superseded_by TEXT              -- newer fact id
    );
    """)
    cursor.execute("CREATE INDEX IF NOT EXISTS idx_facts_slot ON facts(profile_id, subject, predicate);")

    cursor.execute("""
    CREATE TABLE IF NOT EXISTS supersedes_edges (
        profile_id TEXT NOT NULL,
        newer_id   TEXT NOT NULL REFERENCES memories(id) ON DELETE CASCADE,
        older_id   TEXT NOT NULL REFERENCES memories(id) ON DELETE CASCADE,
        kappa      REAL NOT NULL,
        created_at REAL NOT NULL,
        PRIMARY KEY (newer_id, older_id)
    );
    """)

    # ── Profiles ─────────────────────────────────────────────────────────────
    cursor.execute("""
    CREATE TABLE IF NOT EXISTS profiles (
        profile_id TEXT NOT NULL,
        entity_id  TEXT NOT NULL,
        attributes TEXT NOT NULL,   -- JSON: attr -> {"value": ..., "memory_id": ...}
        PRIMARY KEY (profile_id, entity_id)
    );
    """)

    cursor.execute("INSERT OR IGNORE INTO config (key, value) VALUES ('schema_version', ?)", (str(SCHEMA_VERSION),))
    cursor.execute("INSERT OR IGNORE INTO config (key, value) VALUES ('next_memory_seq', '1')")
    cursor.execute("INSERT OR IGNORE INTO config (key, value) VALUES ('next_fact_seq', '1')")
