# fusion.py
"""
Query-time pipeline: classify the query, run the four channels over a store
snapshot, fuse their ranks (weighted RRF), expand scenes, add Steiner-tree
bridges for multi-hop queries, blend in the reranker and apply lifecycle and
supersedes demotion.
"""
from __future__ import annotations

import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import partial
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import networkx as nx
import numpy as np
from scipy.special import expit

from channels import (Bm25Index, EntityGraph, RankedCandidate, TemporalRecord, bm25_search,
                      entity_channel, rank_scores, temporal_channel)
from errors import AdapterError, PreconditionError, ZeroVectorError
from extraction import canonical_entity, extract_entities, find_date, has_temporal_cue
from info_geometry import GaussianEmbedding, SimilarityConfig, effective_scores_batch, estimate_variance
from langevin import LifecycleState

if TYPE_CHECKING:
    from memory_store import MemoryStore

log = logging.getLogger("geomem.fusion")

CHANNELS = ("semantic", "bm25", "entity", "temporal")


class QueryType(str, Enum):
    SINGLE_HOP = "single_hop"
    MULTI_HOP = "multi_hop"
    TEMPORAL = "temporal"
    OPEN_DOMAIN = "open_domain"


class Origin(str, Enum):
    CHANNEL = "channel"
    SCENE_EXPANSION = "scene_expansion"
    BRIDGE = "bridge"
    PROFILE_LOOKUP = "profile_lookup"


@dataclass(frozen=True)
class FusionConfig:
    w_semantic: float = 1.2
    w_bm25: float = 1.0
    w_entity: float = 1.3
    w_temporal: float = 1.0
    k: int = 60
    alpha_focused: float = 0.5      # multi-hop and temporal
    alpha_broad: float = 0.75       # single-hop and open-domain
    temporal_boost: float = 1.5
    temporal_entity_damp: float = 0.8
    multihop_entity_boost: float = 1.5
    scene_factor: float = 0.5
    bridge_decay: float = 0.7
    lifecycle_weights: tuple[float, float, float, float] = (1.0, 0.9, 0.7, 0.4)
    supersede_factor: float = 0.25
    sufficiency_floor: float = 0.01

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if min(self.w_semantic, self.w_bm25, self.w_entity, self.w_temporal) < 0:
            raise ValueError("channel weights must be non-negative")
        for a in (self.alpha_focused, self.alpha_broad):
            if not (0 <= a <= 1):
                raise ValueError("blend alpha must be in [0, 1]")
        if len(self.lifecycle_weights) != len(LifecycleState):
            raise ValueError("one lifecycle weight per state")

    def channel_weights(self) -> dict[str, float]:
        return {"semantic": self.w_semantic, "bm25": self.w_bm25,
                "entity": self.w_entity, "temporal": self.w_temporal}


# ---------------------------------------------------------------------------
# Ablation toggles
# ---------------------------------------------------------------------------

TOGGLES = ("fisher_off", "sheaf_off", "langevin_off", "bm25_off", "entity_off", "temporal_off",
           "cross_encoder_off")
MATH_TOGGLES = ("fisher_off", "sheaf_off", "langevin_off")


@dataclass(frozen=True)
class Ablation:
    fisher_off: bool = False
    sheaf_off: bool = False
    langevin_off: bool = False
    bm25_off: bool = False
    entity_off: bool = False
    temporal_off: bool = False
    cross_encoder_off: bool = False

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "Ablation":
        """Accepts "bm25" or "bm25_off"; "all_math_off" expands to the three math toggles."""
        flags: dict[str, bool] = {}
        for raw in names:
            name = raw.strip().lower().replace("-", "_")
            if not name:
                continue
            if not name.endswith("_off"):
                name += "_off"
            if name == "all_math_off":
                flags.update({t: True for t in MATH_TOGGLES})
            elif name in TOGGLES:
                flags[name] = True
            else:
                raise PreconditionError(f"unknown toggle {raw!r} (choose from {', '.join(TOGGLES)}, all_math_off)")
        return cls(**flags)

    @property
    def names(self) -> list[str]:
        return [t for t in TOGGLES if getattr(self, t)]

    @property
    def label(self) -> str:
        if all(getattr(self, t) for t in MATH_TOGGLES) and len(self.names) == len(MATH_TOGGLES):
            return "all_math_off"
        return "+".join(self.names) or "full"

    def channel_enabled(self, channel: str) -> bool:
        return channel == "semantic" or not getattr(self, f"{channel}_off")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QueryPlan:
    query_type: QueryType
    channel_multipliers: dict[str, float]
    temporal_anchor: float | None
    query_entities: frozenset[str]
    blend_alpha: float

    def to_record(self) -> dict:
        return {"query_type": self.query_type.value, "multipliers": dict(self.channel_multipliers),
                "temporal_anchor": self.temporal_anchor, "query_entities": sorted(self.query_entities),
                "blend_alpha": self.blend_alpha}


@dataclass
class FusedCandidate:
    memory_id: str
    wrrf: float
    ranks: dict[str, int] = field(default_factory=dict)
    ce_score: float | None = None
    final: float | None = None
    origin: Origin = Origin.CHANNEL

    def to_record(self) -> dict:
        return {"memory_id": self.memory_id, "wrrf": self.wrrf, "ranks": dict(self.ranks),
                "ce_score": self.ce_score, "final": self.final, "origin": self.origin.value}


@dataclass
class CorpusSnapshot:
    """Everything retrieval reads for one profile, loaded in a single read transaction."""
    profile_id: str
    ids: list[str]
    mus: np.ndarray
    variances: np.ndarray
    n_access: np.ndarray
    lifecycles: np.ndarray
    contents: dict[str, str]
    bm25: Bm25Index
    graph: EntityGraph
    temporal: list[TemporalRecord]
    scenes: dict[str, list[str]]
    superseded: set[str]
    profiles: dict[str, dict[str, dict]]
    known_entities: set[str]
    memory_entities: dict[str, set[str]]


@dataclass(frozen=True)
class SufficiencyReport:
    entity_coverage: float
    covered: list[str]
    missing: list[str]
    sufficient: bool

    def to_record(self) -> dict:
        return {"entity_coverage": self.entity_coverage, "covered": self.covered,
                "missing": self.missing, "sufficient": self.sufficient}


@dataclass
class StageRecord:
    name: str
    n_in: int
    n_out: int
    elapsed_ms: float
    detail: dict = field(default_factory=dict)


@dataclass
class RetrievalTrace:
    query: str
    profile_id: str
    ablation: list[str]
    plan: QueryPlan | None = None
    stages: list[StageRecord] = field(default_factory=list)
    channels: dict[str, list[RankedCandidate]] = field(default_factory=dict)
    sufficiency: SufficiencyReport | None = None

    def add(self, name: str, n_in: int, n_out: int, started: float, **detail) -> None:
        self.stages.append(StageRecord(name, n_in, n_out, (time.perf_counter() - started) * 1000.0, detail))
        log.debug("Stage %-16s in=%d out=%d %.2fms", name, n_in, n_out, self.stages[-1].elapsed_ms)

    def to_record(self) -> dict:
        return {
            "query": self.query,
            "profile_id": self.profile_id,
            "ablation": list(self.ablation),
            "plan": self.plan.to_record() if self.plan else None,
            "stages": [{"stage": s.name, "in": s.n_in, "out": s.n_out, "ms": round(s.elapsed_ms, 3), **s.detail}
                       for s in self.stages],
            "channels": {c: [[r.memory_id, r.rank, r.score] for r in rows] for c, rows in self.channels.items()},
            "sufficiency": self.sufficiency.to_record() if self.sufficiency else None,
        }


@dataclass
class Retrieval:
    results: list[FusedCandidate]
    trace: RetrievalTrace
    contents: dict[str, str] = field(default_factory=dict)

    @property
    def ids(self) -> list[str]:
        return [c.memory_id for c in self.results]


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

_MULTIHOP_RE = re.compile(r"\b(between|both|compared?|comparison|versus|vs|connects?|connected|connection|"
                          r"relationship|related|in common)\b", re.IGNORECASE)
_INTERROGATIVE_RE = re.compile(r"^\s*(what|who|whom|whose|where|why|how|which|is|are|do|does|can|could|should)\b",
                               re.IGNORECASE)
_PROFILE_RE = re.compile(r"^\s*(?:what|who|where)\s+(?:is|was|are)\s+(.+?)['’]s\s+([a-z][a-z0-9 ]*?)\s*\??\s*$",
                         re.IGNORECASE)


def classify_query(query: str, known_entities: Iterable[str], now: float | None = None,
                   cfg: FusionConfig | None = None) -> QueryPlan:
    cfg = cfg or FusionConfig()
    known = set(known_entities)
    entities = frozenset(e for e in extract_entities(query, known) if e in known)
    multipliers = {c: 1.0 for c in CHANNELS}
    anchor = find_date(query, now)

    if anchor is not None or has_temporal_cue(query):
        qtype = QueryType.TEMPORAL
        multipliers["temporal"] = cfg.temporal_boost
        multipliers["entity"] = cfg.temporal_entity_damp
    elif len(entities) >= 2 or _MULTIHOP_RE.search(query):
        qtype = QueryType.MULTI_HOP
        multipliers["entity"] = cfg.multihop_entity_boost
    elif not entities and _INTERROGATIVE_RE.search(query):
        qtype = QueryType.OPEN_DOMAIN
    else:
        qtype = QueryType.SINGLE_HOP
    alpha = cfg.alpha_focused if qtype in (QueryType.MULTI_HOP, QueryType.TEMPORAL) else cfg.alpha_broad
    return QueryPlan(qtype, multipliers, anchor, entities, alpha)


def profile_lookup(query: str, profiles: Mapping[str, Mapping[str, dict]]) -> tuple[str, str, dict] | None:
    """'What is Alice's city?' -> ('alice', 'city', {"value": ..., "memory_id": ...})."""
    m = _PROFILE_RE.match(query)
    if not m:
        return None
    entity = canonical_entity(m.group(1))
    attr = "_".join(m.group(2).lower().split())
    hit = profiles.get(entity, {}).get(attr)
    if hit is None:
        return None
    return entity, attr, hit


# ---------------------------------------------------------------------------
# Fusion stages
# ---------------------------------------------------------------------------

def _ordered(cands: Iterable[FusedCandidate], key: str = "wrrf") -> list[FusedCandidate]:
    return sorted(cands, key=lambda c: (-getattr(c, key), c.memory_id))


def wrrf_fuse(channel_results: Mapping[str, Sequence[RankedCandidate]], weights: Mapping[str, float],
              multipliers: Mapping[str, float] | None = None, k: int = 60) -> list[FusedCandidate]:
    """WRRF(m) = sum_i w_i * mult_i / (k + r_i(m)); a missing channel contributes nothing."""
    multipliers = multipliers or {}
    fused: dict[str, FusedCandidate] = {}
    ordered_channels = [c for c in CHANNELS if c in channel_results]
    ordered_channels += sorted(c for c in channel_results if c not in CHANNELS)
    for channel in ordered_channels:
        w = weights.get(channel, 0.0) * multipliers.get(channel, 1.0)
        for cand in channel_results[channel]:
            fc = fused.setdefault(cand.memory_id, FusedCandidate(cand.memory_id, 0.0))
            fc.wrrf += w / (k + cand.rank)
            fc.ranks[channel] = cand.rank
    return _ordered(fc for fc in fused.values() if fc.wrrf > 0)


def scene_expand(fused: Sequence[FusedCandidate], scene_index: Mapping[str, Sequence[str]],
                 factor: float = 0.5) -> list[FusedCandidate]:
    """Append each candidate's scene-mates at factor x its wrrf; retrieved memories are left as they are."""
    memory_scene = {mid: sid for sid, mids in scene_index.items() for mid in mids}
    present = {c.memory_id for c in fused}
    added: dict[str, FusedCandidate] = {}
    for c in fused:
        sid = memory_scene.get(c.memory_id)
        if sid is None:
            continue
        for mate in scene_index[sid]:
            if mate in present:
                continue
            score = factor * c.wrrf
            if mate not in added or score > added[mate].wrrf:
                added[mate] = FusedCandidate(mate, score, origin=Origin.SCENE_EXPANSION)
    return _ordered(list(fused) + list(added.values()))


def bridge_discover(g: EntityGraph, query_entities: Iterable[str], fused: Sequence[FusedCandidate],
                    decay: float = 0.7) -> list[FusedCandidate]:
    """
    Metric-closure Steiner 2-approximation: shortest paths between terminals,
    MST of the closure, expanded back into graph paths. Memories mentioning an
    interior entity score max(wrrf) * decay^(hops to nearest terminal).
    """
    terminals = sorted(e for e in set(query_entities) if e in g)
    if len(terminals) < 2 or not fused:
        return []
    closure = nx.Graph()
    paths: dict[tuple[str, str], list[str]] = {}
    for i, a in enumerate(terminals):
        reach = nx.single_source_shortest_path(g.graph, a)
        for b in terminals[i + 1:]:
            if b in reach:
                closure.add_edge(a, b, weight=len(reach[b]) - 1)
                paths[(a, b)] = reach[b]
    if closure.number_of_edges() == 0:
        return []

    tree = nx.Graph()
    for edge in sorted(tuple(sorted(e)) for e in nx.minimum_spanning_tree(closure, weight="weight").edges()):
        nx.add_path(tree, paths[edge])
    hops = nx.multi_source_dijkstra_path_length(tree, {t for t in terminals if t in tree})
    base = max(c.wrrf for c in fused)
    scores: dict[str, float] = {}
    for entity in sorted(tree.nodes):
        if entity in terminals:
            continue
        s = base * decay ** hops[entity]
        for mid in g.memories_of(entity):
            if s > scores.get(mid, 0.0):
                scores[mid] = s
    return _ordered(FusedCandidate(mid, s, origin=Origin.BRIDGE) for mid, s in scores.items())


def blend_rerank(fused: Sequence[FusedCandidate], ce: Mapping[str, float] | None,
                 alpha: float) -> list[FusedCandidate]:
    """s(m) = alpha * logistic(CE) + (1 - alpha) * WRRF; without reranker scores s(m) = WRRF."""
    if not (0 <= alpha <= 1):
        raise ValueError("alpha must be in [0, 1]")
    out = []
    for c in fused:
        if ce is None:
            out.append(replace(c, final=c.wrrf))
            continue
        if c.memory_id not in ce:
            raise PreconditionError(f"no reranker score for {c.memory_id}")
        raw = float(ce[c.memory_id])
        out.append(replace(c, ce_score=raw, final=alpha * float(expit(raw)) + (1.0 - alpha) * c.wrrf))
    return _ordered(out, key="final")


def sufficiency(query_entities: Iterable[str], results: Sequence[FusedCandidate],
                memory_entities: Mapping[str, set[str]], floor: float = 0.01) -> SufficiencyReport:
    wanted = sorted(set(query_entities))
    seen: set[str] = set()
    for c in results:
        seen |= memory_entities.get(c.memory_id, set())
    covered = [e for e in wanted if e in seen]
    coverage = len(covered) / len(wanted) if wanted else 1.0
    top = results[0].final if results and results[0].final is not None else 0.0
    return SufficiencyReport(coverage, covered, [e for e in wanted if e not in seen],
                             bool(results) and coverage >= 1.0 and top >= floor)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def semantic_channel(snap: CorpusSnapshot, q: GaussianEmbedding | None, cfg: SimilarityConfig,
                     top_n: int, cosine_only: bool = False,
                     include_archived: bool = False) -> list[RankedCandidate]:
    if q is None or not snap.ids:
        return []
    mask = np.ones(len(snap.ids), dtype=bool) if include_archived else snap.lifecycles != LifecycleState.ARCHIVED
    if not mask.any():
        return []
    ids = [mid for mid, keep in zip(snap.ids, mask) if keep]
    scores = effective_scores_batch(q, snap.mus[mask], snap.variances[mask], snap.n_access[mask], cfg,
                                    cosine_only=cosine_only)
    return rank_scores(dict(zip(ids, scores.tolist())), top_n)


def _embed_query(store: "MemoryStore", query: str, cfg: SimilarityConfig) -> GaussianEmbedding | None:
    try:
        return estimate_variance(store.embedder.embed(query), cfg)
    except ZeroVectorError:
        log.debug("Query %r embeds to the zero vector; semantic channel skipped", query)
        return None


def retrieve(store: "MemoryStore", query: str, top_k: int = 20, ablation: Ablation | None = None,
             profile_id: str | None = None) -> Retrieval:
    ablation = ablation or Ablation()
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    settings = store.settings
    fcfg, ccfg = settings.fusion, settings.channels
    snap = store.snapshot(profile_id)
    now = store.now()
    trace = RetrievalTrace(query, snap.profile_id, ablation.names)
    if not snap.ids or not query.strip():
        return Retrieval([], trace)

    t0 = time.perf_counter()
    plan = classify_query(query, snap.known_entities, now, fcfg)
    trace.plan = plan
    trace.add("classify", 1, 1, t0, query_type=plan.query_type.value)

    t0 = time.perf_counter()
    profile_hit = profile_lookup(query, snap.profiles)
    if profile_hit and profile_hit[2].get("memory_id") not in snap.contents:
        profile_hit = None
    trace.add("profile_lookup", 1, int(profile_hit is not None), t0)

    t0 = time.perf_counter()
    q = _embed_query(store, query, settings.similarity)
    jobs = {
        "semantic": partial(semantic_channel, snap, q, settings.similarity, ccfg.top_n,
                            ablation.fisher_off, ablation.langevin_off),
        "bm25": partial(bm25_search, snap.bm25, query, ccfg.top_n),
        "entity": partial(entity_channel, snap.graph, plan.query_entities, ccfg.top_n, ccfg.max_hops, ccfg.decay),
        "temporal": partial(temporal_channel, snap.temporal, plan.temporal_anchor, ccfg.top_n, ccfg.tau_days,
                            ccfg.expired_penalty, now),
    }
    active = [c for c in CHANNELS if ablation.channel_enabled(c)]
    with ThreadPoolExecutor(max_workers=len(active)) as pool:
        futures = {c: pool.submit(jobs[c]) for c in active}
        results = {c: futures[c].result() for c in active}
    trace.channels = results
    trace.add("channels", len(snap.ids), sum(len(r) for r in results.values()), t0,
              counts={c: len(r) for c, r in results.items()})

    t0 = time.perf_counter()
    weights = fcfg.channel_weights()
    fused = wrrf_fuse(results, weights, plan.channel_multipliers, fcfg.k)
    if profile_hit:
        ceiling = sum(weights[c] * plan.channel_multipliers[c] / (fcfg.k + 1) for c in active)
        mid = profile_hit[2]["memory_id"]
        hit = next((c for c in fused if c.memory_id == mid), None)
        if hit is None:
            fused.append(FusedCandidate(mid, ceiling, origin=Origin.PROFILE_LOOKUP))
        else:
            hit.wrrf, hit.origin = max(hit.wrrf, ceiling), Origin.PROFILE_LOOKUP
        fused = _ordered(fused)
    trace.add("wrrf_fuse", sum(len(r) for r in results.values()), len(fused), t0)

    t0 = time.perf_counter()
    n_before = len(fused)
    fused = scene_expand(fused, snap.scenes, fcfg.scene_factor)
    trace.add("scene_expand", n_before, len(fused), t0)

    if plan.query_type is QueryType.MULTI_HOP:
        t0 = time.perf_counter()
        n_before = len(fused)
        by_id = {c.memory_id: c for c in fused}
        for b in bridge_discover(snap.graph, plan.query_entities, fused, fcfg.bridge_decay):
            if b.memory_id not in by_id:
                by_id[b.memory_id] = b
            elif b.wrrf > by_id[b.memory_id].wrrf:
                by_id[b.memory_id].wrrf = b.wrrf
        fused = _ordered(by_id.values())
        trace.add("bridge_discover", n_before, len(fused), t0)

    t0 = time.perf_counter()
    ce = None
    if store.reranker is not None and not ablation.cross_encoder_off and fused:
        try:
            scores = store.reranker.score_batch(query, [snap.contents[c.memory_id] for c in fused])
            ce = {c.memory_id: float(s) for c, s in zip(fused, scores)}
        except AdapterError as e:
            log.warning("Reranker failed (%s); ranking by fused score alone", e)
    ranked = blend_rerank(fused, ce, plan.blend_alpha)
    trace.add("rerank", len(fused), len(ranked), t0, blended=ce is not None, alpha=plan.blend_alpha)

    t0 = time.perf_counter()
    index = {mid: i for i, mid in enumerate(snap.ids)}
    for c in ranked:
        if not ablation.langevin_off:
            c.final *= fcfg.lifecycle_weights[int(snap.lifecycles[index[c.memory_id]])]
        if not ablation.sheaf_off and c.memory_id in snap.superseded:
            c.final *= fcfg.supersede_factor
    final = _ordered(ranked, key="final")[:top_k]
    trace.add("post_process", len(ranked), len(final), t0)

    trace.sufficiency = sufficiency(plan.query_entities, final, snap.memory_entities, fcfg.sufficiency_floor)
    return Retrieval(final, trace, {c.memory_id: snap.contents[c.memory_id] for c in final})
