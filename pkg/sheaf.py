# sheaf.py
"""
Cellular sheaf over the context graph.

Vertices are contexts holding one stalk vector each, edges carry restriction
maps (identity by default, diagonal or dense d x d allowed). The coboundary
measures per-edge disagreement, kappa normalises it, and H^1 is the cokernel
of delta_0 (the graph has no 2-cells).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from errors import DimensionMismatchError, PreconditionError

EPS = 1e-9
RANK_RTOL = 1e-10
ZERO_TOL = 1e-12

Edge = tuple[str, str]


class ContextSheaf:
    def __init__(self, stalk_dim: int):
        if stalk_dim < 1:
            raise ValueError("stalk_dim must be >= 1")
        self.stalk_dim = stalk_dim
        self._sections: dict[str, np.ndarray | None] = {}
        self._edges: list[Edge] = []
        self._maps: dict[Edge, np.ndarray | None] = {}

    # ── construction ────────────────────────────────────────────────────────
    def add_vertex(self, v: str, section=None) -> None:
        if v not in self._sections:
            self._sections[v] = None
        if section is not None:
            self.set_section(v, section)

    def set_section(self, v: str, section) -> None:
        if v not in self._sections:
            raise KeyError(f"unknown vertex {v!r}")
        vec = np.asarray(section, dtype=np.float64).reshape(-1)
        if vec.shape[0] != self.stalk_dim:
            raise DimensionMismatchError(f"section for {v!r} has dim {vec.shape[0]}, stalk is {self.stalk_dim}")
        self._sections[v] = vec

    def add_edge(self, u: str, v: str, restriction=None) -> None:
        if u not in self._sections or v not in self._sections:
            raise KeyError(f"edge ({u!r}, {v!r}) references a missing vertex")
        if u == v:
            raise ValueError("self-loops are not allowed")
        if (u, v) in self._maps:
            return
        rho = None
        if restriction is not None:
            rho = np.asarray(restriction, dtype=np.float64)
            d = self.stalk_dim
            if rho.shape not in ((d,), (d, d)):
                raise DimensionMismatchError(f"restriction must be diagonal ({d},) or ({d}, {d}), got {rho.shape}")
            if not np.all(np.isfinite(rho)):
                raise ValueError("restriction map must be finite")
        self._edges.append((u, v))
        self._maps[(u, v)] = rho

    # ── accessors ───────────────────────────────────────────────────────────
    @property
    def vertices(self) -> list[str]:
        return list(self._sections)

    @property
    def edges(self) -> list[Edge]:
        return list(self._edges)

    def section(self, v: str) -> np.ndarray:
        vec = self._sections.get(v)
        if vec is None:
            raise PreconditionError(f"no section assigned on vertex {v!r}")
        return vec

    def restrict(self, edge: Edge, vec: np.ndarray) -> np.ndarray:
        rho = self._maps[edge]
        if rho is None:
            return vec
        if rho.ndim == 1:
            return rho * vec
        return rho @ vec

    def identity_maps(self) -> bool:
        return all(rho is None for rho in self._maps.values())


# ---------------------------------------------------------------------------
# Coboundary, kappa, H^1
# ---------------------------------------------------------------------------

def coboundary(s: ContextSheaf) -> dict[Edge, np.ndarray]:
    return {e: s.restrict(e, s.section(e[0])) - s.section(e[1]) for e in s.edges}


def contradiction_score(s: ContextSheaf, eps: float = EPS) -> float:
    if not s.vertices or not s.edges:
        return 0.0
    delta = coboundary(s)
    num = sum(float(np.dot(x, x)) for x in delta.values())
    den = sum(float(np.dot(s.section(v), s.section(v))) for v in s.vertices)
    return num / (den + eps)


def _numeric_rank(m: np.ndarray) -> int:
    if m.size == 0:
        return 0
    sv = np.linalg.svd(m, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0]))


def coboundary_matrix(s: ContextSheaf) -> sparse.csr_matrix:
    """delta_0 as a (|E| d) x (|V| d) sparse matrix, vertex blocks in insertion order."""
    d = s.stalk_dim
    index = {v: i for i, v in enumerate(s.vertices)}
    blocks = sparse.lil_matrix((len(s.edges) * d, len(index) * d))
    eye = np.eye(d)
    for k, (u, v) in enumerate(s.edges):
        rho = s._maps[(u, v)]
        if rho is None:
            rho_m = eye
        elif rho.ndim == 1:
            rho_m = np.diag(rho)
        else:
            rho_m = rho
        r0, cu, cv = k * d, index[u] * d, index[v] * d
        blocks[r0:r0 + d, cu:cu + d] = rho_m
        blocks[r0:r0 + d, cv:cv + d] = -eye
    return blocks.tocsr()


def incidence_matrix(s: ContextSheaf) -> sparse.csr_matrix:
    index = {v: i for i, v in enumerate(s.vertices)}
    rows, cols, vals = [], [], []
    for k, (u, v) in enumerate(s.edges):
        rows += [k, k]
        cols += [index[u], index[v]]
        vals += [1.0, -1.0]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(s.edges), len(index)))


def h1_dimension(s: ContextSheaf, dense: bool = False) -> int:
    """
    dim H^1 = |E| d - rank(delta_0). With identity maps delta_0 = B kron I_d,
    so rank(delta_0) = d rank(B) and only the scalar incidence is decomposed.
    """
    n_edges = len(s.edges)
    if n_edges == 0:
        return 0
    d = s.stalk_dim
    if s.identity_maps() and not dense:
        rank = d * _numeric_rank(incidence_matrix(s).toarray())
    else:
        rank = _numeric_rank(coboundary_matrix(s).toarray())
    return n_edges * d - rank


@dataclass
class ConsistencyReport:
    kappa: float
    h1_dim: int
    offending_edges: list[tuple[Edge, float]] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "kappa": self.kappa,
            "h1_dim": self.h1_dim,
            "offending_edges": [{"edge": list(e), "discrepancy": n} for e, n in self.offending_edges],
        }


def consistency_report(s: ContextSheaf, eps: float = EPS) -> ConsistencyReport:
    delta = coboundary(s) if s.edges else {}
    norms = [(e, float(np.linalg.norm(x))) for e, x in delta.items()]
    offending = sorted((en for en in norms if en[1] > ZERO_TOL), key=lambda en: (-en[1], en[0]))
    return ConsistencyReport(contradiction_score(s, eps), h1_dimension(s), offending)


# ---------------------------------------------------------------------------
# Store-time check
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FactObservation:
    memory_id: str
    context_id: str
    embedding: np.ndarray
    observed_at: float


@dataclass(frozen=True)
class SupersedesDirective:
    newer_memory_id: str
    older_memory_id: str
    kappa: float
    discrepancy: float


def _group(observations: Sequence[FactObservation]) -> dict[str, list[FactObservation]]:
    groups: dict[str, list[FactObservation]] = {}
    for ob in observations:
        groups.setdefault(ob.context_id, []).append(ob)
    return groups


def check_new_fact(existing: Sequence[FactObservation], new_fact: FactObservation,
                   tau: float = 0.45, eps: float = EPS) -> tuple[ConsistencyReport, SupersedesDirective | None]:
    """
    Star sheaf: each context holding facts for the same slot is a vertex whose
    section is the mean of its fact embeddings; the new fact's context joins
    every other context through an identity edge.
    """
    dim = np.asarray(new_fact.embedding).reshape(-1).shape[0]
    if not existing:
        return ConsistencyReport(0.0, 0, []), None
    for ob in existing:
        if np.asarray(ob.embedding).reshape(-1).shape[0] != dim:
            raise DimensionMismatchError("fact embedding does not match stalk dimension")

    groups = _group(list(existing) + [new_fact])
    s = ContextSheaf(dim)
    for ctx in sorted(groups):
        s.add_vertex(ctx, np.mean([np.asarray(o.embedding, dtype=np.float64) for o in groups[ctx]], axis=0))
    hub = new_fact.context_id
    for ctx in sorted(groups):
        if ctx != hub:
            s.add_edge(ctx, hub)
    report = consistency_report(s, eps)
    if report.kappa <= tau or not report.offending_edges:
        return report, None

    # largest discrepancy context; ties go to the context seen first
    earliest = {ctx: min(o.observed_at for o in obs) for ctx, obs in groups.items()}
    target_ctx = min(report.offending_edges, key=lambda en: (-en[1], earliest[en[0][0]], en[0][0]))[0][0]
    new_vec = np.asarray(new_fact.embedding, dtype=np.float64)
    candidates = [o for o in groups[target_ctx] if o.memory_id != new_fact.memory_id]
    if not candidates:
        return report, None
    target = min(candidates, key=lambda o: (-float(np.linalg.norm(np.asarray(o.embedding) - new_vec)),
                                            o.observed_at, o.memory_id))
    disc = dict(report.offending_edges)[(target_ctx, hub)]
    return report, SupersedesDirective(new_fact.memory_id, target.memory_id, report.kappa, disc)


def sweep_slot(observations: Sequence[FactObservation], tau: float = 0.45,
               eps: float = EPS) -> tuple[ConsistencyReport, list[SupersedesDirective]]:
    """
    Replay a slot's facts in arrival order through check_new_fact, then report
    on the complete graph over all its contexts.
    """
    ordered = sorted(observations, key=lambda o: (o.observed_at, o.memory_id))
    directives: list[SupersedesDirective] = []
    seen: set[tuple[str, str]] = set()
    for i, ob in enumerate(ordered):
        _, directive = check_new_fact(ordered[:i], ob, tau, eps)
        if directive and (directive.newer_memory_id, directive.older_memory_id) not in seen:
            seen.add((directive.newer_memory_id, directive.older_memory_id))
            directives.append(directive)
    return complete_sheaf_report(ordered, eps=eps), directives


def complete_sheaf(observations: Sequence[FactObservation], prefix: str = "",
                   into: ContextSheaf | None = None) -> ContextSheaf:
    if not observations:
        return into if into is not None else ContextSheaf(1)
    groups = _group(observations)
    dim = np.asarray(observations[0].embedding).reshape(-1).shape[0]
    s = into if into is not None else ContextSheaf(dim)
    names = sorted(groups)
    for ctx in names:
        s.add_vertex(prefix + ctx, np.mean([np.asarray(o.embedding, dtype=np.float64) for o in groups[ctx]], axis=0))
    for i, u in enumerate(names):
        for v in names[i + 1:]:
            s.add_edge(prefix + u, prefix + v)
    return s


def complete_sheaf_report(observations: Sequence[FactObservation], eps: float = EPS) -> ConsistencyReport:
    return consistency_report(complete_sheaf(observations), eps)
