# info_geometry.py
"""
Diagonal-Gaussian statistical manifold.

Memories are (mu, var) pairs. Retrieval uses the variance-weighted score with
the memory's variance only; the full closed-form geodesic is available for
tie analysis and the geodesic semantic metric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from errors import DimensionMismatchError, PreconditionError, ZeroVectorError

SEMANTIC_METRICS = ("approx", "geodesic")


@dataclass(frozen=True, eq=False)
class GaussianEmbedding:
    mu: np.ndarray
    var: np.ndarray
    var_floor: float = 1e-6

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).reshape(-1)
        var = np.array(self.var, dtype=np.float64).reshape(-1)
        if mu.shape != var.shape:
            raise DimensionMismatchError(f"mu has {mu.shape[0]} dims, var has {var.shape[0]}")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mu must be finite")
        if not np.all(np.isfinite(var)) or np.any(var < 0):
            raise ValueError("var must be finite and non-negative")
        var = np.maximum(var, self.var_floor)
        mu.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class SimilarityConfig:
    temperature: float | None = None  # None -> embedding dimension
    ramp_threshold: int = 10
    sigma_min_sq: float = 0.1
    sigma_max_sq: float = 1.0
    eps_var: float = 1e-6
    var_floor: float = 1e-6
    semantic_metric: str = "approx"

    def __post_init__(self):
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.ramp_threshold < 1:
            raise ValueError("ramp_threshold must be >= 1")
        if not (0 < self.sigma_min_sq < self.sigma_max_sq):
            raise ValueError("need 0 < sigma_min_sq < sigma_max_sq")
        if self.eps_var <= 0 or self.var_floor <= 0:
            raise ValueError("eps_var and var_floor must be positive")
        if self.semantic_metric not in SEMANTIC_METRICS:
            raise ValueError(f"semantic_metric must be one of {SEMANTIC_METRICS}")

    def temperature_for(self, dim: int) -> float:
        return float(dim) if self.temperature is None else float(self.temperature)


def _same_dim(a: int, b: int) -> None:
    if a != b:
        raise DimensionMismatchError(f"dimension {a} != {b}")


# ---------------------------------------------------------------------------
# Distances and scores
# ---------------------------------------------------------------------------

def fisher_rao_distance(p: GaussianEmbedding, q: GaussianEmbedding) -> float:
    """Closed form for diagonal Gaussians. One pass, constant extra storage."""
    _same_dim(p.dim, q.dim)
    total = 0.0
    for m1, v1, m2, v2 in zip(p.mu, p.var, q.mu, q.var):
        # 2 log(s2/s1) == log(v2) - log(v1); the difference form is exactly antisymmetric
        log_ratio = math.log(v2) - math.log(v1)
        gap = m1 - m2
        total += log_ratio * log_ratio + gap * gap / (v1 + v2)
    return math.sqrt(total)


def fisher_rao_distance_batch(q: GaussianEmbedding, mus: np.ndarray, variances: np.ndarray) -> np.ndarray:
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    _same_dim(q.dim, mus.shape[1])
    log_ratio = np.log(variances) - np.log(q.var)
    gap = q.mu - mus
    return np.sqrt(np.sum(log_ratio ** 2 + gap ** 2 / (q.var + variances), axis=1))


def estimate_variance(e, cfg: SimilarityConfig | None = None) -> GaussianEmbedding:
    cfg = cfg or SimilarityConfig()
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    mag = np.abs(e)
    peak = float(mag.max()) if mag.size else 0.0
    if peak == 0.0 or not np.isfinite(peak):
        raise ZeroVectorError("cannot estimate variance of a zero vector")
    # |e_k| / max|e_j| equals the same ratio after L2 normalisation
    ratio = mag / peak
    var = cfg.sigma_max_sq - (cfg.sigma_max_sq - cfg.sigma_min_sq) * ratio + cfg.eps_var
    return GaussianEmbedding(e, var, var_floor=cfg.var_floor)


def fisher_score(q: GaussianEmbedding, m: GaussianEmbedding, cfg: SimilarityConfig | None = None) -> float:
    cfg = cfg or SimilarityConfig()
    _same_dim(q.dim, m.dim)
    gap = q.mu - m.mu
    energy = float(np.sum(gap * gap / m.var))
    return math.exp(-energy / cfg.temperature_for(q.dim))


def geodesic_score(q: GaussianEmbedding, m: GaussianEmbedding, cfg: SimilarityConfig | None = None) -> float:
    cfg = cfg or SimilarityConfig()
    d = fisher_rao_distance(q, m)
    return math.exp(-d * d / cfg.temperature_for(q.dim))


def cosine_score(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    _same_dim(u.shape[0], v.shape[0])
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def ramp_alpha(n_access, cfg: SimilarityConfig | None = None):
    cfg = cfg or SimilarityConfig()
    return np.minimum(np.asarray(n_access, dtype=np.float64) / cfg.ramp_threshold, 1.0)


def effective_score(q: GaussianEmbedding, m: GaussianEmbedding, n_access: int,
                    cfg: SimilarityConfig | None = None) -> float:
    cfg = cfg or SimilarityConfig()
    if n_access < 0:
        raise ValueError("n_access must be non-negative")
    alpha = float(ramp_alpha(n_access, cfg))
    cos = cosine_score(q.mu, m.mu)
    if alpha == 0.0:
        return cos
    fis = geodesic_score(q, m, cfg) if cfg.semantic_metric == "geodesic" else fisher_score(q, m, cfg)
    if alpha == 1.0:
        return fis
    return (1.0 - alpha) * cos + alpha * fis


# ── Batch kernels (semantic channel) ────────────────────────────────────────

def cosine_scores_batch(query, mus: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    _same_dim(query.shape[0], mus.shape[1])
    qn = float(np.linalg.norm(query))
    if qn == 0.0:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    norms = np.linalg.norm(mus, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (mus @ query) / (norms * qn)
    return np.clip(np.nan_to_num(out, nan=0.0), -1.0, 1.0)


def fisher_scores_batch(q: GaussianEmbedding, mus: np.ndarray, variances: np.ndarray,
                        cfg: SimilarityConfig | None = None) -> np.ndarray:
    cfg = cfg or SimilarityConfig()
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    gap = q.mu - mus
    energy = np.sum(gap * gap / variances, axis=1)
    return np.exp(-energy / cfg.temperature_for(q.dim))


def effective_scores_batch(q: GaussianEmbedding, mus: np.ndarray, variances: np.ndarray,
                           n_access, cfg: SimilarityConfig | None = None,
                           cosine_only: bool = False) -> np.ndarray:
    cfg = cfg or SimilarityConfig()
    cos = cosine_scores_batch(q.mu, mus)
    if cosine_only or len(cos) == 0:
        return cos
    if cfg.semantic_metric == "geodesic":
        d = fisher_rao_distance_batch(q, mus, variances)
        fis = np.exp(-d * d / cfg.temperature_for(q.dim))
    else:
        fis = fisher_scores_batch(q, mus, variances, cfg)
    alpha = ramp_alpha(n_access, cfg)
    blended = (1.0 - alpha) * cos + alpha * fis
    return np.where(alpha == 0.0, cos, np.where(alpha >= 1.0, fis, blended))


# ---------------------------------------------------------------------------
# Tie analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TieBreak:
    broken: bool
    winner: str | None  # "a", "b" or None
    d_a: float
    d_b: float
    condition: float


def tie_condition(q: GaussianEmbedding, m_a: GaussianEmbedding, m_b: GaussianEmbedding) -> float:
    """Sum of squared log-scale gaps between a and b plus the precision-difference
    weighted squared mean gap to a. Nonzero means the variances separate the pair."""
    log_gap = np.log(m_a.var) - np.log(m_b.var)
    weight = 1.0 / (q.var + m_a.var) - 1.0 / (q.var + m_b.var)
    return float(np.sum(log_gap ** 2) + np.sum((q.mu - m_a.mu) ** 2 * weight))


def fisher_breaks_tie(q: GaussianEmbedding, m_a: GaussianEmbedding, m_b: GaussianEmbedding,
                      tol: float = 1e-12) -> TieBreak:
    _same_dim(q.dim, m_a.dim)
    _same_dim(q.dim, m_b.dim)
    cos_a = cosine_score(q.mu, m_a.mu)
    cos_b = cosine_score(q.mu, m_b.mu)
    if abs(cos_a - cos_b) > tol:
        raise PreconditionError(f"pair is not cosine-tied ({cos_a:.15f} vs {cos_b:.15f})")
    d_a = fisher_rao_distance(q, m_a)
    d_b = fisher_rao_distance(q, m_b)
    if d_a == d_b:
        winner = None
    else:
        winner = "a" if d_a < d_b else "b"
    return TieBreak(broken=winner is not None, winner=winner, d_a=d_a, d_b=d_b,
                    condition=tie_condition(q, m_a, m_b))
