# settings.py
"""
Runtime configuration. Every tunable lives in one of the frozen sub-configs;
`Settings.from_env()` reads GEOMEM_* keys (and a .env file if present).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from dotenv import load_dotenv

from channels import ChannelConfig
from fusion import FusionConfig
from info_geometry import SimilarityConfig
from langevin import LifecycleThresholds, PotentialParams

load_dotenv()


def _env_float(key: str, default: float) -> float:
    try:
        return float(os.getenv(key, default))
    except ValueError:
        return default


def _env_int(key: str, default: int) -> int:
    try:
        return int(os.getenv(key, default))
    except ValueError:
        return default


def _env_str(key: str, default: str) -> str:
    raw = os.getenv(key)
    return raw if raw else default


@dataclass(frozen=True)
class StoreConfig:
    scene_window_s: float = 600.0
    access_strength: float = 0.3
    entropy_threshold_bits: float = 1.5
    min_tokens: int = 3
    tau: float = 0.45           # sheaf contradiction threshold
    sheaf_eps: float = 1e-9

    def __post_init__(self):
        if not (0 < self.access_strength <= 1):
            raise ValueError("access_strength must be in (0, 1]")
        if self.scene_window_s < 0:
            raise ValueError("scene_window_s must be non-negative")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")


@dataclass(frozen=True)
class Settings:
    db_path: str = "memory.db"
    profile_id: str = "default"
    embed_dim: int = 384
    embedder: str = "hash"
    reranker: str = "lexical"
    top_k: int = 20
    remote_api_key: str | None = field(default=None, repr=False)
    remote_timeout: float = 10.0
    remote_retries: int = 2
    remote_concurrency: int = 4
    log_level: str = "INFO"
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    potential: PotentialParams = field(default_factory=PotentialParams)
    thresholds: LifecycleThresholds = field(default_factory=LifecycleThresholds)
    channels: ChannelConfig = field(default_factory=ChannelConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    store: StoreConfig = field(default_factory=StoreConfig)

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            db_path=_env_str("GEOMEM_DB", "memory.db"),
            profile_id=_env_str("GEOMEM_PROFILE", "default"),
            embed_dim=_env_int("GEOMEM_EMBED_DIM", 384),
            embedder=_env_str("GEOMEM_EMBEDDER", "hash"),
            reranker=_env_str("GEOMEM_RERANKER", "lexical"),
            top_k=_env_int("GEOMEM_TOP_K", 20),
            remote_api_key=os.getenv("GEOMEM_REMOTE_API_KEY") or None,
            remote_timeout=_env_float("GEOMEM_REMOTE_TIMEOUT", 10.0),
            remote_retries=_env_int("GEOMEM_REMOTE_RETRIES", 2),
            remote_concurrency=_env_int("GEOMEM_REMOTE_CONCURRENCY", 4),
            log_level=_env_str("GEOMEM_LOG_LEVEL", "INFO"),
            similarity=SimilarityConfig(semantic_metric=_env_str("GEOMEM_SEMANTIC_METRIC", "approx")),
            potential=PotentialParams(correction_coeff=_env_float("GEOMEM_LANGEVIN_CORRECTION", 0.5)),
        )

    def with_overrides(self, **changes) -> "Settings":
        """dataclasses.replace, skipping keys whose value is None (unset CLI flags)."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
