"""Engine configuration.

One dataclass tree covering every tunable default: sampling, filter
thresholds, online-indexer behaviour, tier retention policy, retrieval
budget and gateway payload limits. A JSON config file may override any
field; unknown keys are rejected so typos fail loudly instead of being
ignored. Role decoding parameters (temperature/max tokens per model role)
are deliberately NOT here: they are fixed at startup in the gateway
registry.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass(frozen=True)
class TierPolicy:
    """Retention behaviour for one age band.

    max_age_s is the inclusive upper age bound for the band; None means
    unbounded (the oldest band). min_gap_s is the minimum spacing between
    kept frames while walking the band in time order. max_side_px /
    jpeg_quality describe recompression for kept frames; None disables it.
    """

    name: str
    max_age_s: Optional[float]
    min_gap_s: float
    max_side_px: Optional[int]
    jpeg_quality: Optional[int]


def default_tiers() -> tuple[TierPolicy, ...]:
    return (
        TierPolicy("recent", 3600.0, 1.0, None, None),
        TierPolicy("mid", 86400.0, 20.0, 768, 70),
        TierPolicy("long", None, 120.0, 512, 45),
    )


@dataclass
class FilterConfig:
    tau_blur: float = 20.0          # min Laplacian variance (sharpness)
    tau_diff: float = 20.0          # min mean abs gray diff vs last kept
    tau_ssim: float = 0.92          # above this the frame is a duplicate
    tau_hist: float = 0.0           # 0.0 disables the histogram gate
    ssim_window: int = 8


@dataclass
class IndexerConfig:
    fallback_dedup_similarity: float = 0.88   # distance fallback = 1 - this
    fallback_event_similarity: float = 0.80
    relax_factor: float = 0.8
    max_event_duration_s: float = 300.0
    history_capacity: int = 512
    min_samples: int = 32
    otsu_bins: int = 64
    event_writer_max_frames: int = 8


@dataclass
class AgentConfig:
    turn_budget: int = 8
    default_threshold: float = 0.65
    permissive_top_k: int = 50
    permissive_inspect_k: int = 5
    inspect_frame_cap: int = 16


@dataclass
class GatewayConfig:
    image_max_bytes: int = 5 * 1024 * 1024
    image_max_side: int = 1280
    jpeg_start_quality: int = 90
    jpeg_quality_step: int = 10
    jpeg_quality_floor: int = 30
    retry_attempts: int = 3
    backoff_base_s: float = 0.5
    light_model: str = "light"
    main_model: str = "main"
    multimodal_model: str = "multimodal"


@dataclass
class StoreConfig:
    base_jpeg_quality: int = 90


@dataclass
class EmbeddingConfig:
    backend: str = "stub"           # "stub" | "http"
    dim: int = 280                  # stub dimensionality; http backends may differ
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "VIDMEM_EMBED_KEY"


@dataclass
class EngineConfig:
    base_fps: float = 0.5
    filters: FilterConfig = field(default_factory=FilterConfig)
    indexer: IndexerConfig = field(default_factory=IndexerConfig)
    tiers: tuple[TierPolicy, ...] = field(default_factory=default_tiers)
    agent: AgentConfig = field(default_factory=AgentConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    store: StoreConfig = field(default_factory=StoreConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    # -- derived accessors ------------------------------------------------

    @property
    def dedup_fallback_distance(self) -> float:
        return 1.0 - self.indexer.fallback_dedup_similarity

    @property
    def event_fallback_distance(self) -> float:
        return 1.0 - self.indexer.fallback_event_similarity

    def snapshot(self) -> dict:
        """JSON-safe dict of the full config (stored in the manifest)."""
        return dataclasses.asdict(self)


_SECTION_TYPES = {
    "filters": FilterConfig,
    "indexer": IndexerConfig,
    "agent": AgentConfig,
    "gateway": GatewayConfig,
    "store": StoreConfig,
    "embedding": EmbeddingConfig,
}


def _apply_section(obj, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {where}.{key}")
        setattr(obj, key, value)
    return obj


def load_config(path: str | Path) -> EngineConfig:
    """Build an EngineConfig from a JSON file of section -> overrides.

    Example file:
        {"base_fps": 1.0, "filters": {"tau_blur": 15.0}, "tiers": [...]}

    Raises ConfigError for unreadable files or unknown keys.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> EngineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    cfg = EngineConfig()
    for key, value in raw.items():
        if key == "base_fps":
            cfg.base_fps = float(value)
        elif key == "tiers":
            cfg.tiers = tuple(_tier_from_dict(t) for t in value)
        elif key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key} must be an object")
            _apply_section(getattr(cfg, key), value, key)
        else:
            raise ConfigError(f"unknown config key {key}")
    return cfg


def _tier_from_dict(data: dict) -> TierPolicy:
    allowed = {"name", "max_age_s", "min_gap_s", "max_side_px", "jpeg_quality"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown tier keys {sorted(extra)}")
    missing = {"name", "min_gap_s"} - set(data)
    if missing:
        raise ConfigError(f"tier missing keys {sorted(missing)}")
    return TierPolicy(
        name=data["name"],
        max_age_s=data.get("max_age_s"),
        min_gap_s=data["min_gap_s"],
        max_side_px=data.get("max_side_px"),
        jpeg_quality=data.get("jpeg_quality"),
    )
