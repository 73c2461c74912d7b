"""vidmem: long-horizon visual memory for streaming video.

Frames come in at a low sampling rate, pass a cheap filter cascade, and
the survivors are embedded and committed as moments by an online indexer
whose thresholds adapt to the stream itself. Moments group into events,
age through compression tiers, and stay searchable through a bounded
agentic retrieval loop that grounds every answer in something it can cite.
"""

from .agent import (
    GroundedAnswer,
    RetrievalAgent,
    TurnRecord,
    route_request,
    run_retrieval,
    summarize_window,
)
from .config import (
    AgentConfig,
    EmbeddingConfig,
    EngineConfig,
    FilterConfig,
    GatewayConfig,
    IndexerConfig,
    StoreConfig,
    TierPolicy,
    default_tiers,
    load_config,
)
from .embedding import (
    StubEmbedder,
    cosine_distance,
    embed_frame,
    embed_text,
    make_backend,
)
from .errors import VidmemError
from .filters import FilterVerdict, filter_frame
from .frames import Frame, StreamSpec, open_source
from .gateway import (
    HttpBackend,
    MessagePayload,
    ModelGateway,
    StubBackend,
    extract_clip,
    prepare_image,
)
from .indexer import (
    DedupIndexer,
    EventSegmenter,
    IndexEvent,
    MomentDraft,
    otsu_threshold,
)
from .pipeline import MemoryPipeline
from .store import (
    Candidate,
    Event,
    MemoryStore,
    Moment,
    RetentionReport,
    SummaryDocument,
)
from .synth import PlantedPatch, SegmentSpec, SynthSpec, run_bench, synth_stream

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "Candidate",
    "DedupIndexer",
    "EmbeddingConfig",
    "EngineConfig",
    "Event",
    "EventSegmenter",
    "FilterConfig",
    "FilterVerdict",
    "Frame",
    "GatewayConfig",
    "GroundedAnswer",
    "HttpBackend",
    "IndexEvent",
    "IndexerConfig",
    "MemoryPipeline",
    "MemoryStore",
    "MessagePayload",
    "ModelGateway",
    "Moment",
    "MomentDraft",
    "PlantedPatch",
    "RetentionReport",
    "RetrievalAgent",
    "SegmentSpec",
    "StoreConfig",
    "StreamSpec",
    "StubBackend",
    "StubEmbedder",
    "SummaryDocument",
    "SynthSpec",
    "TierPolicy",
    "TurnRecord",
    "VidmemError",
    "cosine_distance",
    "default_tiers",
    "embed_frame",
    "embed_text",
    "extract_clip",
    "filter_frame",
    "load_config",
    "make_backend",
    "open_source",
    "otsu_threshold",
    "prepare_image",
    "route_request",
    "run_bench",
    "run_retrieval",
    "summarize_window",
    "synth_stream",
    "__version__",
]
