"""Streaming community-QA answering engine.

A question stream is answered from three memories: a static knowledge
store of embedded document chunks, and two quality tiers of previously
answered questions organized into centroid clusters. Each query is
routed by its best similarity against the high tier: close duplicates
reuse the stored answer outright, near matches generate with prior
answers as references, and everything else generates from knowledge
chunks while citing low-rated answers as counter-examples. Answers are
scored and folded back into the tiers, so the store grows where the
stream is novel and flattens where it repeats.
"""

from .backends import (
    HttpEmbedder,
    HttpGenerator,
    LexicalOverlapScorer,
    MockEmbedder,
    MockGenerator,
    token_f1,
)
from .config import PRESETS, Settings, build_engine, load_settings
from .core import (
    Embedding,
    EngineConfig,
    KnowledgeChunk,
    QARecord,
    TemperatureConfig,
    Thresholds,
    Tier,
    cosine_similarity,
    normalize,
)
from .engine import Engine, EngineStats
from .errors import (
    ConfigError,
    DatasetError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    DuplicateIdError,
    EngineError,
    ProtocolError,
    SnapshotError,
    StateCorruptionError,
    UnknownIdError,
    UpstreamError,
)
from .memory import QAMemory, UpdateKind, UpdateOutcome
from .replay import (
    Dataset,
    ReplayReport,
    emit_report,
    emit_sweep,
    load_dataset,
    run_replay,
    run_sweep,
)
from .router import AnswerResult, QueryPath, RouteDecision, adaptive_temperature
from .service import create_app
from .synth import make_stream, write_stream

__version__ = "0.1.0"

__all__ = [
    "AnswerResult",
    "ConfigError",
    "Dataset",
    "DatasetError",
    "DegenerateEmbeddingError",
    "DimensionMismatchError",
    "DuplicateIdError",
    "Embedding",
    "Engine",
    "EngineConfig",
    "EngineError",
    "EngineStats",
    "HttpEmbedder",
    "HttpGenerator",
    "KnowledgeChunk",
    "LexicalOverlapScorer",
    "MockEmbedder",
    "MockGenerator",
    "PRESETS",
    "ProtocolError",
    "QAMemory",
    "QARecord",
    "QueryPath",
    "ReplayReport",
    "RouteDecision",
    "Settings",
    "SnapshotError",
    "StateCorruptionError",
    "TemperatureConfig",
    "Thresholds",
    "Tier",
    "UnknownIdError",
    "UpdateKind",
    "UpdateOutcome",
    "UpstreamError",
    "adaptive_temperature",
    "build_engine",
    "cosine_similarity",
    "create_app",
    "emit_report",
    "emit_sweep",
    "load_dataset",
    "load_settings",
    "make_stream",
    "normalize",
    "run_replay",
    "run_sweep",
    "token_f1",
    "write_stream",
]
