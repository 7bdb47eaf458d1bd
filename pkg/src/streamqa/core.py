"""Value types and vector math shared by every other module.

Everything here is an immutable value: safe to share between threads, cheap
to copy into route decisions and traces.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateEmbeddingError, DimensionMismatchError

# Below this norm a vector has no usable direction.
ZERO_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class Embedding:
    """A unit-normalized float64 vector; the similarity currency of the engine.

    Construct via :func:`normalize`; the constructor only accepts vectors
    that are already unit-length (within 1e-6).
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise DegenerateEmbeddingError(f"expected a 1-d vector, got shape {arr.shape}")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > 1e-6:
            raise DegenerateEmbeddingError(f"embedding norm is {norm:.6g}, expected 1")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def tolist(self) -> list[float]:
        return [float(x) for x in self.values]


def normalize(values: Sequence[float] | np.ndarray) -> Embedding:
    """Scale a raw vector to unit L2 norm, preserving its direction.

    Raises DegenerateEmbeddingError for zero or near-zero vectors.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DegenerateEmbeddingError(f"expected a 1-d vector, got shape {arr.shape}")
    norm = float(np.linalg.norm(arr))
    if norm <= ZERO_NORM:
        raise DegenerateEmbeddingError("cannot normalize a (near-)zero vector")
    return Embedding(arr / norm)


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine similarity of two embeddings.

    Both inputs are unit vectors, so this is just their dot product, clipped
    to [-1, 1] to absorb float rounding.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    d = float(np.dot(a.values, b.values))
    return max(-1.0, min(1.0, d))


def clamp_score(score: float) -> float:
    """Clamp an answer-quality score to [0, 1]."""
    return max(0.0, min(1.0, float(score)))


class Tier(str, Enum):
    """Quality tier of a stored QA pair, split at the gamma threshold."""

    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class KnowledgeChunk:
    """One embedded document chunk from the static knowledge store."""

    id: int
    text: str
    embedding: Embedding


@dataclass(frozen=True, eq=False)
class QARecord:
    """A scored question-answer pair as stored in the dynamic QA tiers.

    ``id`` is a monotone insertion sequence number, unique across both tiers.
    Scores are clamped to [0, 1] at construction.
    """

    id: int
    question: str
    embedding: Embedding
    answer: str
    score: float
    tier: Tier

    def __post_init__(self):
        object.__setattr__(self, "score", clamp_score(self.score))


@dataclass(frozen=True)
class Thresholds:
    """The three similarity/quality thresholds that drive routing and storage.

    tau:   cluster-assignment bound and the lower bound for reference reuse.
    delta: near-duplicate bound for direct answer reuse and replacement.
    gamma: quality bound splitting the high and low tiers.
    """

    tau: float = 0.75
    delta: float = 0.9
    gamma: float = 0.6

    def __post_init__(self):
        if not (0.0 < self.tau < self.delta <= 1.0):
            raise ConfigError(
                f"thresholds require 0 < tau < delta <= 1, got tau={self.tau}, delta={self.delta}"
            )
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class TemperatureConfig:
    """Parameters of the adaptive decoding-temperature rule."""

    scale_k: float = 250.0
    t_min: float = 0.7
    t_max: float = 1.2
    t_default: float = 0.7

    def __post_init__(self):
        if self.scale_k <= 0.0:
            raise ConfigError(f"scale_k must be positive, got {self.scale_k}")
        if not (0.0 < self.t_min <= self.t_default <= self.t_max):
            raise ConfigError(
                "temperature config requires 0 < t_min <= t_default <= t_max, got "
                f"t_min={self.t_min}, t_default={self.t_default}, t_max={self.t_max}"
            )


@dataclass(frozen=True)
class EngineConfig:
    """Engine-wide knobs shared by routing, storage, and generation."""

    thresholds: Thresholds = Thresholds()
    temperature: TemperatureConfig = TemperatureConfig()
    top_k: int = 5
    embedding_dim: int = 64

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
