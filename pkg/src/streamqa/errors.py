"""Exception types raised across the engine."""


class EngineError(Exception):
    """Base class for every error this package raises on purpose."""


class DegenerateEmbeddingError(EngineError):
    """A vector with (near-)zero norm cannot be turned into an embedding."""


class DimensionMismatchError(EngineError):
    """Two vectors of different dimension were combined."""


class DuplicateIdError(EngineError):
    """An id was inserted into a store that already holds it."""


class UnknownIdError(EngineError):
    """An id was referenced that no store holds."""


class StateCorruptionError(EngineError):
    """Internal store invariants are broken; indicates a programming bug."""


class ConfigError(EngineError):
    """Configuration failed validation."""


class SnapshotError(EngineError):
    """A snapshot file is unreadable or incompatible with the running engine."""


class DatasetError(EngineError):
    """A replay dataset failed validation.

    ``errors`` holds one message per offending line, each prefixed with its
    line number.
    """

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class UpstreamError(EngineError):
    """A backend call failed after retries.

    Carries the last HTTP status (if any), a truncated response body, and the
    elapsed wall-clock time across all attempts.
    """

    def __init__(self, message: str, *, status: int | None = None,
                 body: str = "", elapsed_s: float = 0.0):
        self.status = status
        self.body = body[:500]
        self.elapsed_s = elapsed_s
        super().__init__(message)


class ProtocolError(EngineError):
    """A backend replied with 2xx but the payload shape was wrong."""
