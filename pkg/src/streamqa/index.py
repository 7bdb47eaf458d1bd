"""Flat in-memory vector store with exact top-k cosine retrieval.

Backs the static knowledge store and the member/centroid indexes inside each
QA tier. Retrieval is a full scan over a cached similarity matrix: exact by
construction, so routing decisions can be checked against a brute-force
oracle. An approximate index could replace this behind the same interface.

Concurrency contract: any number of concurrent readers OR one writer.
Callers serialize writes; the internal lock only protects the lazily rebuilt
matrix cache so that concurrent readers stay safe with each other.
"""

from __future__ import annotations

import json
import threading
from typing import Any, Iterator

import numpy as np

from .core import Embedding, KnowledgeChunk, normalize
from .errors import DatasetError, DimensionMismatchError, DuplicateIdError, UnknownIdError


class VectorStore:
    """Append-keyed map id -> (embedding, payload) with exact top-k search."""

    def __init__(self, dim: int):
        self._dim = dim
        self._entries: dict[int, tuple[Embedding, Any]] = {}
        self._cache_lock = threading.Lock()
        self._cache: tuple[np.ndarray, np.ndarray] | None = None  # (ids, matrix)

    @property
    def dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, id: int) -> bool:
        return id in self._entries

    def ids(self) -> list[int]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[int, Embedding, Any]]:
        for id, (emb, payload) in self._entries.items():
            yield id, emb, payload

    def get(self, id: int) -> tuple[Embedding, Any]:
        try:
            return self._entries[id]
        except KeyError:
            raise UnknownIdError(f"id {id} not in store") from None

    def insert(self, id: int, embedding: Embedding, payload: Any = None) -> None:
        if id in self._entries:
            raise DuplicateIdError(f"id {id} already in store")
        if embedding.dim != self._dim:
            raise DimensionMismatchError(
                f"embedding dim {embedding.dim} does not match store dim {self._dim}"
            )
        self._entries[id] = (embedding, payload)
        self._cache = None

    def set_payload(self, id: int, payload: Any) -> None:
        """Replace an entry's payload, keeping its embedding (cache stays valid)."""
        emb, _ = self.get(id)
        self._entries[id] = (emb, payload)

    def delete(self, id: int) -> None:
        if id not in self._entries:
            raise UnknownIdError(f"id {id} not in store")
        del self._entries[id]
        self._cache = None

    def top_k(self, query: Embedding, k: int) -> list[tuple[int, float]]:
        """The k entries most cosine-similar to the query.

        Sorted by similarity descending, ties broken by ascending id; returns
        min(k, size) results. Exact: a full scan, vectorized over a cached
        (ids, matrix) pair.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if query.dim != self._dim:
            raise DimensionMismatchError(
                f"query dim {query.dim} does not match store dim {self._dim}"
            )
        snapshot = self._snapshot()
        if snapshot is None:
            return []
        ids, matrix = snapshot
        sims = np.clip(matrix @ query.values, -1.0, 1.0)
        # lexsort sorts by the last key first: similarity desc, then id asc.
        order = np.lexsort((ids, -sims))[:k]
        return [(int(ids[i]), float(sims[i])) for i in order]

    def _snapshot(self) -> tuple[np.ndarray, np.ndarray] | None:
        if not self._entries:
            return None
        cache = self._cache
        if cache is not None:
            return cache
        with self._cache_lock:
            if self._cache is None:
                ids = np.fromiter(self._entries.keys(), dtype=np.int64, count=len(self._entries))
                matrix = np.stack([emb.values for emb, _ in self._entries.values()])
                self._cache = (ids, matrix)
            return self._cache


def load_chunks_jsonl(path: str, *, dim: int, embedder=None) -> list[KnowledgeChunk]:
    """Read knowledge chunks from a JSON-lines file.

    Each line is an object {id, text, embedding: [...]}; the embedding is
    optional and computed via ``embedder`` when absent. Raises DatasetError
    listing every bad line.
    """
    chunks: list[KnowledgeChunk] = []
    errors: list[str] = []
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {line_no}: invalid JSON ({exc.msg})")
                continue
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                errors.append(f"line {line_no}: expected an object with id and text")
                continue
            chunk_id = obj["id"]
            if not isinstance(chunk_id, int):
                errors.append(f"line {line_no}: id must be an integer")
                continue
            if chunk_id in seen:
                errors.append(f"line {line_no}: duplicate id {chunk_id}")
                continue
            raw = obj.get("embedding")
            if raw is not None:
                if not isinstance(raw, list) or len(raw) != dim:
                    errors.append(f"line {line_no}: embedding must be a list of {dim} numbers")
                    continue
                emb = normalize(raw)
            elif embedder is not None:
                emb = embedder.embed(obj["text"])
            else:
                errors.append(f"line {line_no}: no embedding and no embedder configured")
                continue
            seen.add(chunk_id)
            chunks.append(KnowledgeChunk(id=chunk_id, text=str(obj["text"]), embedding=emb))
    if errors:
        raise DatasetError(errors)
    return chunks
