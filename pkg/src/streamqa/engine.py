"""The answering engine: knowledge base, tiered QA memory, and backends.

One lock serializes every read and write of the in-memory stores. Embedding
and generation calls happen outside it, so slow backends never block store
access from other threads; the update step re-examines the stores under the
lock, which keeps decisions consistent even when answers arrive out of order.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, replace

from .core import EngineConfig, Embedding, KnowledgeChunk, Tier
from .errors import ConfigError, SnapshotError
from .index import VectorStore, load_chunks_jsonl
from .memory import QAMemory, TierStats, UpdateOutcome, load_tier, save_tier
from .prompts import DEFAULT_ROLE
from .router import AnswerResult, QueryPath, execute, route


@dataclass(frozen=True)
class EngineStats:
    high: TierStats
    low: TierStats
    kb_size: int

    @property
    def qa_total(self) -> int:
        return self.high.member_count + self.low.member_count


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Engine:
    def __init__(self, config: EngineConfig, embedder, generator, scorer,
                 *, role: str = DEFAULT_ROLE):
        if getattr(embedder, "dim", config.embedding_dim) != config.embedding_dim:
            raise ConfigError(
                f"embedder dim {embedder.dim} != configured dim {config.embedding_dim}")
        self.config = config
        self.embedder = embedder
        self.generator = generator
        self.scorer = scorer
        self.role = role
        self.kb = VectorStore(config.embedding_dim)
        self.memory = QAMemory(config.embedding_dim, config.thresholds)
        self._lock = threading.RLock()
        self._next_chunk_id = 0

    # -- ingestion -----------------------------------------------------------

    def add_knowledge(self, text: str, chunk_id: int | None = None) -> KnowledgeChunk:
        embedding = self.embedder.embed(text)
        with self._lock:
            if chunk_id is None:
                chunk_id = self._next_chunk_id
            chunk = KnowledgeChunk(chunk_id, text, embedding)
            self.kb.insert(chunk.id, chunk.embedding, chunk)
            self._next_chunk_id = max(self._next_chunk_id, chunk_id + 1)
        return chunk

    def load_knowledge_jsonl(self, path: str) -> int:
        chunks = load_chunks_jsonl(path, dim=self.config.embedding_dim,
                                   embedder=self.embedder)
        with self._lock:
            for chunk in chunks:
                self.kb.insert(chunk.id, chunk.embedding, chunk)
                self._next_chunk_id = max(self._next_chunk_id, chunk.id + 1)
        return len(chunks)

    def seed_qa(self, question: str, answer: str, score: float = 1.0) -> UpdateOutcome:
        """Preload a trusted QA pair through the normal update path."""
        embedding = self.embedder.embed(question)
        with self._lock:
            return self.memory.update(question, embedding, answer, score)

    # -- serving -------------------------------------------------------------

    def ask(self, question: str,
            reference: str | None = None) -> tuple[AnswerResult, UpdateOutcome | None]:
        """Answer one question and fold the result back into memory.

        Returns the answer plus what the update phase did with it (None when
        a stored answer was reused, which writes nothing).
        """
        start = time.monotonic()
        embedding = self.embedder.embed(question)
        with self._lock:
            decision = route(embedding, self.memory, self.kb, self.config)
        result = execute(question, decision, self.generator, self.scorer,
                         reference=reference, role=self.role)
        outcome = None
        if decision.path is not QueryPath.REUSE_HIGH:
            with self._lock:
                outcome = self.memory.update(question, embedding, result.answer,
                                             result.score)
        return replace(result, latency_s=time.monotonic() - start), outcome

    def feedback(self, record_id: int, score: float) -> UpdateOutcome | None:
        """Re-score a stored answer; may move it across tiers or drop it."""
        with self._lock:
            return self.memory.apply_feedback(record_id, score)

    def find_record(self, record_id: int):
        with self._lock:
            return self.memory.find_record(record_id)

    def stats(self) -> EngineStats:
        with self._lock:
            return EngineStats(self.memory.high.stats(), self.memory.low.stats(),
                               len(self.kb))

    # -- persistence ---------------------------------------------------------
    #
    # One canonical-JSON line per entity: an engine header, the high tier
    # section, the low tier section, then the knowledge chunks. Within each
    # tier the section layout (header, records, clusters) comes from the
    # memory module. Ordering and key sorting are fixed, so saving a freshly
    # loaded engine reproduces the file byte for byte.

    def save_snapshot(self, path: str) -> None:
        with self._lock:
            thresholds = self.config.thresholds
            header = _dump({
                "kind": "engine",
                "dim": self.config.embedding_dim,
                "tau": thresholds.tau,
                "delta": thresholds.delta,
                "gamma": thresholds.gamma,
                "next_chunk_id": self._next_chunk_id,
            })
            directory = os.path.dirname(os.path.abspath(path))
            fd, temp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(header + "\n")
                    save_tier(self.memory.high, self.memory.next_record_id, fh)
                    save_tier(self.memory.low, self.memory.next_record_id, fh)
                    for chunk_id in sorted(self.kb.ids()):
                        _, chunk = self.kb.get(chunk_id)
                        fh.write(_dump({
                            "id": chunk.id,
                            "text": chunk.text,
                            "embedding": chunk.embedding.tolist(),
                        }) + "\n")
                os.replace(temp_path, path)
            except BaseException:
                if os.path.exists(temp_path):
                    os.unlink(temp_path)
                raise

    def load_snapshot(self, path: str) -> None:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise SnapshotError(f"cannot read snapshot: {exc}") from exc

        header = None
        tier_sections: list[dict] = []
        kb_rows: list[dict] = []
        current: dict | None = None
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SnapshotError(f"line {number}: not valid JSON ({exc})") from exc
            if not isinstance(row, dict):
                raise SnapshotError(f"line {number}: expected an object")
            if row.get("kind") == "engine":
                header = row
            elif "tier" in row:
                current = {"header": row, "records": [], "clusters": []}
                tier_sections.append(current)
            elif "question" in row:
                if current is None:
                    raise SnapshotError(f"line {number}: record before any tier header")
                current["records"].append(row)
            elif "member_ids" in row:
                if current is None:
                    raise SnapshotError(f"line {number}: cluster before any tier header")
                current["clusters"].append(row)
            elif "text" in row:
                kb_rows.append(row)
            else:
                raise SnapshotError(f"line {number}: unrecognized row")

        if header is None:
            raise SnapshotError("missing engine header")
        thresholds = self.config.thresholds
        if int(header.get("dim", -1)) != self.config.embedding_dim:
            raise SnapshotError(
                f"snapshot dim {header.get('dim')} != engine dim "
                f"{self.config.embedding_dim}")
        if float(header.get("gamma", -1.0)) != thresholds.gamma:
            raise SnapshotError(
                f"snapshot gamma {header.get('gamma')} != engine gamma "
                f"{thresholds.gamma}; tier membership would be wrong")
        if len(tier_sections) != 2:
            raise SnapshotError(f"expected 2 tier sections, found {len(tier_sections)}")

        memory = QAMemory(self.config.embedding_dim, thresholds)
        next_ids = []
        loaded = {}
        for section in tier_sections:
            store, next_id = load_tier(section["header"], section["records"],
                                       section["clusters"])
            if store.gamma != thresholds.gamma:
                raise SnapshotError("tier gamma disagrees with engine gamma")
            loaded[store.tier] = store
            next_ids.append(next_id)
        if set(loaded) != {Tier.HIGH, Tier.LOW}:
            raise SnapshotError("snapshot must contain one high and one low section")
        memory.high = loaded[Tier.HIGH]
        memory.low = loaded[Tier.LOW]
        memory.next_record_id = max(next_ids)

        kb = VectorStore(self.config.embedding_dim)
        for row in kb_rows:
            try:
                chunk = KnowledgeChunk(int(row["id"]), row["text"],
                                       Embedding(row["embedding"]))
            except Exception as exc:
                raise SnapshotError(f"bad knowledge chunk row: {exc}") from exc
            kb.insert(chunk.id, chunk.embedding, chunk)

        with self._lock:
            self.memory = memory
            self.kb = kb
            self._next_chunk_id = int(header.get("next_chunk_id", 0))
