"""Query-time routing: reuse a stored answer, or generate with chosen context.

Routing looks only at the high-quality tier. The best member similarity
found through centroid-first retrieval picks one of three paths:

* at or above the near-duplicate threshold: return that stored answer as-is;
* at or above the cluster threshold: generate, prompted with the retrieved
  high-quality pairs;
* otherwise: generate, prompted with knowledge-base passages plus low-quality
  pairs presented as what to avoid.

Decoding temperature adapts to the quality scores of the QA evidence the
active path will show the model: tightly bunched scores invite exploration,
spread-out scores pin the model down.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

from .core import (
    EngineConfig,
    Embedding,
    KnowledgeChunk,
    QARecord,
    TemperatureConfig,
    Thresholds,
    clamp_score,
    cosine_similarity,
)
from .index import VectorStore
from .memory import CqaTierStore, QAMemory
from .prompts import DEFAULT_ROLE, format_doc_entry, format_qa_entry, parse_answer, render_prompt


class QueryPath(str, Enum):
    REUSE_HIGH = "reuse_high"
    GENERATE_HIGH = "generate_high"
    GENERATE_LOW_KB = "generate_low_kb"


@dataclass(frozen=True)
class RouteDecision:
    """Everything the generation step needs, fixed at routing time."""

    path: QueryPath
    best_similarity: float  # -inf when the high tier is empty
    evidence_qa: list[tuple[QARecord, float]] = field(default_factory=list)
    evidence_docs: list[tuple[KnowledgeChunk, float]] = field(default_factory=list)
    temperature: float | None = None  # None on the reuse path


@dataclass(frozen=True)
class AnswerResult:
    answer: str
    decision: RouteDecision
    score: float
    latency_s: float
    parse_fallback: bool = False


def choose_path(best_similarity: float, thresholds: Thresholds) -> QueryPath:
    if best_similarity >= thresholds.delta:
        return QueryPath.REUSE_HIGH
    if best_similarity >= thresholds.tau:
        return QueryPath.GENERATE_HIGH
    return QueryPath.GENERATE_LOW_KB


def adaptive_temperature(scores: list[float], config: TemperatureConfig) -> float:
    """Temperature from the minimum gap between ascending-sorted scores.

    Fewer than two scores carry no spread information, so the default
    applies. Otherwise exp(-k * gap) is clamped into [t_min, t_max]: a tiny
    gap (near-identical quality) lands high, a wide gap lands low.
    """
    if len(scores) < 2:
        return config.t_default
    ordered = sorted(scores)
    gap = min(b - a for a, b in zip(ordered, ordered[1:]))
    return min(config.t_max, max(config.t_min, math.exp(-config.scale_k * gap)))


def retrieve_tier(store: CqaTierStore, embedding: Embedding, k: int) -> list[tuple[QARecord, float]]:
    """Centroid-first retrieval: nearest k clusters, then their best k members.

    Members are ranked by similarity to the query with ties broken by
    ascending record id, matching a flat scan whenever the true best member
    sits in one of the nearest clusters.
    """
    centroid_hits = store.centroid_index.top_k(embedding, k) if store.clusters else []
    pool = sorted({
        member_id
        for cluster_id, _ in centroid_hits
        for member_id in store.clusters[cluster_id].member_ids
    })
    scored = []
    for member_id in pool:
        member_embedding, record = store.members.get(member_id)
        scored.append((record, cosine_similarity(embedding, member_embedding)))
    scored.sort(key=lambda pair: (-pair[1], pair[0].id))
    return scored[:k]


def route(embedding: Embedding, memory: QAMemory, kb: VectorStore,
          config: EngineConfig) -> RouteDecision:
    k = config.top_k
    high_hits = retrieve_tier(memory.high, embedding, k)
    best = high_hits[0][1] if high_hits else float("-inf")
    path = choose_path(best, config.thresholds)

    if path is QueryPath.REUSE_HIGH:
        return RouteDecision(path, best, evidence_qa=[high_hits[0]])

    if path is QueryPath.GENERATE_HIGH:
        temperature = adaptive_temperature(
            [record.score for record, _ in high_hits], config.temperature)
        return RouteDecision(path, best, evidence_qa=high_hits,
                             temperature=temperature)

    low_hits = retrieve_tier(memory.low, embedding, k)
    doc_hits = []
    if len(kb):
        for chunk_id, sim in kb.top_k(embedding, k):
            doc_hits.append((kb.get(chunk_id)[1], sim))
    temperature = adaptive_temperature(
        [record.score for record, _ in low_hits], config.temperature)
    return RouteDecision(path, best, evidence_qa=low_hits,
                         evidence_docs=doc_hits, temperature=temperature)


def build_prompt(question: str, decision: RouteDecision,
                 role: str = DEFAULT_ROLE) -> str:
    qa_entries = [format_qa_entry(record.question, record.answer, record.score)
                  for record, _ in decision.evidence_qa]
    if decision.path is QueryPath.GENERATE_HIGH:
        return render_prompt(question, previous_relevant_qa=qa_entries, role=role)
    doc_entries = [format_doc_entry(chunk.id, chunk.text)
                   for chunk, _ in decision.evidence_docs]
    return render_prompt(question, knowledge_base_context=doc_entries,
                         bad_cqa_contexts=qa_entries, role=role)


def execute(question: str, decision: RouteDecision, generator, scorer,
            reference: str | None = None, role: str = DEFAULT_ROLE) -> AnswerResult:
    """Carry out a routing decision: reuse verbatim, or generate and score."""
    start = time.monotonic()
    if decision.path is QueryPath.REUSE_HIGH:
        record = decision.evidence_qa[0][0]
        return AnswerResult(record.answer, decision, record.score,
                            time.monotonic() - start)
    prompt = build_prompt(question, decision, role)
    raw = generator.generate(prompt, decision.temperature)
    answer, fallback = parse_answer(raw)
    score = clamp_score(scorer.score(question, answer, reference))
    return AnswerResult(answer, decision, score, time.monotonic() - start,
                        parse_fallback=fallback)
