"""HTTP serving layer over the engine.

Three endpoints: ``POST /ask`` answers a question, ``POST /feedback``
re-scores a stored answer, ``GET /stats`` reports store sizes and request
counters. Counters live behind their own lock, separate from the engine's
store lock, so stats never wait on a slow generation.

Validation failures of any shape map to 400, unknown ids to 404, backend
failures to 502, and internal store corruption to 500. Each request is
logged as one JSON line.
"""

from __future__ import annotations

import contextlib
import json
import logging
import math
import threading
import time

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .engine import Engine
from .errors import (
    DegenerateEmbeddingError,
    ProtocolError,
    StateCorruptionError,
    UnknownIdError,
    UpstreamError,
)
from .router import QueryPath

logger = logging.getLogger("streamqa.service")


class AskRequest(BaseModel):
    question: str
    reference: str | None = None


class FeedbackRequest(BaseModel):
    question_id: int
    score: float


class RequestCounters:
    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0
        self.path_counts = {path.value: 0 for path in QueryPath}
        self.latency_sum = 0.0

    def record(self, path: QueryPath, latency_s: float) -> None:
        with self._lock:
            self.total += 1
            self.path_counts[path.value] += 1
            self.latency_sum += latency_s

    def snapshot(self) -> dict:
        with self._lock:
            total = self.total
            counts = dict(self.path_counts)
            latency_sum = self.latency_sum
        reuse = counts[QueryPath.REUSE_HIGH.value]
        return {
            "total": total,
            "path_counts": counts,
            "reuse_ratio": reuse / total if total else 0.0,
            "avg_latency_s": latency_sum / total if total else 0.0,
        }


def _evidence_payload(decision) -> list[dict]:
    entries = []
    for record, similarity in decision.evidence_qa:
        entries.append({
            "kind": "qa",
            "question": record.question,
            "answer": record.answer,
            "score": record.score,
            "similarity": similarity,
        })
    for chunk, similarity in decision.evidence_docs:
        entries.append({
            "kind": "doc",
            "doc_id": chunk.id,
            "snippet": chunk.text[:200],
            "similarity": similarity,
        })
    return entries


def create_app(engine: Engine, *, snapshot_path: str | None = None,
               autosave_interval_s: float | None = None) -> FastAPI:
    counters = RequestCounters()
    stop_autosave = threading.Event()

    def autosave_loop():
        while not stop_autosave.wait(autosave_interval_s):
            try:
                engine.save_snapshot(snapshot_path)
            except Exception:
                logger.exception("autosave failed")

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        thread = None
        if snapshot_path and autosave_interval_s:
            thread = threading.Thread(target=autosave_loop, daemon=True)
            thread.start()
        yield
        if thread is not None:
            stop_autosave.set()
            thread.join(timeout=5)

    app = FastAPI(title="streamqa", lifespan=lifespan)
    app.state.engine = engine
    app.state.counters = counters

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"detail": "invalid request body"})

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        start = time.monotonic()
        response = await call_next(request)
        logger.info(json.dumps({
            "event": "request",
            "method": request.method,
            "path": request.url.path,
            "status": response.status_code,
            "duration_ms": round((time.monotonic() - start) * 1000, 3),
        }, sort_keys=True))
        return response

    @app.post("/ask")
    def ask(body: AskRequest):
        question = body.question.strip()
        if not question:
            return JSONResponse(status_code=400,
                                content={"detail": "question must not be empty"})
        try:
            result, outcome = engine.ask(question, reference=body.reference)
        except DegenerateEmbeddingError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        except (UpstreamError, ProtocolError) as exc:
            payload = {"detail": str(exc)}
            if isinstance(exc, UpstreamError):
                payload["upstream_status"] = exc.status
                payload["elapsed_s"] = exc.elapsed_s
            return JSONResponse(status_code=502, content=payload)
        except StateCorruptionError as exc:
            return JSONResponse(status_code=500, content={"detail": str(exc)})

        decision = result.decision
        if decision.path is QueryPath.REUSE_HIGH:
            question_id = decision.evidence_qa[0][0].id
        elif outcome is not None and outcome.stored:
            question_id = outcome.record_id
        else:
            question_id = None
        counters.record(decision.path, result.latency_s)
        return {
            "answer": result.answer,
            "path": decision.path.value,
            "best_similarity": (None if math.isinf(decision.best_similarity)
                                else decision.best_similarity),
            "score": result.score,
            "temperature": decision.temperature,
            "latency_s": result.latency_s,
            "parse_fallback": result.parse_fallback,
            "question_id": question_id,
            "evidence": _evidence_payload(decision),
        }

    @app.post("/feedback")
    def feedback(body: FeedbackRequest):
        if not 0.0 <= body.score <= 1.0:
            return JSONResponse(status_code=400,
                                content={"detail": "score must be in [0, 1]"})
        try:
            outcome = engine.feedback(body.question_id, body.score)
        except UnknownIdError:
            return JSONResponse(
                status_code=404,
                content={"detail": f"no stored answer {body.question_id}"})
        except StateCorruptionError as exc:
            return JSONResponse(status_code=500, content={"detail": str(exc)})
        if outcome is None:
            record = engine.find_record(body.question_id)
            return {
                "question_id": body.question_id,
                "moved": False,
                "stored": True,
                "tier": record.tier.value,
                "new_question_id": body.question_id,
            }
        return {
            "question_id": body.question_id,
            "moved": True,
            "stored": outcome.stored,
            "tier": outcome.tier.value if outcome.stored else None,
            "new_question_id": outcome.record_id,
        }

    @app.get("/stats")
    def stats():
        engine_stats = engine.stats()
        return {
            "kb_size": engine_stats.kb_size,
            "qa_total": engine_stats.qa_total,
            "high": {
                "member_count": engine_stats.high.member_count,
                "cluster_count": engine_stats.high.cluster_count,
                "mean_cluster_size": engine_stats.high.mean_cluster_size,
            },
            "low": {
                "member_count": engine_stats.low.member_count,
                "cluster_count": engine_stats.low.cluster_count,
                "mean_cluster_size": engine_stats.low.mean_cluster_size,
            },
            "requests": counters.snapshot(),
        }

    return app
