"""Replay harness: drive an engine through a recorded question stream.

A dataset is JSONL: one header line, then knowledge chunks, seed QA pairs,
and questions grouped into numbered iterations. Replaying yields
per-iteration metrics (latency, reuse ratio, store growth, answer quality)
plus a full per-question trace; with deterministic backends the trace is
reproducible bit for bit, latency aside.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

from .core import Thresholds
from .engine import Engine
from .errors import DatasetError, UpstreamError
from .router import QueryPath


@dataclass(frozen=True)
class KbRow:
    id: int
    text: str


@dataclass(frozen=True)
class SeedRow:
    question: str
    answer: str


@dataclass(frozen=True)
class QuestionRow:
    iteration: int
    question: str
    reference: str | None = None


@dataclass(frozen=True)
class Dataset:
    name: str
    dim_hint: int | None
    kb: list[KbRow]
    seeds: list[SeedRow]
    questions: list[QuestionRow]

    def iterations(self) -> list[int]:
        return sorted({q.iteration for q in self.questions})


def _require(row: dict, key: str, kinds, line: int, errors: list[str]):
    value = row.get(key)
    if not isinstance(value, kinds) or (isinstance(value, str) and not value.strip()):
        errors.append(f"line {line}: {row.get('kind', '?')} row needs {key}")
        return None
    return value


def load_dataset(path: str) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DatasetError([f"cannot read dataset: {exc}"]) from exc

    errors: list[str] = []
    header = None
    kb: list[KbRow] = []
    seeds: list[SeedRow] = []
    questions: list[QuestionRow] = []
    seen_kb_ids: set[int] = set()

    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(f"line {number}: not valid JSON ({exc.msg})")
            continue
        if not isinstance(row, dict):
            errors.append(f"line {number}: expected an object")
            continue
        kind = row.get("kind")
        if header is None:
            if kind != "header":
                errors.append(f"line {number}: first row must be the header")
                continue
            name = _require(row, "name", str, number, errors)
            dim_hint = row.get("dim_hint")
            if dim_hint is not None and (not isinstance(dim_hint, int)
                                         or isinstance(dim_hint, bool)
                                         or dim_hint < 1):
                errors.append(f"line {number}: dim_hint must be a positive integer")
                dim_hint = None
            header = {"name": name or "unnamed", "dim_hint": dim_hint}
            continue
        if kind == "header":
            errors.append(f"line {number}: duplicate header")
        elif kind == "kb":
            chunk_id = row.get("id")
            text = _require(row, "text", str, number, errors)
            if not isinstance(chunk_id, int) or isinstance(chunk_id, bool) or chunk_id < 0:
                errors.append(f"line {number}: kb row needs a non-negative integer id")
            elif chunk_id in seen_kb_ids:
                errors.append(f"line {number}: duplicate kb id {chunk_id}")
            elif text is not None:
                seen_kb_ids.add(chunk_id)
                kb.append(KbRow(chunk_id, text))
        elif kind == "seed":
            question = _require(row, "question", str, number, errors)
            answer = _require(row, "answer", str, number, errors)
            if question is not None and answer is not None:
                seeds.append(SeedRow(question, answer))
        elif kind == "question":
            iteration = row.get("iteration")
            question = _require(row, "question", str, number, errors)
            reference = row.get("reference")
            if not isinstance(iteration, int) or isinstance(iteration, bool) or iteration < 1:
                errors.append(f"line {number}: iteration must be a positive integer")
            elif reference is not None and not isinstance(reference, str):
                errors.append(f"line {number}: reference must be a string")
            elif question is not None:
                questions.append(QuestionRow(iteration, question, reference))
        else:
            errors.append(f"line {number}: unknown kind {kind!r}")

    if header is None:
        errors.append("line 1: missing header row")
    if not questions and not errors:
        errors.append("dataset has no question rows")
    if errors:
        raise DatasetError(errors)
    return Dataset(header["name"], header["dim_hint"], kb, seeds, questions)


@dataclass(frozen=True)
class TraceEntry:
    index: int
    iteration: int
    question: str
    path: str
    answer: str
    score: float
    reused: bool
    question_id: int | None
    outcome_kind: str | None
    outcome_tier: str | None
    latency_s: float


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    questions: int
    avg_time_s: float
    reuse_count: int
    reuse_ratio: float
    path_counts: dict[str, int]
    total_chunks: int
    growth_rate_pct: float | None
    mean_score: float


@dataclass
class ReplayReport:
    name: str
    chunks_start: int
    iterations: list[IterationMetrics] = field(default_factory=list)
    trace: list[TraceEntry] = field(default_factory=list)
    kb_loaded: int = 0
    seeds_loaded: int = 0
    aborted: str | None = None

    @property
    def total_questions(self) -> int:
        return len(self.trace)

    @property
    def total_reuse(self) -> int:
        return sum(1 for entry in self.trace if entry.reused)

    def final_metrics(self) -> IterationMetrics | None:
        return self.iterations[-1] if self.iterations else None


def run_replay(engine: Engine, dataset: Dataset) -> ReplayReport:
    """Feed the whole dataset through the engine, iteration by iteration.

    A backend failure aborts the run; metrics for the questions already
    answered are kept and the report is marked aborted.
    """
    if (dataset.dim_hint is not None
            and dataset.dim_hint != engine.config.embedding_dim):
        raise DatasetError([
            f"dataset expects embedding dim {dataset.dim_hint}, "
            f"engine uses {engine.config.embedding_dim}"])

    for chunk in dataset.kb:
        engine.add_knowledge(chunk.text, chunk_id=chunk.id)
    for seed in dataset.seeds:
        engine.seed_qa(seed.question, seed.answer)

    chunks_start = engine.stats().qa_total
    report = ReplayReport(name=dataset.name, chunks_start=chunks_start,
                          kb_loaded=len(dataset.kb),
                          seeds_loaded=len(dataset.seeds))

    by_iteration: dict[int, list[QuestionRow]] = {}
    for row in dataset.questions:
        by_iteration.setdefault(row.iteration, []).append(row)

    index = 0
    previous_chunks = chunks_start
    for iteration in dataset.iterations():
        entries: list[TraceEntry] = []
        for row in by_iteration[iteration]:
            try:
                result, outcome = engine.ask(row.question, reference=row.reference)
            except UpstreamError as exc:
                report.aborted = f"iteration {iteration}: {exc}"
                break
            decision = result.decision
            reused = decision.path is QueryPath.REUSE_HIGH
            if reused:
                question_id = decision.evidence_qa[0][0].id
            elif outcome is not None and outcome.stored:
                question_id = outcome.record_id
            else:
                question_id = None
            entries.append(TraceEntry(
                index=index,
                iteration=iteration,
                question=row.question,
                path=decision.path.value,
                answer=result.answer,
                score=result.score,
                reused=reused,
                question_id=question_id,
                outcome_kind=outcome.kind.value if outcome else None,
                outcome_tier=outcome.tier.value if outcome else None,
                latency_s=result.latency_s,
            ))
            index += 1

        if entries:
            total_chunks = engine.stats().qa_total
            counts = {path.value: 0 for path in QueryPath}
            for entry in entries:
                counts[entry.path] += 1
            reuse_count = counts[QueryPath.REUSE_HIGH.value]
            growth = (None if previous_chunks == 0 else
                      (total_chunks - previous_chunks) / previous_chunks * 100.0)
            report.iterations.append(IterationMetrics(
                iteration=iteration,
                questions=len(entries),
                avg_time_s=sum(e.latency_s for e in entries) / len(entries),
                reuse_count=reuse_count,
                reuse_ratio=reuse_count / len(entries),
                path_counts=counts,
                total_chunks=total_chunks,
                growth_rate_pct=growth,
                mean_score=sum(e.score for e in entries) / len(entries),
            ))
            report.trace.extend(entries)
            previous_chunks = total_chunks
        if report.aborted is not None:
            break
    return report


@dataclass(frozen=True)
class SweepRow:
    tau: float
    delta: float
    gamma: float
    final_reuse_ratio: float
    final_total_chunks: int
    mean_score: float
    aborted: bool


def run_sweep(make_engine, dataset: Dataset,
              combos: list[tuple[float, float, float]]) -> list[SweepRow]:
    """Replay the same dataset once per threshold combination.

    ``make_engine`` is called with a Thresholds instance and must return a
    fresh engine each time; state never leaks between combinations.
    """
    rows = []
    for tau, delta, gamma in combos:
        engine = make_engine(Thresholds(tau=tau, delta=delta, gamma=gamma))
        report = run_replay(engine, dataset)
        final = report.final_metrics()
        rows.append(SweepRow(
            tau=tau, delta=delta, gamma=gamma,
            final_reuse_ratio=final.reuse_ratio if final else 0.0,
            final_total_chunks=final.total_chunks if final else report.chunks_start,
            mean_score=final.mean_score if final else 0.0,
            aborted=report.aborted is not None,
        ))
    return rows


METRIC_COLUMNS = [
    "iteration", "questions", "avg_time_s", "reuse_count", "reuse_ratio",
    "reuse_high", "generate_high", "generate_low_kb", "total_chunks",
    "growth_rate_pct", "mean_score",
]


def emit_report(report: ReplayReport, out_dir: str) -> dict[str, str]:
    """Write metrics.csv, trace.jsonl, and summary.json; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "metrics": os.path.join(out_dir, "metrics.csv"),
        "trace": os.path.join(out_dir, "trace.jsonl"),
        "summary": os.path.join(out_dir, "summary.json"),
    }

    with open(paths["metrics"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for metrics in report.iterations:
            writer.writerow([
                metrics.iteration, metrics.questions,
                f"{metrics.avg_time_s:.6f}", metrics.reuse_count,
                f"{metrics.reuse_ratio:.6f}",
                metrics.path_counts["reuse_high"],
                metrics.path_counts["generate_high"],
                metrics.path_counts["generate_low_kb"],
                metrics.total_chunks,
                "" if metrics.growth_rate_pct is None
                else f"{metrics.growth_rate_pct:.6f}",
                f"{metrics.mean_score:.6f}",
            ])

    with open(paths["trace"], "w", encoding="utf-8") as fh:
        for entry in report.trace:
            fh.write(json.dumps(asdict(entry), sort_keys=True,
                                separators=(",", ":")) + "\n")

    summary = {
        "name": report.name,
        "kb_loaded": report.kb_loaded,
        "seeds_loaded": report.seeds_loaded,
        "chunks_start": report.chunks_start,
        "chunks_end": (report.iterations[-1].total_chunks
                       if report.iterations else report.chunks_start),
        "total_questions": report.total_questions,
        "total_reuse": report.total_reuse,
        "aborted": report.aborted,
    }
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def emit_sweep(rows: list[SweepRow], out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "delta", "gamma", "final_reuse_ratio",
                         "final_total_chunks", "mean_score", "aborted"])
        for row in rows:
            writer.writerow([
                row.tau, row.delta, row.gamma,
                f"{row.final_reuse_ratio:.6f}", row.final_total_chunks,
                f"{row.mean_score:.6f}", int(row.aborted),
            ])
    return path
