"""Deterministic synthetic question streams for replay experiments.

Questions are random token strings under the trigram mock embedder, so
distinct questions land far apart while single-character edits stay close.
Each question carries an engineered reference answer whose token overlap
with the mock generator's echo pins the graded score into a chosen band:
well above, between, or below the usual quality thresholds. Later
iterations repeat earlier questions with small edits at a configurable
rate, which is what makes store growth taper and reuse climb.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass, field

from .backends import MockEmbedder
from .core import cosine_similarity

ECHO_PREFIX = "mock reply for"

# Target score bands; gaps around 0.6 and 0.8 keep rounding away from
# the tier boundaries the sweeps care about.
CLASS_BANDS = {
    "good": (0.84, 0.93),
    "mid": (0.64, 0.76),
    "bad": (0.30, 0.50),
}
CLASS_WEIGHTS = {"good": 0.45, "mid": 0.30, "bad": 0.25}


@dataclass
class StreamStats:
    n_seed: int
    n_iterations: int
    per_iteration: int
    fresh: int = 0
    paraphrases: int = 0
    exact_dups: int = 0
    class_counts: dict[str, int] = field(default_factory=dict)


def _make_vocab(rng: random.Random, count: int, length: int) -> list[str]:
    words: set[str] = set()
    while len(words) < count:
        words.add("".join(rng.choice(string.ascii_lowercase)
                          for _ in range(length)))
    return sorted(words)


def _echo_answer(question: str) -> str:
    return f"{ECHO_PREFIX} {question}"


def build_reference(question: str, target_f1: float) -> str:
    """Reference whose token F1 against the echo answer is ~target_f1.

    The echo answer has L distinct tokens; appending m distinct filler
    tokens to a copy of it gives F1 = 2L/(2L+m), so m is solved from the
    target. Fillers are 7 letters long, disjoint from the 5-letter
    question vocabulary by construction.
    """
    answer_tokens = _echo_answer(question).split()
    n = len(answer_tokens)
    m = max(0, round(2 * n * (1.0 - target_f1) / target_f1))
    filler_rng = random.Random(f"ref|{question}|{target_f1:.4f}")
    fillers = _make_vocab(filler_rng, m, 7) if m else []
    return " ".join(answer_tokens + fillers)


def achieved_f1(question: str, target_f1: float) -> float:
    n = len(_echo_answer(question).split())
    m = max(0, round(2 * n * (1.0 - target_f1) / target_f1))
    return 2 * n / (2 * n + m)


def make_paraphrase(question: str, embedder: MockEmbedder, delta: float,
                    rng: random.Random, attempts: int = 8) -> tuple[str, bool]:
    """Single-character edit that the embedder still places within delta.

    Returns (text, changed). Falls back to the exact question when no
    edit survives verification, so callers always get a near-duplicate.
    """
    base_vec = embedder.embed(question)
    tokens = question.split()
    candidates = [i for i, tok in enumerate(tokens) if len(tok) >= 4]
    for _ in range(attempts):
        if not candidates:
            break
        i = rng.choice(candidates)
        tok = tokens[i]
        pos = rng.randrange(1, len(tok) - 1)
        replacement = rng.choice(string.ascii_lowercase)
        if replacement == tok[pos]:
            continue
        edited = tokens.copy()
        edited[i] = tok[:pos] + replacement + tok[pos + 1:]
        text = " ".join(edited)
        if cosine_similarity(base_vec, embedder.embed(text)) >= delta:
            return text, True
    return question, False


def _pick_class(rng: random.Random) -> str:
    roll = rng.random()
    acc = 0.0
    for name, weight in CLASS_WEIGHTS.items():
        acc += weight
        if roll < acc:
            return name
    return "bad"


def make_stream(*, seed: int = 0, dim: int = 64, mock_seed: int = 0,
                n_seed: int = 40, n_iterations: int = 10,
                per_iteration: int = 40, paraphrase_rate: float = 0.3,
                delta: float = 0.9, n_kb: int = 8,
                name: str = "synthetic") -> tuple[list[dict], StreamStats]:
    """Build a dataset as JSONL-ready rows plus generation statistics.

    Iteration 1 is entirely fresh questions; every later iteration
    replaces paraphrase_rate of its questions with verified near
    duplicates of questions already introduced (seeds included). The
    embedder used for verification must match the replaying engine's
    (same dim and mock_seed) or the near-duplicate guarantee is void.
    """
    if n_iterations < 1 or per_iteration < 1 or n_seed < 0:
        raise ValueError("stream shape parameters must be positive")
    if not 0.0 <= paraphrase_rate < 1.0:
        raise ValueError("paraphrase_rate must be in [0, 1)")

    rng = random.Random(seed)
    embedder = MockEmbedder(dim=dim, seed=mock_seed)
    vocab = _make_vocab(rng, 220, 5)
    stats = StreamStats(n_seed=n_seed, n_iterations=n_iterations,
                        per_iteration=per_iteration,
                        class_counts={k: 0 for k in CLASS_BANDS})

    rows: list[dict] = [{"kind": "header", "name": name, "dim_hint": dim}]

    for i in range(n_kb):
        text = " ".join(rng.sample(vocab, 12))
        rows.append({"kind": "kb", "id": i, "text": text})

    def fresh_question() -> tuple[str, str, float]:
        n_tokens = rng.randint(6, 9)
        question = " ".join(rng.sample(vocab, n_tokens))
        cls = _pick_class(rng)
        lo, hi = CLASS_BANDS[cls]
        target = rng.uniform(lo, hi)
        stats.class_counts[cls] += 1
        return question, cls, target

    # (question, target_f1) for everything eligible as a paraphrase source
    pool: list[tuple[str, float]] = []

    for _ in range(n_seed):
        question, _, target = fresh_question()
        rows.append({"kind": "seed", "question": question,
                     "answer": _echo_answer(question)})
        pool.append((question, target))

    for iteration in range(1, n_iterations + 1):
        n_para = 0 if iteration == 1 else round(per_iteration * paraphrase_rate)
        kinds = ["paraphrase"] * n_para + ["fresh"] * (per_iteration - n_para)
        rng.shuffle(kinds)
        introduced: list[tuple[str, float]] = []
        for kind in kinds:
            if kind == "fresh":
                question, _, target = fresh_question()
                stats.fresh += 1
                introduced.append((question, target))
            else:
                source, target = rng.choice(pool)
                question, changed = make_paraphrase(source, embedder,
                                                    delta, rng)
                if changed:
                    stats.paraphrases += 1
                else:
                    stats.exact_dups += 1
            rows.append({"kind": "question", "iteration": iteration,
                         "question": question,
                         "reference": build_reference(question, target)})
        pool.extend(introduced)

    return rows, stats


def write_stream(rows: list[dict], path: str) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True,
                                separators=(",", ":")) + "\n")
