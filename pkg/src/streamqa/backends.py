"""Pluggable embedding, generation, and scoring backends.

Two families ship here: deterministic in-process mocks for tests and replay
runs, and HTTP clients speaking the common OpenAI-style wire shapes
(``/embeddings`` and ``/chat/completions``). Everything implements the small
protocols at the top, so the engine never knows which family it holds.

API keys are never taken as literals; HTTP backends are told the *name* of an
environment variable and read the key from there.
"""

from __future__ import annotations

import json
import os
import threading
import time
import zlib
from collections import Counter
from typing import Callable, Protocol

import httpx
import numpy as np

from .core import Embedding, clamp_score, normalize
from .errors import ConfigError, DegenerateEmbeddingError, ProtocolError, UpstreamError
from .prompts import extract_question


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> Embedding: ...


class GenerationProvider(Protocol):
    def generate(self, prompt: str, temperature: float) -> str: ...


class Scorer(Protocol):
    def score(self, question: str, answer: str, reference: str | None = None) -> float: ...


# -- deterministic mocks -------------------------------------------------------


class MockEmbedder:
    """Signed character-trigram hashing into a fixed-width unit vector.

    Deterministic across processes (crc32, not the salted builtin hash).
    Signs are derived from the hash so unrelated texts land near zero cosine
    instead of sharing a positive bias. Whitespace runs and case are
    canonicalized away, so reformatting a question does not move it.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ConfigError(f"mock embedder needs dim >= 2, got {dim}")
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> Embedding:
        canonical = " ".join(text.lower().split())
        if not canonical:
            raise DegenerateEmbeddingError("cannot embed empty text")
        padded = f"##{canonical}##"
        vec = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(padded) - 2):
            h = zlib.crc32(f"{self.seed}|{padded[i:i + 3]}".encode("utf-8"))
            sign = 1.0 if (h >> 16) & 1 else -1.0
            vec[h % self.dim] += sign
        return normalize(vec)


class MockGenerator:
    """Echoes the prompted question back as a well-formed JSON answer.

    Records every (prompt, temperature) pair under a lock so concurrent
    tests can assert on exactly what was generated, and how often.
    """

    def __init__(self, preamble: str = "mock reply for"):
        self.preamble = preamble
        self._lock = threading.Lock()
        self._calls: list[tuple[str, float]] = []

    def generate(self, prompt: str, temperature: float) -> str:
        question = extract_question(prompt)
        answer = f"{self.preamble} {question}".strip()
        with self._lock:
            self._calls.append((prompt, temperature))
        return json.dumps({"answer": answer})

    @property
    def call_count(self) -> int:
        with self._lock:
            return len(self._calls)

    def calls(self) -> list[tuple[str, float]]:
        with self._lock:
            return list(self._calls)

    def reset(self) -> None:
        with self._lock:
            self._calls.clear()


def _tokens(text: str) -> list[str]:
    out, current = [], []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            out.append("".join(current))
            current = []
    if current:
        out.append("".join(current))
    return out


def token_f1(prediction: str, reference: str) -> float:
    """Multiset token F1 between two texts, in [0, 1]."""
    pred = _tokens(prediction)
    ref = _tokens(reference)
    if not pred or not ref:
        return 1.0 if pred == ref else 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    return 2.0 * overlap / (len(pred) + len(ref))


class LexicalOverlapScorer:
    """Token-F1 against a reference answer when one exists.

    Without a reference it falls back to a crude shape heuristic (question
    coverage plus a length factor). That fallback is a stand-in for a real
    judge, not a quality signal; replay datasets always carry references.
    """

    coverage_weight = 0.6
    length_target = 16

    def score(self, question: str, answer: str, reference: str | None = None) -> float:
        if reference is not None:
            return token_f1(answer, reference)
        answer_tokens = _tokens(answer)
        if not answer_tokens:
            return 0.0
        question_tokens = set(_tokens(question))
        if question_tokens:
            coverage = len(question_tokens & set(answer_tokens)) / len(question_tokens)
        else:
            coverage = 0.0
        length_factor = min(1.0, len(answer_tokens) / self.length_target)
        return clamp_score(self.coverage_weight * coverage
                           + (1.0 - self.coverage_weight) * length_factor)


# -- HTTP backends -------------------------------------------------------------

_RETRY_ATTEMPTS = 3
_RETRY_BASE_DELAY_S = 0.2


def _auth_headers(api_key_env: str | None) -> dict[str, str]:
    if not api_key_env:
        return {}
    key = os.environ.get(api_key_env)
    if not key:
        raise ConfigError(f"environment variable {api_key_env} is not set")
    return {"Authorization": f"Bearer {key}"}


def _post_with_retries(
    client: httpx.Client,
    path: str,
    payload: dict,
    headers: dict[str, str],
    *,
    what: str,
    sleep: Callable[[float], None] = time.sleep,
) -> httpx.Response:
    """POST with up to three attempts.

    Transport failures, 5xx, and 429 are retried with exponential backoff;
    any other non-2xx fails immediately. Exhausting the attempts raises
    UpstreamError carrying the last status, body, and total elapsed time.
    """
    start = time.monotonic()
    failure = "no attempt made"
    status: int | None = None
    body = ""
    for attempt in range(_RETRY_ATTEMPTS):
        try:
            response = client.post(path, json=payload, headers=headers)
        except httpx.TransportError as exc:
            failure = f"{type(exc).__name__}: {exc}"
            status, body = None, ""
        else:
            if response.is_success:
                return response
            status, body = response.status_code, response.text
            failure = f"HTTP {status}"
            if status < 500 and status != 429:
                raise UpstreamError(
                    f"{what} rejected: {failure}", status=status, body=body,
                    elapsed_s=time.monotonic() - start)
        if attempt + 1 < _RETRY_ATTEMPTS:
            sleep(_RETRY_BASE_DELAY_S * (2 ** attempt))
    raise UpstreamError(
        f"{what} failed after {_RETRY_ATTEMPTS} attempts ({failure})",
        status=status, body=body, elapsed_s=time.monotonic() - start)


class HttpEmbedder:
    """OpenAI-style ``POST {base_url}/embeddings`` client.

    Remote vectors are renormalized to unit length on arrival; a vector of
    the wrong width is a protocol violation, not a dimension mismatch inside
    the engine.
    """

    def __init__(self, base_url: str, model: str, dim: int, *,
                 api_key_env: str | None = None, timeout_s: float = 30.0,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.dim = dim
        self.model = model
        self._headers = _auth_headers(api_key_env)
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=base_url.rstrip("/") + "/", timeout=timeout_s,
            transport=transport)

    def embed(self, text: str) -> Embedding:
        response = _post_with_retries(
            self._client, "embeddings", {"model": self.model, "input": text},
            self._headers, what="embedding request", sleep=self._sleep)
        try:
            raw = response.json()["data"][0]["embedding"]
            vec = np.asarray(raw, dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed embeddings response: {exc!r}") from exc
        if vec.ndim != 1 or vec.shape[0] != self.dim:
            raise ProtocolError(
                f"embedding has {vec.shape} values, expected {self.dim}")
        return normalize(vec)

    def close(self) -> None:
        self._client.close()


class HttpGenerator:
    """OpenAI-style ``POST {base_url}/chat/completions`` client."""

    def __init__(self, base_url: str, model: str, *,
                 api_key_env: str | None = None, timeout_s: float = 60.0,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.model = model
        self._headers = _auth_headers(api_key_env)
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=base_url.rstrip("/") + "/", timeout=timeout_s,
            transport=transport)

    def generate(self, prompt: str, temperature: float) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        response = _post_with_retries(
            self._client, "chat/completions", payload, self._headers,
            what="generation request", sleep=self._sleep)
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed completion response: {exc!r}") from exc
        if not isinstance(content, str):
            raise ProtocolError("completion content is not a string")
        return content

    def close(self) -> None:
        self._client.close()
