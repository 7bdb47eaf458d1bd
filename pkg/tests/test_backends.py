import json
import threading
import zlib

import httpx
import numpy as np
import pytest

from streamqa.backends import (
    HttpEmbedder,
    HttpGenerator,
    LexicalOverlapScorer,
    MockEmbedder,
    MockGenerator,
    token_f1,
)
from streamqa.core import cosine_similarity
from streamqa.errors import (
    ConfigError,
    DegenerateEmbeddingError,
    ProtocolError,
    UpstreamError,
)


class TestMockEmbedder:
    def test_deterministic_across_instances(self):
        a = MockEmbedder(dim=32, seed=4).embed("how do i restart the server")
        b = MockEmbedder(dim=32, seed=4).embed("how do i restart the server")
        assert np.array_equal(a.values, b.values)

    def test_unit_norm(self):
        emb = MockEmbedder(dim=64).embed("some text")
        assert abs(float(np.linalg.norm(emb.values)) - 1.0) < 1e-9

    def test_case_and_whitespace_canonicalized(self):
        embedder = MockEmbedder(dim=64)
        a = embedder.embed("Hello   World")
        b = embedder.embed("hello world")
        c = embedder.embed("  hello\tworld \n")
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.values, c.values)

    def test_seed_changes_vectors(self):
        a = MockEmbedder(dim=64, seed=0).embed("hello world")
        b = MockEmbedder(dim=64, seed=1).embed("hello world")
        assert not np.array_equal(a.values, b.values)

    def test_empty_text_rejected(self):
        embedder = MockEmbedder(dim=64)
        with pytest.raises(DegenerateEmbeddingError):
            embedder.embed("")
        with pytest.raises(DegenerateEmbeddingError):
            embedder.embed("   \n\t ")

    def test_tiny_dim_rejected(self):
        with pytest.raises(ConfigError):
            MockEmbedder(dim=1)

    def test_matches_trigram_hash_reference(self):
        # recompute the expected vector for a short string the long way
        dim, seed = 16, 3
        padded = "##ab##"
        expected = np.zeros(dim)
        for i in range(len(padded) - 2):
            h = zlib.crc32(f"{seed}|{padded[i:i + 3]}".encode("utf-8"))
            expected[h % dim] += 1.0 if (h >> 16) & 1 else -1.0
        expected = expected / np.linalg.norm(expected)
        got = MockEmbedder(dim=dim, seed=seed).embed("ab")
        np.testing.assert_allclose(got.values, expected, atol=1e-12)

    def test_similar_texts_score_higher_than_unrelated(self):
        embedder = MockEmbedder(dim=64)
        base = embedder.embed("how do i restart the database server")
        close = embedder.embed("how do i restart a database server")
        far = embedder.embed("what is the capital city of france")
        assert cosine_similarity(base, close) > cosine_similarity(base, far)

    def test_unrelated_texts_near_zero(self):
        embedder = MockEmbedder(dim=64)
        a = embedder.embed("how do i restart the database server")
        b = embedder.embed("what is the capital city of france")
        assert abs(cosine_similarity(a, b)) < 0.5


class TestMockGenerator:
    def test_echoes_question_as_json(self):
        gen = MockGenerator()
        reply = gen.generate("### Question\nwhat time is it?", 0.9)
        assert json.loads(reply) == {"answer": "mock reply for what time is it?"}

    def test_captures_prompt_and_temperature(self):
        gen = MockGenerator()
        gen.generate("### Question\nq1", 0.7)
        gen.generate("### Question\nq2", 1.2)
        assert gen.call_count == 2
        assert gen.calls()[0] == ("### Question\nq1", 0.7)
        assert gen.calls()[1][1] == 1.2

    def test_reset_clears_capture(self):
        gen = MockGenerator()
        gen.generate("### Question\nq", 0.7)
        gen.reset()
        assert gen.call_count == 0

    def test_capture_is_thread_safe(self):
        gen = MockGenerator()

        def hammer():
            for i in range(50):
                gen.generate(f"### Question\nq{i}", 0.7)

        threads = [threading.Thread(target=hammer) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert gen.call_count == 400


class TestTokenF1:
    def test_identical_texts(self):
        assert token_f1("the answer is yes", "the answer is yes") == 1.0

    def test_disjoint_texts(self):
        assert token_f1("alpha beta", "gamma delta") == 0.0

    def test_partial_overlap(self):
        assert token_f1("a b c", "a b d") == pytest.approx(2 / 3)

    def test_multiset_counting(self):
        # overlap counts min occurrences per token: min(2,1) + min(1,2) = 2
        assert token_f1("a a b", "a b b") == pytest.approx(2 / 3)

    def test_empty_handling(self):
        assert token_f1("", "") == 1.0
        assert token_f1("something", "") == 0.0
        assert token_f1("", "something") == 0.0
        assert token_f1("...", "!!!") == 1.0

    def test_punctuation_and_case_ignored(self):
        assert token_f1("The Answer, is YES!", "the answer is yes") == 1.0

    def test_symmetry(self):
        import random
        rng = random.Random(6)
        vocab = ["red", "green", "blue", "cyan", "teal"]
        for _ in range(50):
            a = " ".join(rng.choices(vocab, k=rng.randint(1, 8)))
            b = " ".join(rng.choices(vocab, k=rng.randint(1, 8)))
            assert token_f1(a, b) == pytest.approx(token_f1(b, a), abs=1e-12)


class TestLexicalOverlapScorer:
    def test_reference_route_is_token_f1(self):
        scorer = LexicalOverlapScorer()
        got = scorer.score("q", "a b c", reference="a b d")
        assert got == pytest.approx(token_f1("a b c", "a b d"))

    def test_heuristic_empty_answer_scores_zero(self):
        assert LexicalOverlapScorer().score("any question", "") == 0.0

    def test_heuristic_rewards_coverage(self):
        scorer = LexicalOverlapScorer()
        question = "how do i mount a docker volume"
        covering = scorer.score(question, "you mount a docker volume with the -v flag")
        unrelated = scorer.score(question, "bananas are yellow")
        assert covering > unrelated

    def test_heuristic_stays_in_range(self):
        scorer = LexicalOverlapScorer()
        long_answer = " ".join(["word"] * 100)
        for answer in ("", "short", long_answer):
            assert 0.0 <= scorer.score("a question here", answer) <= 1.0


def embed_response(vector):
    return httpx.Response(200, json={"data": [{"embedding": list(vector)}]})


def completion_response(content):
    return httpx.Response(
        200, json={"choices": [{"message": {"role": "assistant",
                                            "content": content}}]})


class RecordingSleep:
    def __init__(self):
        self.delays = []

    def __call__(self, seconds):
        self.delays.append(seconds)


class TestHttpEmbedder:
    def test_happy_path_normalizes_and_checks_wire_shape(self):
        seen = {}

        def handler(request):
            seen["path"] = request.url.path
            seen["payload"] = json.loads(request.content)
            seen["auth"] = request.headers.get("authorization")
            return embed_response([3.0, 4.0, 0.0, 0.0])

        embedder = HttpEmbedder(
            "http://test/v1", "embed-model", 4,
            transport=httpx.MockTransport(handler))
        emb = embedder.embed("hello")
        np.testing.assert_allclose(emb.values, [0.6, 0.8, 0.0, 0.0], atol=1e-12)
        assert seen["path"] == "/v1/embeddings"
        assert seen["payload"] == {"model": "embed-model", "input": "hello"}
        assert seen["auth"] is None

    def test_bearer_header_from_env(self, monkeypatch):
        monkeypatch.setenv("TEST_API_KEY", "sekrit")
        seen = {}

        def handler(request):
            seen["auth"] = request.headers["authorization"]
            return embed_response([1.0, 0.0])

        embedder = HttpEmbedder(
            "http://test/v1", "m", 2, api_key_env="TEST_API_KEY",
            transport=httpx.MockTransport(handler))
        embedder.embed("x")
        assert seen["auth"] == "Bearer sekrit"

    def test_missing_key_env_rejected_at_construction(self, monkeypatch):
        monkeypatch.delenv("TOTALLY_UNSET_KEY", raising=False)
        with pytest.raises(ConfigError):
            HttpEmbedder("http://test/v1", "m", 2, api_key_env="TOTALLY_UNSET_KEY")

    def test_retries_through_transient_500(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] < 3:
                return httpx.Response(500, text="boom")
            return embed_response([1.0, 0.0])

        sleep = RecordingSleep()
        embedder = HttpEmbedder(
            "http://test/v1", "m", 2,
            transport=httpx.MockTransport(handler), sleep=sleep)
        emb = embedder.embed("x")
        assert calls["n"] == 3
        assert sleep.delays == [0.2, 0.4]
        np.testing.assert_allclose(emb.values, [1.0, 0.0])

    def test_retries_429(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] == 1:
                return httpx.Response(429, text="slow down")
            return embed_response([1.0, 0.0])

        embedder = HttpEmbedder(
            "http://test/v1", "m", 2,
            transport=httpx.MockTransport(handler), sleep=RecordingSleep())
        embedder.embed("x")
        assert calls["n"] == 2

    def test_client_error_fails_without_retry(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(400, text="bad request body")

        embedder = HttpEmbedder(
            "http://test/v1", "m", 2,
            transport=httpx.MockTransport(handler), sleep=RecordingSleep())
        with pytest.raises(UpstreamError) as info:
            embedder.embed("x")
        assert calls["n"] == 1
        assert info.value.status == 400
        assert "bad request body" in info.value.body

    def test_exhausted_retries_surface_last_status(self):
        def handler(request):
            return httpx.Response(503, text="x" * 1000)

        sleep = RecordingSleep()
        embedder = HttpEmbedder(
            "http://test/v1", "m", 2,
            transport=httpx.MockTransport(handler), sleep=sleep)
        with pytest.raises(UpstreamError) as info:
            embedder.embed("x")
        assert info.value.status == 503
        assert len(info.value.body) == 500
        assert info.value.elapsed_s >= 0.0
        assert sleep.delays == [0.2, 0.4]

    def test_transport_errors_retried_then_raised(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            raise httpx.ConnectError("connection refused")

        embedder = HttpEmbedder(
            "http://test/v1", "m", 2,
            transport=httpx.MockTransport(handler), sleep=RecordingSleep())
        with pytest.raises(UpstreamError) as info:
            embedder.embed("x")
        assert calls["n"] == 3
        assert info.value.status is None
        assert "ConnectError" in str(info.value)

    def test_malformed_payload_is_protocol_error(self):
        embedder = HttpEmbedder(
            "http://test/v1", "m", 2,
            transport=httpx.MockTransport(
                lambda request: httpx.Response(200, json={"data": []})))
        with pytest.raises(ProtocolError):
            embedder.embed("x")

    def test_wrong_width_vector_is_protocol_error(self):
        embedder = HttpEmbedder(
            "http://test/v1", "m", 4,
            transport=httpx.MockTransport(
                lambda request: embed_response([1.0, 0.0])))
        with pytest.raises(ProtocolError):
            embedder.embed("x")


class TestHttpGenerator:
    def test_happy_path_sends_temperature_and_extracts_content(self):
        seen = {}

        def handler(request):
            seen["path"] = request.url.path
            seen["payload"] = json.loads(request.content)
            return completion_response('{"answer": "yes"}')

        gen = HttpGenerator(
            "http://test/v1", "chat-model",
            transport=httpx.MockTransport(handler))
        reply = gen.generate("the prompt", 0.85)
        assert reply == '{"answer": "yes"}'
        assert seen["path"] == "/v1/chat/completions"
        assert seen["payload"]["model"] == "chat-model"
        assert seen["payload"]["temperature"] == 0.85
        assert seen["payload"]["messages"] == [
            {"role": "user", "content": "the prompt"}]

    def test_malformed_completion_is_protocol_error(self):
        gen = HttpGenerator(
            "http://test/v1", "m",
            transport=httpx.MockTransport(
                lambda request: httpx.Response(200, json={"choices": []})))
        with pytest.raises(ProtocolError):
            gen.generate("p", 0.7)

    def test_non_string_content_is_protocol_error(self):
        gen = HttpGenerator(
            "http://test/v1", "m",
            transport=httpx.MockTransport(
                lambda request: completion_response(None)))
        with pytest.raises(ProtocolError):
            gen.generate("p", 0.7)

    def test_server_errors_exhaust_to_upstream_error(self):
        def handler(request):
            return httpx.Response(502, text="bad gateway")

        gen = HttpGenerator(
            "http://test/v1", "m",
            transport=httpx.MockTransport(handler), sleep=RecordingSleep())
        with pytest.raises(UpstreamError) as info:
            gen.generate("p", 0.7)
        assert info.value.status == 502
