import threading
import time

from fastapi.testclient import TestClient

from streamqa.backends import LexicalOverlapScorer, MockEmbedder, MockGenerator
from streamqa.core import EngineConfig, TemperatureConfig, Thresholds
from streamqa.engine import Engine
from streamqa.errors import ProtocolError, UpstreamError
from streamqa.service import create_app

DIM = 32


def make_engine(generator=None):
    config = EngineConfig(
        thresholds=Thresholds(tau=0.75, delta=0.9, gamma=0.6),
        temperature=TemperatureConfig(),
        embedding_dim=DIM,
    )
    return Engine(config, MockEmbedder(dim=DIM), generator or MockGenerator(),
                  LexicalOverlapScorer())


def make_client(generator=None):
    engine = make_engine(generator)
    return engine, TestClient(create_app(engine))


def echo_for(question):
    return f"mock reply for {question}"


class TestAskEndpoint:
    def test_first_ask_generates(self):
        _, client = make_client()
        question = "how do i rotate the logs"
        response = client.post("/ask", json={"question": question,
                                             "reference": echo_for(question)})
        assert response.status_code == 200
        body = response.json()
        assert body["answer"] == echo_for(question)
        assert body["path"] == "generate_low_kb"
        assert body["best_similarity"] is None
        assert body["score"] == 1.0
        assert body["temperature"] == 0.7
        assert body["parse_fallback"] is False
        assert isinstance(body["question_id"], int)
        assert body["evidence"] == []
        assert body["latency_s"] >= 0.0

    def test_repeat_ask_reuses(self):
        _, client = make_client()
        question = "how do i rotate the logs"
        first = client.post("/ask", json={"question": question,
                                          "reference": echo_for(question)}).json()
        second = client.post("/ask", json={"question": question}).json()
        assert second["path"] == "reuse_high"
        assert second["question_id"] == first["question_id"]
        assert second["temperature"] is None
        assert second["best_similarity"] > 0.999
        assert len(second["evidence"]) == 1
        assert second["evidence"][0]["kind"] == "qa"
        assert second["evidence"][0]["answer"] == first["answer"]

    def test_evidence_includes_documents_on_knowledge_path(self):
        engine, client = make_client()
        engine.add_knowledge("rotation is configured in logrotate.conf")
        body = client.post("/ask", json={"question": "how do i rotate the logs"}).json()
        kinds = {entry["kind"] for entry in body["evidence"]}
        assert "doc" in kinds
        doc = next(e for e in body["evidence"] if e["kind"] == "doc")
        assert doc["doc_id"] == 0
        assert "logrotate.conf" in doc["snippet"]

    def test_empty_question_is_400(self):
        _, client = make_client()
        response = client.post("/ask", json={"question": "   "})
        assert response.status_code == 400

    def test_missing_question_is_400(self):
        _, client = make_client()
        response = client.post("/ask", json={"reference": "x"})
        assert response.status_code == 400

    def test_wrong_type_is_400(self):
        _, client = make_client()
        response = client.post("/ask", json={"question": 42})
        assert response.status_code == 400

    def test_malformed_body_is_400(self):
        _, client = make_client()
        response = client.post(
            "/ask", content=b"{not json",
            headers={"content-type": "application/json"})
        assert response.status_code == 400

    def test_upstream_failure_is_502(self):
        class FailingGenerator:
            def generate(self, prompt, temperature):
                raise UpstreamError("generation failed after 3 attempts",
                                    status=503, body="overloaded", elapsed_s=1.5)

        _, client = make_client(FailingGenerator())
        response = client.post("/ask", json={"question": "anything new"})
        assert response.status_code == 502
        body = response.json()
        assert body["upstream_status"] == 503
        assert body["elapsed_s"] == 1.5

    def test_protocol_failure_is_502(self):
        class WeirdGenerator:
            def generate(self, prompt, temperature):
                raise ProtocolError("completion content is not a string")

        _, client = make_client(WeirdGenerator())
        response = client.post("/ask", json={"question": "anything new"})
        assert response.status_code == 502

    def test_failed_requests_do_not_count(self):
        class FailingGenerator:
            def generate(self, prompt, temperature):
                raise UpstreamError("down", status=500)

        _, client = make_client(FailingGenerator())
        client.post("/ask", json={"question": "anything new"})
        stats = client.get("/stats").json()
        assert stats["requests"]["total"] == 0


class TestFeedbackEndpoint:
    def ask(self, client, question, reference=None):
        return client.post("/ask", json={
            "question": question,
            "reference": reference or echo_for(question)}).json()

    def test_demotion_moves_answer(self):
        engine, client = make_client()
        asked = self.ask(client, "how do i rotate the logs")
        response = client.post("/feedback", json={
            "question_id": asked["question_id"], "score": 0.1})
        assert response.status_code == 200
        body = response.json()
        assert body["moved"] is True
        assert body["stored"] is True
        assert body["tier"] == "low"
        assert body["new_question_id"] != asked["question_id"]
        assert engine.stats().low.member_count == 1
        assert engine.stats().high.member_count == 0

    def test_same_tier_rescore(self):
        _, client = make_client()
        asked = self.ask(client, "how do i rotate the logs")
        response = client.post("/feedback", json={
            "question_id": asked["question_id"], "score": 0.8})
        body = response.json()
        assert body["moved"] is False
        assert body["tier"] == "high"
        assert body["new_question_id"] == asked["question_id"]

    def test_old_id_gone_after_move(self):
        _, client = make_client()
        asked = self.ask(client, "how do i rotate the logs")
        client.post("/feedback", json={"question_id": asked["question_id"],
                                       "score": 0.1})
        again = client.post("/feedback", json={"question_id": asked["question_id"],
                                               "score": 0.5})
        assert again.status_code == 404

    def test_out_of_range_score_is_400(self):
        _, client = make_client()
        asked = self.ask(client, "how do i rotate the logs")
        for bad in (1.5, -0.1):
            response = client.post("/feedback", json={
                "question_id": asked["question_id"], "score": bad})
            assert response.status_code == 400

    def test_unknown_id_is_404(self):
        _, client = make_client()
        response = client.post("/feedback", json={"question_id": 999, "score": 0.4})
        assert response.status_code == 404


class TestStatsEndpoint:
    def test_initial_state(self):
        _, client = make_client()
        body = client.get("/stats").json()
        assert body["kb_size"] == 0
        assert body["qa_total"] == 0
        assert body["requests"]["total"] == 0
        assert body["requests"]["reuse_ratio"] == 0.0

    def test_counters_track_requests(self):
        engine, client = make_client()
        engine.add_knowledge("some background passage")
        q1, q2 = "first unique question", "second unique question"
        client.post("/ask", json={"question": q1, "reference": echo_for(q1)})
        client.post("/ask", json={"question": q2, "reference": echo_for(q2)})
        client.post("/ask", json={"question": q1})
        body = client.get("/stats").json()
        assert body["kb_size"] == 1
        assert body["qa_total"] == 2
        assert body["requests"]["total"] == 3
        assert body["requests"]["path_counts"]["reuse_high"] == 1
        assert body["requests"]["path_counts"]["generate_low_kb"] == 2
        assert body["requests"]["reuse_ratio"] == 1 / 3
        assert body["requests"]["avg_latency_s"] >= 0.0
        assert body["high"]["member_count"] == 2


class TestConcurrency:
    def test_parallel_requests_stay_consistent(self):
        engine, client = make_client()
        question = "the one shared question"
        statuses = []
        lock = threading.Lock()

        def worker():
            for _ in range(4):
                response = client.post("/ask", json={
                    "question": question, "reference": echo_for(question)})
                with lock:
                    statuses.append(response.status_code)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        assert statuses == [200] * 32
        stats = client.get("/stats").json()
        counts = stats["requests"]["path_counts"]
        assert stats["requests"]["total"] == 32
        assert sum(counts.values()) == 32
        assert engine.generator.call_count == 32 - counts["reuse_high"]
        engine.memory.high.check_consistency()
        engine.memory.low.check_consistency()


class TestAutosave:
    def test_background_snapshot_written(self, tmp_path):
        engine = make_engine()
        path = str(tmp_path / "auto.snap")
        app = create_app(engine, snapshot_path=path, autosave_interval_s=0.05)
        with TestClient(app) as client:
            question = "a question worth keeping"
            client.post("/ask", json={"question": question,
                                      "reference": echo_for(question)})
            deadline = time.monotonic() + 5.0
            import os
            while not os.path.exists(path) and time.monotonic() < deadline:
                time.sleep(0.02)
            assert os.path.exists(path)
        fresh = make_engine()
        fresh.load_snapshot(path)
        assert fresh.stats().qa_total >= 0
