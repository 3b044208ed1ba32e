import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from ambigmt.corpus import tokenize
from ambigmt.mt_client import (ClientConfig, HttpTranslationEngine,
                               MockNeutralizingEngine, RateLimitedError,
                               TranslationCache, TranslationError,
                               TranslationRequest, build_pseudo_parallel,
                               translate_batch)

from conftest import caption

NO_SLEEP = lambda _: None  # noqa: E731


class FailingEngine:
    """Counts calls; fails permanently on configured texts."""

    engine_id = "failing"

    def __init__(self, fail_on=(), fail_times=0):
        self.fail_on = set(fail_on)
        self.fail_times = fail_times
        self.n_calls = 0

    def translate_many(self, texts, src_lang, tgt_lang):
        self.n_calls += 1
        if any(t in self.fail_on for t in texts):
            raise TranslationError("permanent failure")
        if self.n_calls <= self.fail_times:
            raise TranslationError("transient failure")
        return [t.upper() for t in texts]


class TestRequestValidation:
    def test_same_language_rejected(self):
        with pytest.raises(ValueError):
            TranslationRequest("hi", "en", "en")

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            TranslationRequest("", "en", "tr")


class TestMockEngine:
    def test_neutralizes_pronouns(self):
        engine = MockNeutralizingEngine()
        out = engine.translate_many(["he sits on his chair"], "en", "tr")
        assert out == ["o sits on o chair"]

    def test_both_genders_collapse(self):
        engine = MockNeutralizingEngine()
        a = engine.translate_many(["He reads his book."], "en", "tr")
        b = engine.translate_many(["She reads her book."], "en", "tr")
        assert a == b == ["o reads o book ."]


class TestTranslateBatch:
    def _requests(self, texts):
        return [TranslationRequest(t, "en", "tr") for t in texts]

    def test_cache_hit_skips_engine(self, tmp_path):
        cache = TranslationCache(tmp_path / "cache.jsonl")
        requests = self._requests(["he sits", "she reads"])
        translate_batch(MockNeutralizingEngine(), requests, cache)

        fresh = MockNeutralizingEngine()
        results = translate_batch(fresh, requests, cache)
        assert fresh.n_calls == 0
        assert all(r.ok and r.from_cache for r in results)
        assert results[0].translation == "o sits"

    def test_cache_persists_across_reopen(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        requests = self._requests(["he sits"])
        translate_batch(MockNeutralizingEngine(), requests, TranslationCache(path))

        reopened = TranslationCache(path)
        fresh = MockNeutralizingEngine()
        translate_batch(fresh, requests, reopened)
        assert fresh.n_calls == 0
        assert reopened.hits == 1

    def test_per_item_failure_does_not_abort(self):
        engine = FailingEngine(fail_on={"bad"})
        requests = self._requests(["one", "bad", "three"])
        results = translate_batch(engine, requests, config=ClientConfig(chunk_size=1),
                                  sleep=NO_SLEEP)
        assert [r.ok for r in results] == [True, False, True]
        assert results[1].error is not None
        assert results[0].translation == "ONE"

    def test_output_order_matches_input(self):
        requests = self._requests([f"text {i}" for i in range(10)])
        results = translate_batch(MockNeutralizingEngine(), requests,
                                  config=ClientConfig(chunk_size=3, max_in_flight=4))
        assert [r.request.text for r in results] == [r.text for r in requests]

    def test_retry_with_backoff_then_success(self):
        engine = FailingEngine(fail_times=2)
        pauses = []
        results = translate_batch(engine, self._requests(["x"]),
                                  config=ClientConfig(max_retries=3),
                                  sleep=pauses.append)
        assert results[0].ok and results[0].attempts == 3
        assert pauses == [0.5, 1.0]

    def test_retries_exhausted_reports_error(self):
        engine = FailingEngine(fail_on={"x"})
        results = translate_batch(engine, self._requests(["x"]),
                                  config=ClientConfig(max_retries=2),
                                  sleep=NO_SLEEP)
        assert not results[0].ok
        assert results[0].attempts == 3  # 1 initial + 2 retries
        assert engine.n_calls == 3

    def test_rate_limit_pause_respected(self):
        class QuotaEngine:
            engine_id = "quota"

            def __init__(self):
                self.n_calls = 0

            def translate_many(self, texts, src_lang, tgt_lang):
                self.n_calls += 1
                if self.n_calls == 1:
                    raise RateLimitedError("quota", retry_after=2.5)
                return list(texts)

        pauses = []
        results = translate_batch(QuotaEngine(), self._requests(["x"]),
                                  sleep=pauses.append)
        assert results[0].ok
        assert pauses == [2.5]


class TestBuildPseudoParallel:
    def test_single_caption(self):
        out = build_pseudo_parallel([caption("c1", "He sits on his chair.", "img-1")],
                                    MockNeutralizingEngine())
        assert len(out) == 1
        ex = out[0]
        assert ex.source == ("o", "sits", "on", "o", "chair", ".")
        assert ex.target == tuple(tokenize("He sits on his chair."))
        assert ex.image_id == "img-1"

    def test_empty_corpus(self):
        assert build_pseudo_parallel([], MockNeutralizingEngine()) == []

    def test_target_side_kept_verbatim(self):
        corpus = [caption(str(i), f"She waves at crowd number {i}.") for i in range(20)]
        out = build_pseudo_parallel(corpus, MockNeutralizingEngine())
        for cap, ex in zip(corpus, out):
            assert ex.target == tuple(tokenize(cap.text))

    def test_injected_failures_dropped_with_count(self, caplog):
        corpus = [caption(f"c{i}", f"a person walks {i}") for i in range(100)]
        bad_texts = {corpus[i].text for i in (7, 42, 99)}
        engine = FailingEngine(fail_on=bad_texts)
        with caplog.at_level(logging.WARNING):
            out = build_pseudo_parallel(corpus, engine,
                                        config=ClientConfig(chunk_size=1),
                                        sleep=NO_SLEEP)
        assert len(out) == 97
        surviving = {ex.id for ex in out}
        assert {"c7", "c42", "c99"}.isdisjoint(surviving)
        assert "dropped 3 of 100" in caplog.text

    def test_deterministic_output(self):
        corpus = [caption(str(i), f"he walks his dog {i}") for i in range(30)]
        first = build_pseudo_parallel(corpus, MockNeutralizingEngine())
        second = build_pseudo_parallel(corpus, MockNeutralizingEngine())
        assert first == second

    def test_second_run_serves_from_cache(self, tmp_path):
        cache = TranslationCache(tmp_path / "cache.jsonl")
        corpus = [caption(str(i), f"she paints wall {i}") for i in range(25)]
        build_pseudo_parallel(corpus, MockNeutralizingEngine(), cache)

        fresh = MockNeutralizingEngine()
        before_hits = cache.hits
        out = build_pseudo_parallel(corpus, fresh, cache)
        assert fresh.n_calls == 0
        assert cache.hits - before_hits == 25
        assert len(out) == 25


class _FakeMtHandler(BaseHTTPRequestHandler):
    failures_left = 0

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.path == "/ratelimited":
            self.send_response(429)
            self.send_header("Retry-After", "3")
            self.end_headers()
            return
        if self.path == "/flaky" and type(self).failures_left > 0:
            type(self).failures_left -= 1
            self.send_response(500)
            self.end_headers()
            return
        payload = {"translations": [t[::-1] for t in body["texts"]]}
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def fake_service():
    server = HTTPServer(("127.0.0.1", 0), _FakeMtHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestHttpEngine:
    def test_round_trip(self, fake_service):
        engine = HttpTranslationEngine(fake_service + "/translate")
        assert engine.translate_many(["abc", "xy"], "en", "tr") == ["cba", "yx"]

    def test_rate_limit_mapped(self, fake_service):
        engine = HttpTranslationEngine(fake_service + "/ratelimited")
        with pytest.raises(RateLimitedError) as err:
            engine.translate_many(["abc"], "en", "tr")
        assert err.value.retry_after == 3.0

    def test_server_errors_retried_by_client(self, fake_service):
        _FakeMtHandler.failures_left = 2
        engine = HttpTranslationEngine(fake_service + "/flaky")
        results = translate_batch(
            engine, [TranslationRequest("abc", "en", "tr")], sleep=NO_SLEEP)
        assert results[0].ok
        assert results[0].translation == "cba"
        assert results[0].attempts == 3

    def test_unreachable_engine_reports_error(self):
        engine = HttpTranslationEngine("http://127.0.0.1:9/translate",
                                       timeout=0.2)
        results = translate_batch(
            engine, [TranslationRequest("abc", "en", "tr")],
            config=ClientConfig(max_retries=1), sleep=NO_SLEEP)
        assert not results[0].ok
        assert "unreachable" in results[0].error
