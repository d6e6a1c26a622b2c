import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from utilrag.errors import InputError, MalformedResponse, RemoteUnavailable
from utilrag.oracle import (
    CountingOracle,
    DiskCache,
    GenRequest,
    MockOracle,
    OracleConfig,
    RemoteOracle,
    RetryableError,
    ScoreRequest,
    ScoreResponse,
    make_oracle,
    request_hash,
)
from utilrag.prompts import render_qa, render_summary, utility_prompt_prefix
from utilrag.records import EMPTY_STRING_DOC, Document

GOLD = {"gold_answers": ["New Jersey"], "question": "Where was he born?"}
HIT_DOC = Document("d1", "Bayonne", "He was born in Bayonne, New Jersey.")
MISS_DOC = Document("d2", "Writer", "He is a writer.")


def score(oracle, doc, meta=GOLD, answer="New Jersey"):
    return oracle.score_continuation(ScoreRequest(utility_prompt_prefix(meta["question"], doc), answer, meta))


class TestMockScoring:
    def test_rule_table(self):
        m = MockOracle({"Where was he born?": "New Jersey"})
        plain = MockOracle()
        assert score(plain, HIT_DOC).total_logprob == -1.0
        assert score(plain, MISS_DOC).total_logprob == -5.0
        assert score(plain, EMPTY_STRING_DOC).total_logprob == -3.0
        assert score(plain, None).total_logprob == -3.0
        assert score(m, EMPTY_STRING_DOC).total_logprob == -0.5

    def test_parametric_answer_must_match_gold(self):
        m = MockOracle({"Where was he born?": "Ohio"})
        assert score(m, EMPTY_STRING_DOC).total_logprob == -3.0

    def test_tokens_share_total(self):
        r = score(MockOracle(), HIT_DOC)
        assert r.token_logprobs == (-0.5, -0.5)
        assert r.mean_logprob == -0.5

    def test_falls_back_to_continuation(self):
        r = MockOracle().score_continuation(ScoreRequest(utility_prompt_prefix("q", HIT_DOC), "Bayonne"))
        assert r.total_logprob == -1.0

    def test_pure(self):
        a, b = MockOracle(), MockOracle()
        for doc in (HIT_DOC, MISS_DOC, EMPTY_STRING_DOC):
            assert score(a, doc) == score(b, doc)


class TestMockGeneration:
    def test_answers_from_info(self):
        meta = {"gold_answers": ["Paris", "New Jersey"], "question": "q"}
        out = MockOracle().generate(GenRequest(render_qa("q", "Born in New Jersey."), 16, 0, meta))
        assert out == "New Jersey"

    def test_unknown_without_info(self):
        meta = {"gold_answers": ["Paris"], "question": "Capital of France?"}
        assert MockOracle().generate(GenRequest(render_qa("Capital of France?", ""), 16, 0, meta)) == "unknown"

    def test_parametric_without_info(self):
        meta = {"gold_answers": ["Paris"], "question": "Capital of France?"}
        m = MockOracle({"capital of france": "Paris"})
        assert m.generate(GenRequest(render_qa("Capital of France?", ""), 16, 0, meta)) == "Paris"

    def test_teacher_summary_picks_gold_sentence(self):
        docs = [MISS_DOC, HIT_DOC]
        out = MockOracle().generate(GenRequest(render_summary("Where?", docs), 64, 0, GOLD))
        assert out == "He was born in Bayonne, New Jersey."

    def test_deterministic(self):
        req = GenRequest(render_qa("q", "Born in New Jersey."), 16, 3, GOLD)
        assert MockOracle().generate(req) == MockOracle().generate(req)

    def test_truncates_to_max_tokens(self):
        meta = {"gold_answers": ["A Song of Ice and Fire"], "question": "q"}
        out = MockOracle().generate(GenRequest(render_qa("q", "A Song of Ice and Fire"), 2, 0, meta))
        assert out == "A Song"


class TestRequestTypes:
    def test_empty_continuation(self):
        with pytest.raises(InputError):
            ScoreRequest("p", "")

    def test_bad_max_tokens(self):
        with pytest.raises(InputError):
            GenRequest("p", 0)

    def test_response_invariants(self):
        with pytest.raises(MalformedResponse):
            ScoreResponse((-1.0, 0.5), -0.5)
        with pytest.raises(MalformedResponse):
            ScoreResponse((-1.0,), -2.0)
        r = ScoreResponse.from_tokens([-0.1, -0.2, -0.3])
        assert abs(r.total_logprob - (-0.6)) <= 1e-9

    def test_hash_ignores_metadata(self):
        a = ScoreRequest("p", "c", {"x": 1})
        b = ScoreRequest("p", "c", {"x": 2})
        assert a == b
        assert request_hash({"k": 1, "j": 2}) == request_hash({"j": 2, "k": 1})


class FakeEndpoint:
    """Echo-scoring endpoint that records traffic and concurrency."""

    def __init__(self, fail_first=0, payload=None, delay=0.0):
        self.calls = 0
        self.fail_first = fail_first
        self.payload = payload
        self.delay = delay
        self.in_flight = 0
        self.peak = 0
        self.lock = threading.Lock()
        self.headers = None

    def __call__(self, url, body, headers, timeout):
        with self.lock:
            self.calls += 1
            n = self.calls
            self.in_flight += 1
            self.peak = max(self.peak, self.in_flight)
            self.headers = headers
        try:
            if self.delay:
                time.sleep(self.delay)
            if n <= self.fail_first:
                raise RetryableError("HTTP 503")
            if self.payload is not None:
                return self.payload
            if "continuation" in body:
                return {"token_logprobs": [-0.25] * len(body["continuation"].split())}
            return {"choices": [{"text": "Paris \n"}]}
        finally:
            with self.lock:
                self.in_flight -= 1


class TestRemote:
    def test_score_and_generate(self):
        ep = FakeEndpoint()
        r = RemoteOracle("http://x", transport=ep)
        assert r.score_continuation(ScoreRequest("p", "two words")).total_logprob == -0.5
        assert r.generate(GenRequest("p", 4)) == "Paris \n"

    def test_auth_header(self):
        ep = FakeEndpoint()
        RemoteOracle("http://x", token="sekret", transport=ep).generate(GenRequest("p"))
        assert ep.headers["Authorization"] == "Bearer sekret"

    def test_retries_then_succeeds(self):
        ep = FakeEndpoint(fail_first=2)
        r = RemoteOracle("http://x", retries=2, backoff=0.0, transport=ep)
        r.generate(GenRequest("p"))
        assert ep.calls == 3

    def test_gives_up_after_retries(self):
        ep = FakeEndpoint(fail_first=100)
        r = RemoteOracle("http://x", retries=2, backoff=0.0, transport=ep)
        with pytest.raises(RemoteUnavailable):
            r.generate(GenRequest("p"))
        assert ep.calls == 3

    @pytest.mark.parametrize(
        "payload",
        [
            {},
            {"token_logprobs": []},
            {"token_logprobs": ["x"]},
            {"token_logprobs": [0.5]},
            {"token_logprobs": [float("nan")]},
            {"choices": []},
        ],
    )
    def test_malformed_scores(self, payload):
        r = RemoteOracle("http://x", transport=FakeEndpoint(payload=payload))
        with pytest.raises(MalformedResponse):
            r.score_continuation(ScoreRequest("p", "c"))

    def test_malformed_text(self):
        r = RemoteOracle("http://x", transport=FakeEndpoint(payload={"text": 3}))
        with pytest.raises(MalformedResponse):
            r.generate(GenRequest("p"))

    def test_completion_style_logprobs(self):
        payload = {"choices": [{"logprobs": {"token_logprobs": [-1.0, -2.0]}}]}
        r = RemoteOracle("http://x", transport=FakeEndpoint(payload=payload))
        assert r.score_continuation(ScoreRequest("p", "c")).total_logprob == -3.0

    def test_parallelism_bounded(self):
        ep = FakeEndpoint(delay=0.02)
        r = RemoteOracle("http://x", max_parallel=3, transport=ep)
        with ThreadPoolExecutor(max_workers=12) as pool:
            list(pool.map(lambda i: r.generate(GenRequest(f"p{i}")), range(24)))
        assert ep.calls == 24
        assert 1 <= ep.peak <= 3

    def test_disk_cache_round_trip(self, tmp_path):
        ep = FakeEndpoint()
        cache = DiskCache(tmp_path)
        r = RemoteOracle("http://x", cache=cache, transport=ep)
        req = ScoreRequest("prompt", "an answer")
        first = r.score_continuation(req)
        files = sorted(p.read_bytes() for p in tmp_path.glob("*.json"))
        r.evict_memory()
        again = r.score_continuation(req)
        assert again == first
        assert ep.calls == 1
        assert cache.hits == 1
        fresh = RemoteOracle("http://x", cache=DiskCache(tmp_path), transport=ep)
        assert fresh.score_continuation(req) == first
        assert ep.calls == 1
        assert sorted(p.read_bytes() for p in tmp_path.glob("*.json")) == files

    def test_cache_layout(self, tmp_path):
        RemoteOracle("http://x", cache=DiskCache(tmp_path), transport=FakeEndpoint()).generate(GenRequest("p"))
        (path,) = list(tmp_path.glob("*.json"))
        record = json.loads(path.read_text())
        assert set(record) == {"request", "response"}
        assert path.stem == request_hash(record["request"])

    def test_corrupt_cache_entry_refetched(self, tmp_path):
        ep = FakeEndpoint()
        r = RemoteOracle("http://x", cache=DiskCache(tmp_path), transport=ep)
        r.generate(GenRequest("p"))
        for p in tmp_path.glob("*.json"):
            p.write_text("{broken")
        r.evict_memory()
        r.generate(GenRequest("p"))
        assert ep.calls == 2

    def test_constructor_validation(self):
        with pytest.raises(ValueError):
            RemoteOracle("")
        with pytest.raises(ValueError):
            RemoteOracle("http://x", max_parallel=0)


class TestConfig:
    def test_mock_default(self):
        assert isinstance(make_oracle(OracleConfig()), MockOracle)

    def test_remote_needs_url(self, monkeypatch):
        monkeypatch.delenv("METRAG_ORACLE_URL", raising=False)
        with pytest.raises(InputError):
            make_oracle(OracleConfig(kind="remote"))

    def test_remote_from_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv("METRAG_ORACLE_URL", "http://env")
        monkeypatch.setenv("METRAG_ORACLE_TOKEN", "tok")
        monkeypatch.setenv("METRAG_CACHE_DIR", str(tmp_path / "c"))
        ep = FakeEndpoint()
        o = make_oracle(OracleConfig(kind="remote"), transport=ep)
        assert o.endpoint_url == "http://env"
        o.generate(GenRequest("p"))
        assert ep.headers["Authorization"] == "Bearer tok"
        assert list((tmp_path / "c").glob("*.json"))

    @pytest.mark.parametrize("kw", [{"kind": "other"}, {"max_parallel": 0}, {"retries": -1}])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            OracleConfig(**kw)

    def test_counting_wrapper(self):
        c = CountingOracle(MockOracle())
        c.generate(GenRequest(render_qa("q", ""), 4))
        score(c, HIT_DOC)
        assert (c.generate_calls, c.score_calls) == (1, 1)
