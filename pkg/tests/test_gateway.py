"""Gateway caching, coalescing, retry, and the scripted mock backend."""
import math
import threading

import numpy as np
import pytest

from conftest import make_gateway
from scirforge.gateway import (
    BackendConfig,
    Gateway,
    GatewayError,
    MockBackend,
    MockEmbeddingClient,
    MockEntailmentScorer,
    PromptRequest,
    ScoredContinuation,
    ScriptMatchError,
    TransientBackendError,
)


def req(text, temperature=0.0):
    return PromptRequest((("user", text),), "mock-model", temperature=temperature)


def test_prompt_request_validation():
    with pytest.raises(ValueError):
        PromptRequest((), "m")
    with pytest.raises(ValueError):
        PromptRequest((("narrator", "x"),), "m")
    with pytest.raises(ValueError):
        PromptRequest((("user", ""),), "m")
    with pytest.raises(ValueError):
        PromptRequest((("user", "x"),), "m", temperature=-0.5)
    with pytest.raises(ValueError):
        PromptRequest((("user", "x"),), "m", max_tokens=0)


def test_scored_continuation_validation():
    sc = ScoredContinuation(("a", "b"), (-0.1, -0.2))
    assert sc.logprobs == (-0.1, -0.2)
    with pytest.raises(ValueError):
        ScoredContinuation(("a",), (-0.1, -0.2))
    with pytest.raises(ValueError):
        ScoredContinuation((), ())
    with pytest.raises(ValueError):
        ScoredContinuation(("a",), (0.5,))
    with pytest.raises(ValueError):
        ScoredContinuation(("a",), (float("nan"),))


def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(kind="grpc")
    with pytest.raises(ValueError):
        BackendConfig(kind="mock", script_path="")
    with pytest.raises(ValueError):
        BackendConfig(kind="http", endpoint="")
    BackendConfig(kind="http", endpoint="http://localhost:1")


def test_mock_stage_and_order(tmp_path):
    gw = make_gateway(
        tmp_path,
        [
            {"kind": "chat", "stage": "alpha", "match": "ping", "response": "stage hit"},
            {"kind": "chat", "match": "ping", "response": "generic hit"},
        ],
    )
    assert gw.complete(req("ping"), stage="alpha") == "stage hit"
    assert gw.complete(req("ping"), stage="beta") == "generic hit"
    with pytest.raises(ScriptMatchError):
        gw.complete(req("pong"), stage="beta")


def test_mock_substitution(tmp_path):
    gw = make_gateway(
        tmp_path,
        [
            {"kind": "chat", "match": r"name=(\w+)", "response": "hello {m1} {digest}"},
        ],
    )
    out = gw.complete(req("name=ada"))
    assert out.startswith("hello ada ")
    assert len(out.split()[-1]) == 8  # short hash of the matched text
    # identical request text gives an identical digest
    assert gw.complete(req("name=ada")) == out


def test_mock_score_confidence_and_logprobs(tmp_path):
    gw = make_gateway(
        tmp_path,
        [
            {"kind": "score", "match": "explicit", "logprobs": [-0.5, -1.0]},
            {"kind": "score", "match": "", "confidence": 0.25},
        ],
    )
    scored = gw.score_continuation("ctx", " two tokens")
    assert scored.tokens == ("two", "tokens")
    assert all(lp == pytest.approx(math.log(0.25)) for lp in scored.logprobs)
    explicit = gw.score_continuation("explicit", " a b")
    assert explicit.logprobs == (-0.5, -1.0)
    with pytest.raises(GatewayError):
        gw.score_continuation("explicit", " one")  # 2 logprobs vs 1 token
    with pytest.raises(ValueError):
        gw.score_continuation("ctx", "")


def test_mock_score_entry_needs_exactly_one_source(tmp_path):
    script = tmp_path / "s.json"
    script.write_text('[{"kind": "score", "match": "", "confidence": 0.5, "logprobs": [-1]}]')
    with pytest.raises(GatewayError):
        MockBackend(script)
    script.write_text('[{"kind": "score", "match": ""}]')
    with pytest.raises(GatewayError):
        MockBackend(script)
    script.write_text('[{"kind": "score", "match": "", "confidence": 0.0}]')
    with pytest.raises(GatewayError):
        MockBackend(script)


def test_cache_hits_and_stage_not_in_key(tmp_path):
    gw = make_gateway(
        tmp_path,
        [{"kind": "chat", "match": "", "response": "r"}],
        cache=True,
    )
    assert gw.complete(req("q"), stage="one") == "r"
    assert gw.backend_calls == 1 and gw.cache_hits == 0
    # same payload, different stage: the cache key ignores the stage
    assert gw.complete(req("q"), stage="two") == "r"
    assert gw.backend_calls == 1 and gw.cache_hits == 1
    # decoding knobs are part of the key
    gw.complete(req("q", temperature=0.5), stage="one")
    assert gw.backend_calls == 2


def test_cache_survives_across_gateways(tmp_path):
    entries = [{"kind": "score", "match": "", "confidence": 0.5}]
    gw1 = make_gateway(tmp_path, entries, cache=True)
    first = gw1.score_continuation("c", " a b c")
    gw2 = make_gateway(tmp_path, entries, cache=True)
    second = gw2.score_continuation("c", " a b c")
    assert second == first
    assert gw2.backend_calls == 0 and gw2.cache_hits == 1


class _CountingBackend:
    def __init__(self, delay=0.0):
        self.calls = 0
        self.lock = threading.Lock()
        self.delay = delay

    def complete(self, request, stage):
        import time

        with self.lock:
            self.calls += 1
        time.sleep(self.delay)
        return "out"

    def score(self, context, continuation, model, stage):
        with self.lock:
            self.calls += 1
        return ScoredContinuation(("t",), (-1.0,))


def test_identical_concurrent_requests_coalesce(tmp_path):
    backend = _CountingBackend(delay=0.05)
    config = BackendConfig(
        kind="mock", script_path="unused", cache_dir=str(tmp_path / "cache")
    )
    gw = Gateway(backend, config)
    results = []
    threads = [
        threading.Thread(target=lambda: results.append(gw.complete(req("same"))))
        for _ in range(6)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == ["out"] * 6
    assert backend.calls == 1  # five waiters served from the fresh cache entry


class _FlakyBackend:
    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def complete(self, request, stage):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientBackendError("boom")
        return "ok"

    def score(self, context, continuation, model, stage):
        raise GatewayError("permanent")


def test_retry_on_transient_only():
    config = BackendConfig(
        kind="mock", script_path="unused", max_retries=2, retry_backoff=0.0
    )
    backend = _FlakyBackend(failures=2)
    gw = Gateway(backend, config)
    assert gw.complete(req("x")) == "ok"
    assert backend.calls == 3
    exhausted = Gateway(_FlakyBackend(failures=5), config)
    with pytest.raises(TransientBackendError):
        exhausted.complete(req("x"))
    permanent = Gateway(_FlakyBackend(failures=0), config)
    with pytest.raises(GatewayError):
        permanent.score_continuation("c", " t")  # not retried


def test_mock_embedding_client_deterministic():
    client = MockEmbeddingClient(dim=8)
    a = client.embed(["alpha", "beta"])
    b = client.embed(["alpha", "beta"])
    assert a.shape == (2, 8)
    assert (a == b).all()
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)
    assert not np.allclose(a[0], a[1])
    with pytest.raises(ValueError):
        MockEmbeddingClient(dim=1)


def test_mock_entailment_scorer(tmp_path):
    script = tmp_path / "s.json"
    script.write_text(
        '[{"kind": "entail", "match": "yes", "score": 0.9},'
        ' {"kind": "entail", "match": "", "score": 2.0}]'
    )
    scorer = MockEntailmentScorer(script)
    assert scorer.score("yes indeed", "ref") == 0.9
    with pytest.raises(GatewayError):
        scorer.score("other", "ref")  # out-of-range scripted value
