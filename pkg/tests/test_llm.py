from __future__ import annotations

import json
import threading
import time

import httpx
import pytest

from evextract.errors import AuthenticationError, LLMError, RetriesExhausted
from evextract.llm import (
    CallableBackend,
    CompletionRequest,
    MockBackend,
    RemoteChatBackend,
    ResponseLog,
    RetryPolicy,
    TokenBucket,
    complete,
    complete_batch,
    write_mock_script,
)


def test_request_validation():
    with pytest.raises(LLMError):
        CompletionRequest("")
    with pytest.raises(LLMError):
        CompletionRequest("hi", temperature=2.5)
    with pytest.raises(LLMError):
        CompletionRequest("hi", max_tokens=0)


def test_mock_script_round_trip(tmp_path):
    p = tmp_path / "script.jsonl"
    write_mock_script(p, [("prompt one", "answer one"), ("prompt two", "answer two")])
    backend = MockBackend.from_file(p)
    assert complete(backend, CompletionRequest("prompt two")).text == "answer two"
    with pytest.raises(LLMError):
        complete(backend, CompletionRequest("unscripted"))


def test_response_is_logged_before_return():
    log = ResponseLog()
    resp = complete(CallableBackend(lambda p: p.upper()), CompletionRequest("abc", request_id="r1"), log)
    assert resp.text == "ABC"
    assert log.entries == [
        {
            "request_id": "r1",
            "prompt_sha256": CompletionRequest("abc").prompt_sha256,
            "response": "ABC",
            "finish_reason": "stop",
            "attempt_count": 1,
        }
    ]


class Flaky:
    def __init__(self, failures, retryable=True):
        self.failures = failures
        self.retryable = retryable
        self.calls = 0
        self.sleeps = []
        self.retry = RetryPolicy(base_delay=1.0, sleep=self.sleeps.append)

    def send(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise LLMError("boom", retryable=self.retryable)
        return "ok", "stop"


def test_retries_with_exponential_backoff():
    b = Flaky(3)
    resp = complete(b, CompletionRequest("x"))
    assert resp.attempt_count == 4
    assert b.sleeps == [1.0, 2.0, 4.0]


def test_gives_up_after_five_attempts():
    b = Flaky(10)
    with pytest.raises(RetriesExhausted):
        complete(b, CompletionRequest("x"))
    assert b.calls == 5


def test_non_retryable_error_is_raised_immediately():
    b = Flaky(10, retryable=False)
    with pytest.raises(LLMError):
        complete(b, CompletionRequest("x"))
    assert b.calls == 1


def test_batch_respects_inflight_bound_and_order():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def slow(prompt):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.01)
        with lock:
            state["now"] -= 1
        return prompt[::-1]

    reqs = [CompletionRequest(f"p{i}") for i in range(24)]
    out = complete_batch(CallableBackend(slow), reqs, max_inflight=3)
    assert [r.text for r in out] == [f"p{i}"[::-1] for i in range(24)]
    assert 1 < state["peak"] <= 3


def test_batch_reports_failures_in_place():
    backend = MockBackend({CompletionRequest("a").prompt_sha256: "A"})
    out = complete_batch(backend, [CompletionRequest("a"), CompletionRequest("b")])
    assert out[0].text == "A" and isinstance(out[1], LLMError)


def test_token_bucket_waits_when_empty():
    clock = {"t": 0.0}
    sleeps = []

    def sleep(s):
        sleeps.append(s)
        clock["t"] += s

    bucket = TokenBucket(60, capacity=1, clock=lambda: clock["t"], sleep=sleep)
    bucket.acquire()
    bucket.acquire()
    assert sleeps == [pytest.approx(1.0)]


def _remote(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return RemoteChatBackend("http://llm/v1/chat/completions", "gpt-4", client=client, retry=RetryPolicy(sleep=lambda s: None), **kw)


def test_remote_wire_format(monkeypatch):
    monkeypatch.setenv("EE_LLM_API_KEY", "k")
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers["authorization"]
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}, "finish_reason": "length"}]})

    resp = complete(_remote(handler), CompletionRequest("prompt", temperature=1.6, max_tokens=4000))
    assert seen["body"] == {
        "model": "gpt-4",
        "messages": [{"role": "user", "content": "prompt"}],
        "temperature": 1.6,
        "max_tokens": 4000,
    }
    assert seen["auth"] == "Bearer k"
    assert resp.text == "hello" and resp.truncated


def test_remote_retries_429_and_5xx_then_succeeds():
    codes = iter([429, 502, 200])

    def handler(request):
        c = next(codes)
        if c != 200:
            return httpx.Response(c)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}, "finish_reason": "stop"}]})

    assert complete(_remote(handler), CompletionRequest("p")).attempt_count == 3


def test_remote_auth_failure_is_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(403)

    with pytest.raises(AuthenticationError):
        complete(_remote(handler), CompletionRequest("p"))
    assert len(calls) == 1


def test_remote_transport_errors_exhaust_retries():
    def handler(request):
        raise httpx.ReadTimeout("slow")

    with pytest.raises(RetriesExhausted):
        complete(_remote(handler), CompletionRequest("p"))
