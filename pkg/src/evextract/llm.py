"""Chat-completion backends.

All backends implement ``send(request) -> (text, finish_reason)`` and raise
:class:`LLMError` with ``retryable`` set for transient failures. Retrying,
timing and response logging live in :func:`complete`, so they behave the same
for the remote client and the mocks.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from .errors import AuthenticationError, LLMError, RetriesExhausted
from .prompt import sha256_text

log = logging.getLogger(__name__)

API_KEY_ENV = "EE_LLM_API_KEY"
MAX_ATTEMPTS = 5
FINISH_REASONS = ("stop", "length", "error")

# extraction decodes greedily; synthesis uses the high-diversity setting
EXTRACTION_TEMPERATURE = 0.0
SYNTHESIS_TEMPERATURE = 1.6
SYNTHESIS_MAX_TOKENS = 4000


@dataclass(frozen=True)
class CompletionRequest:
    prompt_text: str
    model_name: str = "gpt-3.5-turbo"
    temperature: float = EXTRACTION_TEMPERATURE
    max_tokens: int = 1024
    request_id: str = ""
    messages: tuple[dict[str, str], ...] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.prompt_text, str) or not self.prompt_text.strip():
            raise LLMError("prompt_text must be non-empty")
        if not (0.0 <= self.temperature <= 2.0):
            raise LLMError(f"temperature must be in [0, 2], got {self.temperature}")
        if isinstance(self.max_tokens, bool) or not isinstance(self.max_tokens, int) or self.max_tokens < 1:
            raise LLMError(f"max_tokens must be a positive integer, got {self.max_tokens!r}")

    @property
    def prompt_sha256(self) -> str:
        return sha256_text(self.prompt_text)

    def chat_messages(self) -> list[dict[str, str]]:
        if self.messages:
            return [dict(m) for m in self.messages]
        return [{"role": "user", "content": self.prompt_text}]


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    finish_reason: str = "stop"
    latency_ms: int = 0
    attempt_count: int = 1
    request_id: str = ""
    prompt_sha256: str = ""

    def __post_init__(self) -> None:
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"finish_reason must be one of {FINISH_REASONS}")
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be >= 1")

    @property
    def truncated(self) -> bool:
        return self.finish_reason == "length"


@dataclass
class RetryPolicy:
    max_attempts: int = MAX_ATTEMPTS
    base_delay: float = 1.0
    factor: float = 2.0
    sleep: Callable[[float], None] = time.sleep

    def delay(self, attempt: int) -> float:
        return self.base_delay * self.factor ** (attempt - 1)


class Backend(Protocol):
    retry: RetryPolicy

    def send(self, request: CompletionRequest) -> tuple[str, str]: ...


class TokenBucket:
    """Blocking token bucket: ``rate`` requests per minute, bursts up to ``capacity``."""

    def __init__(
        self,
        rate_per_minute: float,
        capacity: float | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate_per_minute <= 0:
            raise ValueError("rate_per_minute must be > 0")
        self.rate = rate_per_minute / 60.0
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_minute / 60.0)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


class RemoteChatBackend:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(
        self,
        endpoint: str,
        model_name: str | None = None,
        client: httpx.Client | None = None,
        requests_per_minute: float | None = None,
        max_inflight: int = 8,
        timeout: float = 120.0,
        retry: RetryPolicy | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.model_name = model_name
        self._client = client or httpx.Client(timeout=timeout)
        self._bucket = TokenBucket(requests_per_minute) if requests_per_minute else None
        self._gate = threading.BoundedSemaphore(max_inflight)
        self.retry = retry or RetryPolicy()

    def send(self, request: CompletionRequest) -> tuple[str, str]:
        payload = {
            "model": self.model_name or request.model_name,
            "messages": request.chat_messages(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        key = os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        if self._bucket is not None:
            self._bucket.acquire()
        try:
            with self._gate:
                resp = self._client.post(self.endpoint, json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise LLMError(f"transport error: {exc}", retryable=True) from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"authentication failed (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise LLMError(f"HTTP {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise LLMError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            choice = resp.json()["choices"][0]
            text = choice["message"]["content"] or ""
            reason = choice.get("finish_reason") or "stop"
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LLMError(f"malformed chat response: {exc}") from exc
        return text, reason if reason in ("stop", "length") else "error"


class MockBackend:
    """Scripted backend: response looked up by the SHA-256 of the prompt text.

    Script files are JSON Lines of ``{"prompt_sha256": hex, "response": str}``.
    An unscripted prompt is a non-retryable error unless ``default`` is set.
    """

    def __init__(self, script: dict[str, str] | None = None, default: str | None = None) -> None:
        self.script = dict(script or {})
        self.default = default
        self.retry = RetryPolicy(base_delay=0.0)

    @classmethod
    def from_file(cls, path: str | Path, default: str | None = None) -> MockBackend:
        script = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                script[row["prompt_sha256"]] = row["response"]
            except (ValueError, KeyError, TypeError) as exc:
                raise LLMError(f"{path}:{lineno}: bad mock script line ({exc})") from exc
        return cls(script, default)

    def send(self, request: CompletionRequest) -> tuple[str, str]:
        text = self.script.get(request.prompt_sha256, self.default)
        if text is None:
            raise LLMError(f"no scripted response for prompt {request.prompt_sha256[:12]}")
        return text, "stop"


def write_mock_script(path: str | Path, pairs: Iterable[tuple[str, str]]) -> None:
    """Write (prompt_text, response) pairs as a mock script file."""
    lines = [json.dumps({"prompt_sha256": sha256_text(p), "response": r}, ensure_ascii=False) for p, r in pairs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


class CallableBackend:
    """Backend that answers with ``fn(prompt_text)``; handy for oracle mocks."""

    def __init__(self, fn: Callable[[str], str]) -> None:
        self.fn = fn
        self.retry = RetryPolicy(base_delay=0.0)

    def send(self, request: CompletionRequest) -> tuple[str, str]:
        return self.fn(request.prompt_text), "stop"


@dataclass
class ResponseLog:
    """Thread-safe in-memory record of every raw response, in arrival order."""

    entries: list[dict] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __call__(self, request: CompletionRequest, response: CompletionResponse) -> None:
        with self._lock:
            self.entries.append(response_entry(request, response))


def response_entry(request: CompletionRequest, response: CompletionResponse) -> dict:
    return {
        "request_id": request.request_id,
        "prompt_sha256": request.prompt_sha256,
        "response": response.text,
        "finish_reason": response.finish_reason,
        "attempt_count": response.attempt_count,
    }


ResponseHook = Callable[[CompletionRequest, CompletionResponse], None]


def complete(backend: Backend, request: CompletionRequest, on_response: ResponseHook | None = None) -> CompletionResponse:
    """Send ``request``, retrying retryable failures with exponential backoff.

    The raw response is logged (and passed to ``on_response``) before the
    caller gets a chance to parse it.

    Raises:
        AuthenticationError: credentials rejected; never retried.
        RetriesExhausted: every attempt failed with a retryable error.
        LLMError: any other non-retryable failure.
    """
    policy = backend.retry
    start = time.perf_counter()
    last: LLMError | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            text, reason = backend.send(request)
        except LLMError as exc:
            if not exc.retryable:
                raise
            last = exc
            if attempt < policy.max_attempts:
                delay = policy.delay(attempt)
                log.warning("request %s failed (%s); retry %d in %.2fs", request.request_id, exc, attempt, delay)
                if delay > 0:
                    policy.sleep(delay)
            continue
        response = CompletionResponse(
            text=text,
            finish_reason=reason,
            latency_ms=int((time.perf_counter() - start) * 1000),
            attempt_count=attempt,
            request_id=request.request_id,
            prompt_sha256=request.prompt_sha256,
        )
        log.debug("response %s sha=%s: %r", request.request_id, response.prompt_sha256[:12], text[:200])
        if on_response is not None:
            on_response(request, response)
        return response
    raise RetriesExhausted(f"request {request.request_id}: gave up after {policy.max_attempts} attempts ({last})")


def complete_batch(
    backend: Backend,
    requests: Sequence[CompletionRequest],
    max_inflight: int = 4,
    on_response: ResponseHook | None = None,
) -> list[CompletionResponse | LLMError]:
    """Complete ``requests`` with at most ``max_inflight`` outstanding.

    Results come back in request order; a failed request yields its
    :class:`LLMError` in its slot instead of aborting the batch.
    """
    if max_inflight < 1:
        raise ValueError("max_inflight must be >= 1")

    def one(req: CompletionRequest) -> CompletionResponse | LLMError:
        try:
            return complete(backend, req, on_response)
        except LLMError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max_inflight) as pool:
        return list(pool.map(one, requests))
