"""Text embedding providers.

Two providers sit behind one config type:

* ``local-hash``: a deterministic bag-of-tokens feature hasher (FNV-1a 64,
  signed buckets). No network, stable across runs and platforms.
* ``remote``: an OpenAI-compatible ``/embeddings`` endpoint.

Vectors are stored as float32 so they round-trip bit-exactly through the
index file format.
"""

from __future__ import annotations

import logging
import math
import os
import re
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import httpx
import numpy as np

from . import _kernels
from .errors import EmbeddingError

log = logging.getLogger(__name__)

PROVIDER_KINDS = ("remote", "local-hash")
API_KEY_ENV = "EE_EMBED_API_KEY"
MAX_ATTEMPTS = 5
DEFAULT_MAX_CHARS = 8000

# vector sizes of the embedding models compared for retrieval
EMBEDDING_DIMS = {"use": 512, "roberta-base": 768, "text-embedding-ada-002": 1536}

_TOKEN_SPLIT = re.compile(r"[\W_]+")


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    provider_kind: str = "local-hash"
    dim: int = 512
    endpoint: str | None = None
    model_name: str | None = None
    normalize: bool = True
    max_inflight: int = 4
    batch_size: int = 64
    timeout: float = 30.0
    max_chars: int = DEFAULT_MAX_CHARS

    def __post_init__(self) -> None:
        if self.provider_kind not in PROVIDER_KINDS:
            raise ValueError(f"provider_kind must be one of {PROVIDER_KINDS}, got {self.provider_kind!r}")
        if isinstance(self.dim, bool) or not isinstance(self.dim, int) or self.dim <= 0:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if self.provider_kind == "remote" and not (self.endpoint and self.model_name):
            raise ValueError("remote provider requires endpoint and model_name")
        if self.max_inflight < 1 or self.batch_size < 1 or self.max_chars < 1:
            raise ValueError("max_inflight, batch_size and max_chars must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> EmbeddingProviderConfig:
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "provider_kind": self.provider_kind,
            "dim": self.dim,
            "endpoint": self.endpoint,
            "model_name": self.model_name,
            "normalize": self.normalize,
            "max_inflight": self.max_inflight,
            "batch_size": self.batch_size,
            "timeout": self.timeout,
            "max_chars": self.max_chars,
        }


def preset(model: str, endpoint: str | None = None, provider_kind: str | None = None) -> EmbeddingProviderConfig:
    """Config sized like one of the known embedding models.

    With an endpoint the config is remote; otherwise a local-hash config of the
    same width is returned, which is what offline tests use.
    """
    try:
        dim = EMBEDDING_DIMS[model]
    except KeyError:
        raise ValueError(f"unknown embedding model {model!r}; known: {sorted(EMBEDDING_DIMS)}") from None
    kind = provider_kind or ("remote" if endpoint else "local-hash")
    if kind == "remote":
        return EmbeddingProviderConfig("remote", dim, endpoint=endpoint, model_name=model)
    return EmbeddingProviderConfig("local-hash", dim)


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    truncated: bool = False

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-D vector")
        if not np.isfinite(arr).all():
            raise ValueError("embedding contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.values.tobytes() == other.values.tobytes() and self.dim == other.dim

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _finish(raw: np.ndarray, normalize: bool, truncated: bool) -> EmbeddingVector:
    raw = np.asarray(raw, dtype=np.float64)
    if normalize:
        norm = math.sqrt(float(np.dot(raw, raw)))
        if norm > 0.0:
            raw = raw / norm
    return EmbeddingVector(raw, truncated=truncated)


def _prepare(texts: Sequence[str], max_chars: int) -> list[tuple[str, bool]]:
    out = []
    for i, text in enumerate(texts):
        if not isinstance(text, str) or not text.strip():
            raise EmbeddingError("empty text", index=i)
        out.append((text[:max_chars], len(text) > max_chars))
    return out


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Unnormalized signed bucket counts for ``text``."""
    encoded = [t.encode("utf-8") for t in tokenize(text)]
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    if encoded:
        offsets[1:] = np.cumsum([len(t) for t in encoded])
    buf = np.frombuffer(b"".join(encoded), dtype=np.uint8) if encoded else np.zeros(0, dtype=np.uint8)
    return _kernels.hash_accumulate(buf, offsets, dim)


class RemoteEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    Transport errors, 429 and 5xx responses are retried with exponential
    backoff up to ``MAX_ATTEMPTS``; authentication failures and dimension
    mismatches are fatal.
    """

    def __init__(
        self,
        config: EmbeddingProviderConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff: float = 0.5,
    ) -> None:
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._backoff = backoff
        self._gate = threading.BoundedSemaphore(config.max_inflight)

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(API_KEY_ENV)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _post(self, texts: list[str], first_index: int) -> list[list[float]]:
        payload = {"model": self.config.model_name, "input": texts}
        last: Exception | None = None
        for attempt in range(1, MAX_ATTEMPTS + 1):
            try:
                with self._gate:
                    resp = self._client.post(self.config.endpoint, json=payload, headers=self._headers())
            except httpx.TransportError as exc:
                last = exc
            else:
                if resp.status_code in (401, 403):
                    raise EmbeddingError(f"authentication failed (HTTP {resp.status_code})", index=first_index)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = EmbeddingError(f"HTTP {resp.status_code}", index=first_index, retryable=True)
                elif resp.status_code >= 400:
                    raise EmbeddingError(f"HTTP {resp.status_code}: {resp.text[:200]}", index=first_index)
                else:
                    return self._parse(resp, len(texts), first_index)
            if attempt < MAX_ATTEMPTS:
                delay = self._backoff * 2 ** (attempt - 1)
                log.warning("embedding request failed (%s); retry %d in %.1fs", last, attempt, delay)
                self._sleep(delay)
        raise EmbeddingError(f"gave up after {MAX_ATTEMPTS} attempts: {last}", index=first_index)

    def _parse(self, resp: httpx.Response, n: int, first_index: int) -> list[list[float]]:
        try:
            data = resp.json()["data"]
            rows = sorted(data, key=lambda r: r["index"])
            vectors = [r["embedding"] for r in rows]
        except (ValueError, KeyError, TypeError) as exc:
            raise EmbeddingError(f"malformed embedding response: {exc}", index=first_index) from exc
        if len(vectors) != n:
            raise EmbeddingError(f"expected {n} embeddings, got {len(vectors)}", index=first_index)
        for offset, vec in enumerate(vectors):
            if len(vec) != self.config.dim:
                raise EmbeddingError(
                    f"response dim {len(vec)} != configured dim {self.config.dim}",
                    index=first_index + offset,
                )
        return vectors

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        prepared = _prepare(texts, self.config.max_chars)
        out: list[EmbeddingVector] = []
        step = self.config.batch_size
        for lo in range(0, len(prepared), step):
            chunk = prepared[lo : lo + step]
            vectors = self._post([t for t, _ in chunk], lo)
            for offset, (vec, (_, truncated)) in enumerate(zip(vectors, chunk)):
                try:
                    out.append(_finish(np.asarray(vec, dtype=np.float64), self.config.normalize, truncated))
                except (ValueError, TypeError) as exc:
                    raise EmbeddingError(str(exc), index=lo + offset) from exc
        return out


class LocalHashEmbedder:
    def __init__(self, config: EmbeddingProviderConfig) -> None:
        self.config = config

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        prepared = _prepare(texts, self.config.max_chars)
        return [_finish(hash_embed(t, self.config.dim), self.config.normalize, trunc) for t, trunc in prepared]


def get_provider(config: EmbeddingProviderConfig, client: httpx.Client | None = None):
    if config.provider_kind == "local-hash":
        return LocalHashEmbedder(config)
    return RemoteEmbedder(config, client=client)


def embed_text(config: EmbeddingProviderConfig, text: str, provider=None) -> EmbeddingVector:
    """Embed one text. Documents longer than ``config.max_chars`` are cut and
    the returned vector is flagged ``truncated``."""
    if not isinstance(text, str) or not text.strip():
        raise EmbeddingError("empty text")
    return (provider or get_provider(config)).embed_many([text])[0]


def embed_batch(config: EmbeddingProviderConfig, texts: Sequence[str], provider=None) -> list[EmbeddingVector]:
    return (provider or get_provider(config)).embed_many(list(texts))
