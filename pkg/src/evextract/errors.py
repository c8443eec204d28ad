"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EvExtractError(Exception):
    """Base class for all package errors."""


class SchemaError(EvExtractError):
    """Malformed or invalid schema document.

    ``path`` points at the offending location, e.g. ``event_types[3].name``.
    """

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CorpusError(EvExtractError):
    """One or more instances failed to parse or validate.

    ``errors`` holds every problem found as ``(instance_id, message)`` pairs;
    the instance id is ``None`` when the line could not be parsed at all.
    """

    def __init__(self, errors: list[tuple[str | None, str]]) -> None:
        self.errors = errors
        head = "; ".join(f"[{iid}] {msg}" if iid else msg for iid, msg in errors[:5])
        more = f" (+{len(errors) - 5} more)" if len(errors) > 5 else ""
        super().__init__(f"{len(errors)} corpus error(s): {head}{more}")

    @property
    def instance_ids(self) -> list[str]:
        return [iid for iid, _ in self.errors if iid is not None]


class EmbeddingError(EvExtractError):
    def __init__(self, message: str, index: int | None = None, retryable: bool = False) -> None:
        self.index = index
        self.retryable = retryable
        super().__init__(f"item {index}: {message}" if index is not None else message)


class IndexBuildError(EvExtractError):
    """Invalid index construction or query (dimension mismatch, duplicate id)."""


class IndexFormatError(EvExtractError):
    """Index file has the wrong magic or format version."""


class ChecksumError(IndexFormatError):
    """Index file is truncated or corrupted."""


class PromptError(EvExtractError):
    """Template problems: unknown or unresolved placeholders, wrong demo kind."""


class ScopingError(PromptError):
    """EAE prompt schema holds event types that were not detected."""


class LLMError(EvExtractError):
    def __init__(self, message: str, retryable: bool = False) -> None:
        self.retryable = retryable
        super().__init__(message)


class AuthenticationError(LLMError):
    pass


class RetriesExhausted(LLMError):
    pass


class ScoringError(EvExtractError):
    pass


class ConfigError(EvExtractError):
    pass
