"""Two-step (detect, then extract arguments) and single-step extraction runs."""

from __future__ import annotations

import json
import logging
from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import formats
from .corpus import Corpus, Instance, Span
from .embed import EmbeddingProviderConfig, get_provider
from .errors import ConfigError, EvExtractError, LLMError
from .index import FlatIndex
from .llm import EXTRACTION_TEMPERATURE, Backend, CompletionRequest, complete, response_entry
from .prompt import (
    DEMO_MODES,
    DEMO_ORDERS,
    FORMAT_REMINDER,
    PromptBundle,
    PromptOptions,
    PromptTemplate,
    build_ed_prompt,
    build_eae_prompt,
    build_joint_prompt,
    default_template,
    select_demonstrations,
)
from .schema import EventSchema, schema_subset

log = logging.getLogger(__name__)

MODES = ("decomposed", "single-step")
GROUNDING_POLICIES = ("first-occurrence", "all-occurrences", "string-only")
REJECTION_KINDS = (
    "hallucinated_type",
    "hallucinated_role",
    "undetected_event",
    "malformed_item",
    "ungrounded_trigger",
    "ungrounded_argument",
    "ambiguous_grounding",
)


# ---------------------------------------------------------------- grounding


@dataclass(frozen=True)
class Grounding:
    span: Span | None
    ambiguous: bool = False
    found: bool = True

    @property
    def ungrounded(self) -> bool:
        return not self.found


def ground_string(instance_text: str, needle: str, policy: str = "first-occurrence") -> Grounding:
    """Map a model-emitted string back to a character span.

    ``first-occurrence`` returns the leftmost exact match; ``all-occurrences``
    also returns the leftmost but flags ambiguity when there are more;
    ``string-only`` never returns a span. ``found`` reports whether the
    string occurs at all, whatever the policy.
    """
    if not needle:
        raise ValueError("needle must be non-empty")
    if policy not in GROUNDING_POLICIES:
        raise ValueError(f"grounding policy must be one of {GROUNDING_POLICIES}")
    start = instance_text.find(needle)
    if start < 0:
        return Grounding(None, found=False)
    if policy == "string-only":
        return Grounding(None)
    ambiguous = policy == "all-occurrences" and instance_text.find(needle, start + 1) >= 0
    return Grounding(Span(start, start + len(needle), needle), ambiguous)


# ------------------------------------------------------------------- types


@dataclass(frozen=True)
class DetectedEvent:
    event_type: str
    trigger_text: str
    grounded_span: Span | None = None
    ambiguous: bool = False


@dataclass(frozen=True)
class PredictedArgument:
    role: str
    text: str
    span: Span | None = None
    ambiguous: bool = False


@dataclass(frozen=True)
class PredictedEvent:
    event_type: str
    trigger: str
    trigger_span: Span | None = None
    arguments: tuple[PredictedArgument, ...] = ()
    ambiguous: bool = False


@dataclass
class PredictionRecord:
    instance_id: str
    events: list[PredictedEvent] = field(default_factory=list)
    raw_ed_response: str | None = None
    raw_eae_responses: list[str] = field(default_factory=list)
    prompt_digests: list[str] = field(default_factory=list)
    rejections: Counter = field(default_factory=Counter)
    parse_failed: bool = False
    error: str | None = None
    llm_calls: int = 0
    shortfall: int = 0
    # in-memory only: per-request prompt bundles and raw response entries
    prompts: list[tuple[str, PromptBundle]] = field(default_factory=list, repr=False)
    responses: list[dict] = field(default_factory=list, repr=False)


@dataclass
class ExtractionConfig:
    """Settings and resources for one extraction run.

    ``demo_mode='none'`` must go with ``k=0`` and vice versa. ``pool`` (the
    labeled demonstration corpus) is needed for fixed and rae demonstrations;
    ``index`` and ``embed_config`` for rae.
    """

    backend: Backend
    mode: str = "decomposed"
    demo_mode: str = "none"
    k: int = 0
    grounding_policy: str = "first-occurrence"
    demo_order: str = "most-similar-first"
    multi_turn: bool = False
    canonical_ids: tuple[str, ...] = ()
    pool: Corpus | None = None
    index: FlatIndex | None = None
    embed_config: EmbeddingProviderConfig | None = None
    templates: dict[str, PromptTemplate] = field(default_factory=dict)
    model_name: str = "gpt-3.5-turbo"
    temperature: float = EXTRACTION_TEMPERATURE
    max_tokens: int = 1024
    max_inflight: int = 4
    embed_provider: Any = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.demo_mode not in DEMO_MODES:
            raise ConfigError(f"demo_mode must be one of {DEMO_MODES}, got {self.demo_mode!r}")
        if self.grounding_policy not in GROUNDING_POLICIES:
            raise ConfigError(f"grounding_policy must be one of {GROUNDING_POLICIES}")
        if self.demo_order not in DEMO_ORDERS:
            raise ConfigError(f"demo_order must be one of {DEMO_ORDERS}")
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        if (self.demo_mode == "none") != (self.k == 0):
            raise ConfigError("demo_mode 'none' requires k=0, and k=0 requires demo_mode 'none'")
        if self.demo_mode != "none" and self.pool is None:
            raise ConfigError(f"demo_mode {self.demo_mode!r} needs a demonstration pool")
        if self.demo_mode == "fixed" and not self.canonical_ids:
            raise ConfigError("demo_mode 'fixed' needs canonical_ids")
        if self.demo_mode == "rae" and (self.index is None or self.embed_config is None):
            raise ConfigError("demo_mode 'rae' needs an index and an embedding config")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        self.canonical_ids = tuple(self.canonical_ids)
        if self.embed_config is not None and self.embed_provider is None:
            self.embed_provider = get_provider(self.embed_config)

    def template(self, kind: str) -> PromptTemplate:
        if kind not in self.templates:
            self.templates[kind] = default_template(kind)
        return self.templates[kind]

    @property
    def options(self) -> PromptOptions:
        return PromptOptions(demo_order=self.demo_order, multi_turn=self.multi_turn)

    def snapshot(self) -> dict[str, Any]:
        """Serializable description of everything that shapes the prompts."""
        return {
            "mode": self.mode,
            "demo_mode": self.demo_mode,
            "k": self.k,
            "grounding_policy": self.grounding_policy,
            "demo_order": self.demo_order,
            "multi_turn": self.multi_turn,
            "canonical_ids": list(self.canonical_ids),
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "max_inflight": self.max_inflight,
            "embedding": self.embed_config.to_dict() if self.embed_config else None,
            "index": {"entries": len(self.index), "dim": self.index.dim, "metric": self.index.metric}
            if self.index is not None
            else None,
            "templates": {k: [list(s) for s in t.sections] for k, t in sorted(self.templates.items())},
            "backend": type(self.backend).__name__,
        }


# ---------------------------------------------------------------- helpers


def _demos(config: ExtractionConfig, query: Instance, kind: str, record: PredictionRecord):
    demos = select_demonstrations(
        config.demo_mode,
        config.pool,
        config.index,
        config.embed_config,
        query,
        config.k,
        task_kind=kind,
        canonical_ids=config.canonical_ids,
        provider=config.embed_provider,
    )
    record.shortfall = max(record.shortfall, demos.shortfall)
    return demos


def _ask(config: ExtractionConfig, bundle: PromptBundle, request_id: str, record: PredictionRecord, parse):
    """Query the backend, parse, and reprompt once with a format reminder.

    Returns ``(raw_text, parsed)``; ``parsed`` is None when both attempts fail.
    """
    record.prompt_digests.append(bundle.config_digest)
    record.prompts.append((request_id, bundle))
    prompt_text = bundle.text
    messages = bundle.messages if config.multi_turn else None
    raw = ""
    for attempt in range(2):
        rid = request_id if attempt == 0 else f"{request_id}/reprompt"
        req = CompletionRequest(
            prompt_text=prompt_text,
            model_name=config.model_name,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            request_id=rid,
            messages=messages,
        )
        resp = complete(config.backend, req, lambda q, r: record.responses.append(response_entry(q, r)))
        record.llm_calls += 1
        raw = resp.text
        try:
            return raw, parse(formats.extract_json(raw))
        except formats.AnswerFormatError as exc:
            log.info("%s: unparseable answer (%s)", rid, exc)
            prompt_text = f"{bundle.text}\n\n{FORMAT_REMINDER}"
            if messages:
                messages = (*messages, {"role": "assistant", "content": raw}, {"role": "user", "content": FORMAT_REMINDER})
    return raw, None


def _ground(text: str, needle: str, policy: str, record: PredictionRecord, kind: str) -> Grounding:
    g = ground_string(text, needle, policy)
    if g.ungrounded:
        record.rejections[f"ungrounded_{kind}"] += 1
    if g.ambiguous:
        record.rejections["ambiguous_grounding"] += 1
    return g


def _norm(s: str) -> str:
    return " ".join(s.split()).casefold()


def _arguments(
    schema: EventSchema, etype: str, pairs: Sequence[tuple[str, str]], query: Instance, policy: str, record: PredictionRecord
) -> list[PredictedArgument]:
    et = schema.get(etype)
    out: list[PredictedArgument] = []
    seen: set[tuple[str, str]] = set()
    for role, text in pairs:
        if et.role(role) is None:
            record.rejections["hallucinated_role"] += 1
            continue
        if (role, text) in seen:
            continue
        seen.add((role, text))
        g = _ground(query.text, text, policy, record, "argument")
        out.append(PredictedArgument(role, text, g.span, g.ambiguous))
    return out


# --------------------------------------------------------------- operations


def detect_events(
    config: ExtractionConfig, schema: EventSchema, query: Instance, record: PredictionRecord | None = None
) -> list[DetectedEvent]:
    """Event-detection step: demonstrations, ED prompt, call, parse, filter.

    Out-of-schema types are dropped and tallied as ``hallucinated_type``;
    repeated (type, trigger) pairs collapse to one event. If the answer is
    still unparseable after one reprompt, ``record.parse_failed`` is set and
    nothing is returned.
    """
    record = record if record is not None else PredictionRecord(query.id)
    demos = _demos(config, query, "ed", record)
    bundle = build_ed_prompt(config.template("ed"), schema, demos, query, config.options)
    raw, parsed = _ask(config, bundle, f"{query.id}/ed", record, formats.parse_ed)
    record.raw_ed_response = raw
    if parsed is None:
        record.parse_failed = True
        return []
    record.rejections["malformed_item"] += parsed.malformed
    out: list[DetectedEvent] = []
    seen: set[tuple[str, str]] = set()
    for ev in parsed.events:
        if ev.event_type not in schema:
            record.rejections["hallucinated_type"] += 1
            continue
        key = (ev.event_type, ev.trigger)
        if key in seen:
            continue
        seen.add(key)
        g = _ground(query.text, ev.trigger, config.grounding_policy, record, "trigger")
        out.append(DetectedEvent(ev.event_type, ev.trigger, g.span, g.ambiguous))
    return out


def extract_arguments(
    config: ExtractionConfig,
    schema: EventSchema,
    query: Instance,
    detected: Sequence[DetectedEvent],
    record: PredictionRecord | None = None,
) -> PredictionRecord:
    """Argument step for already-detected events.

    The EAE prompt carries role definitions for the detected types only. Each
    answer item is attached to the detected event with the same type and
    trigger (or to the only detected event of that type); items that match no
    detected event are dropped as ``undetected_event``.
    """
    record = record if record is not None else PredictionRecord(query.id)
    if not detected:
        record.events = []
        return record
    types = list(dict.fromkeys(d.event_type for d in detected))
    subset = schema_subset(schema, types)
    demos = _demos(config, query, "eae", record)
    pairs = [(d.event_type, d.trigger_text) for d in detected]
    bundle = build_eae_prompt(config.template("eae"), subset, pairs, demos, query, config.options)
    raw, parsed = _ask(config, bundle, f"{query.id}/eae", record, formats.parse_eae)
    record.raw_eae_responses.append(raw)
    if parsed is None:
        record.parse_failed = True
        record.events = []
        return record
    record.rejections["malformed_item"] += parsed.malformed

    args_for: list[list[PredictedArgument]] = [[] for _ in detected]
    for item in parsed.events:
        if item.event_type not in schema:
            record.rejections["hallucinated_type"] += 1
            continue
        slot = _match_detected(detected, item.event_type, item.trigger)
        if slot is None:
            record.rejections["undetected_event"] += 1
            continue
        have = {(a.role, a.text) for a in args_for[slot]}
        new = _arguments(schema, item.event_type, item.arguments, query, config.grounding_policy, record)
        args_for[slot].extend(a for a in new if (a.role, a.text) not in have)

    record.events = [
        PredictedEvent(d.event_type, d.trigger_text, d.grounded_span, tuple(args), d.ambiguous)
        for d, args in zip(detected, args_for)
    ]
    return record


def _match_detected(detected: Sequence[DetectedEvent], etype: str, trigger: str) -> int | None:
    same_type = [i for i, d in enumerate(detected) if d.event_type == etype]
    for i in same_type:
        if detected[i].trigger_text == trigger:
            return i
    for i in same_type:
        if _norm(detected[i].trigger_text) == _norm(trigger):
            return i
    return same_type[0] if len(same_type) == 1 else None


def extract_single_step(
    config: ExtractionConfig, schema: EventSchema, query: Instance, record: PredictionRecord | None = None
) -> PredictionRecord:
    """One prompt carrying the whole schema, parsed straight to events."""
    record = record if record is not None else PredictionRecord(query.id)
    demos = _demos(config, query, "joint", record)
    bundle = build_joint_prompt(config.template("joint"), schema, demos, query, config.options)
    raw, parsed = _ask(config, bundle, f"{query.id}/joint", record, formats.parse_eae)
    record.raw_ed_response = raw
    if parsed is None:
        record.parse_failed = True
        return record
    record.rejections["malformed_item"] += parsed.malformed
    events: list[PredictedEvent] = []
    index: dict[tuple[str, str], int] = {}
    for item in parsed.events:
        if item.event_type not in schema:
            record.rejections["hallucinated_type"] += 1
            continue
        args = _arguments(schema, item.event_type, item.arguments, query, config.grounding_policy, record)
        key = (item.event_type, item.trigger)
        if key in index:
            prev = events[index[key]]
            have = {(a.role, a.text) for a in prev.arguments}
            merged = prev.arguments + tuple(a for a in args if (a.role, a.text) not in have)
            events[index[key]] = PredictedEvent(prev.event_type, prev.trigger, prev.trigger_span, merged, prev.ambiguous)
            continue
        g = _ground(query.text, item.trigger, config.grounding_policy, record, "trigger")
        index[key] = len(events)
        events.append(PredictedEvent(item.event_type, item.trigger, g.span, tuple(args), g.ambiguous))
    record.events = events
    return record


def extract_instance(config: ExtractionConfig, schema: EventSchema, query: Instance) -> PredictionRecord:
    record = PredictionRecord(query.id)
    try:
        if config.mode == "single-step":
            extract_single_step(config, schema, query, record)
        else:
            detected = detect_events(config, schema, query, record)
            if not record.parse_failed:
                extract_arguments(config, schema, query, detected, record)
    except (LLMError, EvExtractError) as exc:
        log.warning("instance %s failed: %s", query.id, exc)
        record.error = f"{type(exc).__name__}: {exc}"
        record.events = []
    return record


def run_extraction(
    config: ExtractionConfig,
    schema: EventSchema,
    corpus: Corpus,
    run_dir: str | Path | None = None,
) -> list[PredictionRecord]:
    """Extract every instance of ``corpus``; output order is corpus order.

    A failing instance is recorded (``error`` / ``parse_failed``) and the run
    continues. With ``run_dir`` set, the config snapshot, prompt digests, raw
    responses, predictions and metadata are written there.
    """
    with ThreadPoolExecutor(max_workers=config.max_inflight) as pool:
        records = list(pool.map(lambda inst: extract_instance(config, schema, inst), corpus.instances))
    if run_dir is not None:
        write_run(run_dir, config, records)
    return records


# ------------------------------------------------------------ persistence


def _span_dict(span: Span | None, text: str) -> dict[str, Any]:
    if span is None:
        return {"start": None, "end": None, "text": text}
    return {"start": span.start, "end": span.end, "text": span.text}


def record_to_dict(rec: PredictionRecord) -> dict[str, Any]:
    events = []
    for ev in rec.events:
        trig = _span_dict(ev.trigger_span, ev.trigger)
        if ev.ambiguous:
            trig["ambiguous"] = True
        args = []
        for a in ev.arguments:
            d = {"role": a.role, **_span_dict(a.span, a.text)}
            if a.ambiguous:
                d["ambiguous"] = True
            args.append(d)
        events.append({"event_type": ev.event_type, "trigger": trig, "arguments": args})
    return {
        "id": rec.instance_id,
        "events": events,
        "raw": {"ed": rec.raw_ed_response, "eae": list(rec.raw_eae_responses)},
        "rejections": {k: rec.rejections[k] for k in REJECTION_KINDS if rec.rejections.get(k)},
        "parse_failed": rec.parse_failed,
        "error": rec.error,
        "prompt_digests": list(rec.prompt_digests),
    }


def _span_from(d: dict) -> Span | None:
    if d.get("start") is None or d.get("end") is None:
        return None
    return Span(int(d["start"]), int(d["end"]), d["text"])


def record_from_dict(d: dict[str, Any]) -> PredictionRecord:
    events = []
    for ev in d.get("events", []):
        trig = ev["trigger"]
        args = tuple(
            PredictedArgument(a["role"], a["text"], _span_from(a), bool(a.get("ambiguous"))) for a in ev.get("arguments", [])
        )
        events.append(PredictedEvent(ev["event_type"], trig["text"], _span_from(trig), args, bool(trig.get("ambiguous"))))
    raw = d.get("raw") or {}
    return PredictionRecord(
        instance_id=d["id"],
        events=events,
        raw_ed_response=raw.get("ed"),
        raw_eae_responses=list(raw.get("eae") or []),
        prompt_digests=list(d.get("prompt_digests") or []),
        rejections=Counter(d.get("rejections") or {}),
        parse_failed=bool(d.get("parse_failed")),
        error=d.get("error"),
    )


def dumps_predictions(records: Sequence[PredictionRecord]) -> str:
    return "".join(json.dumps(record_to_dict(r), ensure_ascii=False) + "\n" for r in records)


def save_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    Path(path).write_text(dumps_predictions(records), encoding="utf-8")


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(record_from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise EvExtractError(f"{path}:{lineno}: bad prediction record ({exc})") from exc
    return out


def rejection_totals(records: Sequence[PredictionRecord]) -> dict[str, int]:
    total: Counter = Counter()
    for r in records:
        total.update(r.rejections)
    return {k: total.get(k, 0) for k in REJECTION_KINDS}


def run_metadata(config: ExtractionConfig, records: Sequence[PredictionRecord]) -> dict[str, Any]:
    return {
        "instances": len(records),
        "predicted_events": sum(len(r.events) for r in records),
        "llm_calls": sum(r.llm_calls for r in records),
        "parse_failures": sum(r.parse_failed for r in records),
        "errors": sum(r.error is not None for r in records),
        "demonstration_shortfall": sum(r.shortfall for r in records),
        "rejections": rejection_totals(records),
        "assumptions": {
            "extraction_temperature": config.temperature,
            "max_tokens": config.max_tokens,
            "note": "extraction decoding parameters are chosen defaults, not published values",
        },
    }


def _jsonl(rows: Sequence[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows)


def write_run(run_dir: str | Path, config: ExtractionConfig, records: Sequence[PredictionRecord], save_prompt_text: bool = False) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.snapshot(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    prompts = []
    for rec in records:
        for rid, bundle in rec.prompts:
            row = {
                "instance_id": rec.instance_id,
                "request_id": rid,
                "task_kind": bundle.task_kind,
                "prompt_sha256": bundle.prompt_sha256,
                "config_digest": bundle.config_digest,
                "demonstrations": [d.instance_id for d in bundle.demonstrations],
            }
            if save_prompt_text:
                row["prompt_text"] = bundle.text
            prompts.append(row)
    (run_dir / "prompts.jsonl").write_text(_jsonl(prompts), encoding="utf-8")
    (run_dir / "raw_responses.jsonl").write_text(_jsonl([e for r in records for e in r.responses]), encoding="utf-8")
    save_predictions(records, run_dir / "predictions.jsonl")
    (run_dir / "metadata.json").write_text(json.dumps(run_metadata(config, records), indent=2, sort_keys=True) + "\n", encoding="utf-8")
