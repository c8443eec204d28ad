"""Synthetic corpus generation with conformance checks and reject-retry.

Each item draws its seeds and event types from its own random stream seeded
by ``(rng_seed, item_index)``, so results do not depend on scheduling. Retries
continue that stream and therefore ask with a fresh seed/type draw.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import formats
from .corpus import ArgumentMention, Corpus, EventRecord, Instance, Span, dumps_corpus, validate_instance
from .errors import ConfigError, LLMError
from .llm import SYNTHESIS_MAX_TOKENS, SYNTHESIS_TEMPERATURE, Backend, CallableBackend, CompletionRequest, complete
from .prompt import PromptTemplate, build_synthesis_prompt, default_template, sha256_text
from .schema import EventSchema

log = logging.getLogger(__name__)


@dataclass
class SynthesisConfig:
    seed_pool: Corpus
    schema: EventSchema
    target_count: int
    seeds_per_prompt: int = 3
    temperature: float = SYNTHESIS_TEMPERATURE
    max_tokens: int = SYNTHESIS_MAX_TOKENS
    rng_seed: int = 0
    max_retries_per_item: int = 3
    min_types: int = 1
    max_types: int = 3
    model_name: str = "gpt-3.5-turbo"
    max_inflight: int = 4
    id_prefix: str = "syn"
    template: PromptTemplate | None = None

    def __post_init__(self) -> None:
        if self.target_count < 1:
            raise ConfigError("target_count must be >= 1")
        if self.seeds_per_prompt < 1:
            raise ConfigError("seeds_per_prompt must be >= 1")
        if self.seeds_per_prompt > len(self.seed_pool):
            raise ConfigError(
                f"seeds_per_prompt ({self.seeds_per_prompt}) exceeds seed pool size ({len(self.seed_pool)})"
            )
        if self.max_retries_per_item < 0:
            raise ConfigError("max_retries_per_item must be >= 0")
        if not (1 <= self.min_types <= self.max_types):
            raise ConfigError("need 1 <= min_types <= max_types")
        if self.template is None:
            self.template = default_template("synthesis")

    def snapshot(self) -> dict[str, Any]:
        return {
            "schema": self.schema.name,
            "seed_pool": [i.id for i in self.seed_pool],
            "target_count": self.target_count,
            "seeds_per_prompt": self.seeds_per_prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "rng_seed": self.rng_seed,
            "max_retries_per_item": self.max_retries_per_item,
            "types_per_item": [self.min_types, self.max_types],
            "model_name": self.model_name,
        }


@dataclass(frozen=True)
class SynthesisRecord:
    instance: Instance
    seed_ids: tuple[str, ...]
    chosen_types: tuple[str, ...]
    prompt_sha256: str
    config_digest: str
    attempt: int

    def provenance(self) -> dict[str, Any]:
        return {
            "id": self.instance.id,
            "seed_ids": list(self.seed_ids),
            "chosen_types": list(self.chosen_types),
            "prompt_sha256": self.prompt_sha256,
            "config_digest": self.config_digest,
            "attempt": self.attempt,
        }


@dataclass
class SynthesisResult:
    corpus: Corpus
    records: list[SynthesisRecord]
    rejections: list[dict[str, Any]] = field(default_factory=list)
    target_count: int = 0

    @property
    def undershoot(self) -> int:
        return self.target_count - len(self.records)


# -------------------------------------------------------------- validation


def draft_instance(text: str, parsed: formats.ParsedAnswer, instance_id: str) -> Instance:
    """Turn a self-annotated report into an instance, grounding each string at
    its leftmost occurrence. Strings that do not occur get an empty span at
    offset -1, which validation reports as ungrounded."""

    def span(s: str) -> Span:
        pos = text.find(s)
        return Span(pos, pos + len(s), s) if pos >= 0 else Span(-1, -1, s)

    events = []
    for ev in parsed.events:
        args, seen = [], set()
        for role, value in ev.arguments:
            if (role, value) in seen:
                continue
            seen.add((role, value))
            args.append(ArgumentMention(role, span(value)))
        events.append(EventRecord(ev.event_type, span(ev.trigger), tuple(args)))
    return Instance(id=instance_id, text=text, events=tuple(events), granularity="multi-sentence")


def validate_synthetic(inst: Instance, schema: EventSchema, chosen_types: Sequence[str]) -> list[str]:
    """Reasons to reject ``inst``; an empty list means accept."""
    reasons: list[str] = []
    if not inst.text.strip():
        reasons.append("empty text")
    if not inst.events:
        reasons.append("no events")
    for ev in inst.events:
        et = schema.get(ev.event_type)
        if et is None:
            reasons.append(f"unknown event type {ev.event_type!r}")
        mentions = [("trigger", None, ev.trigger)] + [("argument", a.role, a.span) for a in ev.arguments]
        for kind, role, sp in mentions:
            if role is not None and et is not None and et.role(role) is None:
                reasons.append(f"unknown role {role!r} for event type {ev.event_type!r}")
            if not sp.text or sp.text not in inst.text:
                reasons.append(f"ungrounded {kind} {sp.text!r}")
            elif sp.check(inst.text):
                reasons.append(f"span violation: {kind} {sp.check(inst.text)}")
    present = {ev.event_type for ev in inst.events}
    reasons.extend(f"missing chosen type {t}" for t in chosen_types if t not in present)
    if not reasons:
        # anything the loader would still object to
        reasons.extend(validate_instance(inst, schema))
    return reasons


# -------------------------------------------------------------- generation


def _item_rng(rng_seed: int, item: int) -> np.random.Generator:
    return np.random.default_rng([rng_seed, item])


def _draw(config: SynthesisConfig, rng: np.random.Generator) -> tuple[list[Instance], list[tuple[str, list[str]]]]:
    pool = config.seed_pool.instances
    seed_idx = rng.choice(len(pool), size=config.seeds_per_prompt, replace=False)
    types = config.schema.event_types
    hi = min(config.max_types, len(types))
    lo = min(config.min_types, hi)
    n_types = int(rng.integers(lo, hi + 1))
    type_idx = rng.choice(len(types), size=n_types, replace=False)
    chosen = [(types[i].name, list(types[i].role_names)) for i in type_idx]
    return [pool[i] for i in seed_idx], chosen


def _synthesize_item(config: SynthesisConfig, backend: Backend, item: int):
    rng = _item_rng(config.rng_seed, item)
    item_id = f"{config.id_prefix}-{item:06d}"
    rejections = []
    for attempt in range(1, config.max_retries_per_item + 2):
        seeds, chosen = _draw(config, rng)
        bundle = build_synthesis_prompt(config.template, config.schema, seeds, chosen, query_id=item_id)
        req = CompletionRequest(
            prompt_text=bundle.text,
            model_name=config.model_name,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            request_id=f"{item_id}/attempt-{attempt}",
        )
        chosen_names = [t for t, _ in chosen]
        try:
            resp = complete(backend, req)
            text, parsed = formats.parse_synthesis(formats.extract_json(resp.text))
        except formats.AnswerFormatError as exc:
            reasons = [f"unparseable response: {exc}"]
        except LLMError as exc:
            reasons = [f"backend error: {exc}"]
        else:
            inst = draft_instance(text, parsed, item_id)
            reasons = validate_synthetic(inst, config.schema, chosen_names)
            if parsed.malformed:
                reasons.append(f"{parsed.malformed} malformed annotation item(s)")
            if not reasons:
                record = SynthesisRecord(
                    inst,
                    tuple(s.id for s in seeds),
                    tuple(chosen_names),
                    bundle.prompt_sha256,
                    bundle.config_digest,
                    attempt,
                )
                return record, rejections
        rejections.append({"item": item, "id": item_id, "attempt": attempt, "chosen_types": chosen_names, "reasons": reasons})
    log.warning("%s: retry budget exhausted, item skipped", item_id)
    rejections.append({"item": item, "id": item_id, "exhausted": True})
    return None, rejections


def synthesize(config: SynthesisConfig, backend: Backend) -> SynthesisResult:
    """Generate up to ``config.target_count`` validated reports.

    Items whose retry budget runs out are skipped and logged, so the output
    may be shorter than the target (see ``SynthesisResult.undershoot``).
    """
    with ThreadPoolExecutor(max_workers=config.max_inflight) as pool:
        outcomes = list(pool.map(lambda i: _synthesize_item(config, backend, i), range(config.target_count)))
    records = [rec for rec, _ in outcomes if rec is not None]
    rejections = [r for _, rej in outcomes for r in rej]
    corpus = Corpus(schema_name=config.schema.name, split="train", instances=tuple(r.instance for r in records))
    return SynthesisResult(corpus, records, rejections, config.target_count)


def write_synthesis(result: SynthesisResult, corpus_path: str | Path, provenance_path: str | Path | None = None) -> None:
    corpus_path = Path(corpus_path)
    corpus_path.write_text(dumps_corpus(result.corpus), encoding="utf-8")
    provenance_path = Path(provenance_path) if provenance_path else corpus_path.with_suffix(".provenance.jsonl")
    provenance_path.write_text(
        "".join(json.dumps(r.provenance(), ensure_ascii=False) + "\n" for r in result.records), encoding="utf-8"
    )


# ------------------------------------------------------- offline generator

_CHOSEN_LINE = re.compile(r"^- (\S+): .*\n  Arguments: (.*)$", re.MULTILINE)
_ROLE_ITEM = re.compile(r"(?:^|; )([^;(]+?) \(")

_VERBS = {
    "depart": ("departed", "from"),
    "arrive": ("arrived", "at"),
    "monitor": ("monitored", "traffic near"),
    "kidnap": ("kidnapped", "two crew near"),
    "robbery": ("robbed", "of stores near"),
    "escort": ("escorted", "a convoy past"),
    "block": ("blocked", "the channel at"),
    "detach": ("detached", "from its group near"),
    "commence": ("commenced", "a patrol off"),
    "transmit": ("transmitted", "a position report off"),
    "cease": ("ceased", "operations near"),
    "alter_course": ("altered course", "off"),
    "detect": ("detected", "a small contact near"),
    "pass": ("passed", "the fairway buoy off"),
    "transit": ("transited", "the waters off"),
    "hail": ("hailed", "a dhow near"),
}
_SHIP_TYPES = ["bulk carrier", "tanker", "container ship", "patrol boat", "trawler", "ferry", "research vessel", "tug"]
_NAMES = ["AURORA", "SOUTHERN CROSS", "KESTREL", "TIDEWATER", "MERIDIAN", "CORAL SEA", "HALCYON", "NORTHSTAR", "BOREAS"]
_PLACES = ["Port Hedland", "Dampier", "Gladstone", "Fremantle", "Townsville", "Geraldton", "Eden", "Cairns", "Albany"]
_MONTHS = ["January", "February", "March", "April", "May", "June", "July", "August", "September", "October"]


def chosen_from_prompt(prompt: str) -> list[tuple[str, list[str]]]:
    """(event type, roles) pairs listed in a default-format synthesis prompt."""
    out = []
    for etype, args in _CHOSEN_LINE.findall(prompt):
        roles = [] if args.strip() == "none" else [r.strip() for r in _ROLE_ITEM.findall(args)]
        out.append((etype, roles))
    return out


def compose_report(chosen: Sequence[tuple[str, Sequence[str]]], rng: random.Random) -> dict[str, Any]:
    """A small annotated report with one sentence per chosen event type."""
    names = rng.sample(_NAMES, len(chosen))
    places = rng.sample(_PLACES, len(chosen) * 2)
    day0 = rng.randrange(1, 20)
    month = rng.choice(_MONTHS)
    sentences, events = [], []
    for i, (etype, roles) in enumerate(chosen):
        verb, rest = _VERBS.get(etype, (etype.replace("_", " "), "near"))
        vals = {
            "date": f"{day0 + i} {month} 2024",
            "time": f"{(6 + 3 * i) % 24:02d}{rng.randrange(0, 60):02d} UTC",
            "ship type": rng.choice(_SHIP_TYPES),
            "ship name": names[i],
            "location": places[2 * i],
            "destination": places[2 * i + 1],
        }
        s = f"On {vals['date']} at {vals['time']} the {vals['ship type']} {vals['ship name']} {verb} {rest} {vals['location']}"
        s += f", bound for {vals['destination']}."
        sentences.append(s)
        events.append({"event_type": etype, "trigger": verb, "arguments": {r: vals[r] for r in roles if r in vals}})
    return {"text": " ".join(sentences), "events": events}


def report_writer_backend() -> CallableBackend:
    """Deterministic stand-in for the generator model: reads the chosen types
    from the prompt and writes a conforming annotated report."""

    def respond(prompt: str) -> str:
        chosen = chosen_from_prompt(prompt)
        rng = random.Random(sha256_text(prompt))
        return formats.fenced(compose_report(chosen, rng))

    return CallableBackend(respond)
