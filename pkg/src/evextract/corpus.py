"""Span-grounded event corpora in JSON Lines form."""

from __future__ import annotations

import json
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import CorpusError
from .schema import EventSchema

GRANULARITIES = ("sentence", "multi-sentence", "document")
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    text: str

    def check(self, owner_text: str) -> str | None:
        """Return a problem description, or None if the span is grounded."""
        if not (0 <= self.start < self.end <= len(owner_text)):
            return f"span [{self.start}, {self.end}) out of range for text of length {len(owner_text)}"
        actual = owner_text[self.start : self.end]
        if actual != self.text:
            return f"span text {self.text!r} != substring {actual!r} at [{self.start}, {self.end})"
        return None


@dataclass(frozen=True)
class ArgumentMention:
    role: str
    span: Span


@dataclass(frozen=True)
class EventRecord:
    event_type: str
    trigger: Span
    arguments: tuple[ArgumentMention, ...] = ()


@dataclass(frozen=True)
class Instance:
    id: str
    text: str
    events: tuple[EventRecord, ...] = ()
    granularity: str = "sentence"
    labeled: bool = True


@dataclass(frozen=True)
class Corpus:
    schema_name: str
    split: str
    instances: tuple[Instance, ...] = ()
    _by_id: dict[str, Instance] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._by_id.update((inst.id, inst) for inst in self.instances)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def get(self, instance_id: str) -> Instance | None:
        return self._by_id.get(instance_id)


def validate_instance(inst: Instance, schema: EventSchema) -> list[str]:
    """All invariant violations for one instance against ``schema``."""
    problems = []
    if inst.granularity not in GRANULARITIES:
        problems.append(f"unknown granularity {inst.granularity!r}")
    for e_idx, ev in enumerate(inst.events):
        where = f"events[{e_idx}]"
        et = schema.get(ev.event_type)
        if et is None:
            problems.append(f"{where}: unknown event type {ev.event_type!r}")
        msg = ev.trigger.check(inst.text)
        if msg:
            problems.append(f"{where}.trigger: {msg}")
        seen: set[tuple[str, int, int]] = set()
        for a_idx, arg in enumerate(ev.arguments):
            awhere = f"{where}.arguments[{a_idx}]"
            if et is not None and et.role(arg.role) is None:
                problems.append(f"{awhere}: unknown role {arg.role!r} for event type {ev.event_type!r}")
            msg = arg.span.check(inst.text)
            if msg:
                problems.append(f"{awhere}: {msg}")
            key = (arg.role, arg.span.start, arg.span.end)
            if key in seen:
                problems.append(f"{awhere}: duplicate argument {arg.role!r} at [{arg.span.start}, {arg.span.end})")
            seen.add(key)
    return problems


def _int(value: Any, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{what} must be an integer")
    return value


def _str(value: Any, what: str) -> str:
    if not isinstance(value, str):
        raise ValueError(f"{what} must be a string")
    return value


def instance_from_dict(obj: Any) -> Instance:
    """Decode one JSON Lines record. Raises ValueError/KeyError on shape errors."""
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    iid = _str(obj["id"], "id")
    text = _str(obj["text"], "text")
    granularity = _str(obj.get("granularity", "sentence"), "granularity")
    labeled = "events" in obj and obj["events"] is not None
    events = []
    for ev in obj.get("events") or []:
        trig = ev["trigger"]
        trigger = Span(_int(trig["start"], "trigger.start"), _int(trig["end"], "trigger.end"), _str(trig["text"], "trigger.text"))
        args = tuple(
            ArgumentMention(
                role=_str(a["role"], "role").strip(),
                span=Span(_int(a["start"], "argument.start"), _int(a["end"], "argument.end"), _str(a["text"], "argument.text")),
            )
            for a in ev.get("arguments", [])
        )
        events.append(EventRecord(_str(ev["event_type"], "event_type").strip(), trigger, args))
    return Instance(id=iid, text=text, events=tuple(events), granularity=granularity, labeled=labeled)


def instance_to_dict(inst: Instance) -> dict[str, Any]:
    out: dict[str, Any] = {"id": inst.id, "text": inst.text, "granularity": inst.granularity}
    if inst.labeled:
        out["events"] = [
            {
                "event_type": ev.event_type,
                "trigger": {"start": ev.trigger.start, "end": ev.trigger.end, "text": ev.trigger.text},
                "arguments": [
                    {"role": a.role, "start": a.span.start, "end": a.span.end, "text": a.span.text}
                    for a in ev.arguments
                ],
            }
            for ev in inst.events
        ]
    return out


def load_corpus(
    source: str | Path | bytes | Iterable[str],
    schema: EventSchema,
    split: str = "test",
) -> Corpus:
    """Parse and validate a JSON Lines corpus.

    ``source`` may be a path, raw bytes, or an iterable of lines. Every problem
    in the file is collected before raising, so one ``CorpusError`` lists all
    offending instance ids.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    if isinstance(source, (bytes, bytearray)):
        lines: Iterable[str] = bytes(source).decode("utf-8").splitlines()
    elif isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = source

    errors: list[tuple[str | None, str]] = []
    instances: list[Instance] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append((None, f"line {lineno}: malformed JSON ({exc.msg})"))
            continue
        iid = obj.get("id") if isinstance(obj, dict) and isinstance(obj.get("id"), str) else None
        try:
            inst = instance_from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            detail = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
            errors.append((iid, f"line {lineno}: {detail}"))
            continue
        if inst.id in seen:
            errors.append((inst.id, f"line {lineno}: duplicate instance id"))
            continue
        seen.add(inst.id)
        errors.extend((inst.id, f"line {lineno}: {p}") for p in validate_instance(inst, schema))
        instances.append(inst)
    if errors:
        raise CorpusError(errors)
    return Corpus(schema_name=schema.name, split=split, instances=tuple(instances))


def dumps_corpus(instances: Iterable[Instance]) -> str:
    return "".join(json.dumps(instance_to_dict(i), ensure_ascii=False) + "\n" for i in instances)


def save_corpus(corpus: Corpus | Iterable[Instance], path: str | Path) -> None:
    Path(path).write_text(dumps_corpus(corpus), encoding="utf-8")


def maritime_seeds(schema: EventSchema) -> Corpus:
    """The bundled 20-report hand-written Maritime seed corpus."""
    data = resources.files("evextract.data").joinpath("maritime_seeds.jsonl").read_bytes()
    return load_corpus(data, schema, split="train")


@dataclass
class CorpusStats:
    instances: int = 0
    events: int = 0
    arguments: int = 0
    events_per_instance: dict[int, int] = field(default_factory=dict)
    per_type: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "instances": self.instances,
            "events": self.events,
            "arguments": self.arguments,
            "events_per_instance": {str(k): v for k, v in sorted(self.events_per_instance.items())},
            "per_type": dict(sorted(self.per_type.items())),
        }


def corpus_stats(corpus: Corpus | Iterable[Instance]) -> CorpusStats:
    hist: Counter[int] = Counter()
    per_type: Counter[str] = Counter()
    n_inst = n_args = 0
    for inst in corpus:
        n_inst += 1
        hist[len(inst.events)] += 1
        for ev in inst.events:
            per_type[ev.event_type] += 1
            n_args += len(ev.arguments)
    return CorpusStats(
        instances=n_inst,
        events=sum(per_type.values()),
        arguments=n_args,
        events_per_instance=dict(hist),
        per_type=dict(per_type),
    )
