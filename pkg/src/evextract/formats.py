"""Answer formats exchanged with the model.

ED answers are ``[{"trigger": str, "event_type": str}]``; EAE and joint answers
are ``[{"event_type": str, "trigger": str, "arguments": {role: str | [str]}}]``;
synthesis answers are ``{"text": str, "events": <EAE answer>}``. Answers are
expected inside a fenced ``json`` block, but any surrounding prose is ignored.
"""

from __future__ import annotations

import json
import re
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Any

from .corpus import EventRecord, Instance

_FENCE = re.compile(r"```[ \t]*(?:json|JSON)?[ \t]*\n(.*?)```", re.DOTALL)
_DECODER = json.JSONDecoder()


class AnswerFormatError(ValueError):
    pass


def extract_json(text: str) -> Any:
    """First well-formed JSON value in ``text``.

    Fenced code blocks are tried first, in order; then every ``[`` or ``{``
    position in the raw text.
    """
    for m in _FENCE.finditer(text):
        body = m.group(1).strip()
        try:
            return json.loads(body)
        except json.JSONDecodeError:
            continue
    for m in re.finditer(r"[\[{]", text):
        try:
            value, _ = _DECODER.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        return value
    raise AnswerFormatError("no well-formed JSON value in response")


def fenced(value: Any) -> str:
    return "```json\n" + dumps(value) + "\n```"


def dumps(value: Any) -> str:
    return json.dumps(value, ensure_ascii=False)


# ---------------------------------------------------------------- rendering


def ed_answer(events: Iterable[EventRecord]) -> list[dict[str, str]]:
    return [{"trigger": ev.trigger.text, "event_type": ev.event_type} for ev in events]


def eae_answer(events: Iterable[EventRecord]) -> list[dict[str, Any]]:
    out = []
    for ev in events:
        args: dict[str, Any] = {}
        for a in ev.arguments:
            if a.role not in args:
                args[a.role] = a.span.text
            elif isinstance(args[a.role], list):
                args[a.role].append(a.span.text)
            else:
                args[a.role] = [args[a.role], a.span.text]
        out.append({"event_type": ev.event_type, "trigger": ev.trigger.text, "arguments": args})
    return out


def synthesis_answer(inst: Instance) -> dict[str, Any]:
    return {"text": inst.text, "events": eae_answer(inst.events)}


# ------------------------------------------------------------------ parsing


@dataclass
class ParsedEvent:
    event_type: str
    trigger: str
    arguments: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class ParsedAnswer:
    events: list[ParsedEvent]
    malformed: int = 0


def _as_list(value: Any) -> list:
    if isinstance(value, dict):
        if isinstance(value.get("events"), list):
            return value["events"]
        return [value]
    if isinstance(value, list):
        return value
    raise AnswerFormatError(f"expected a JSON array of events, got {type(value).__name__}")


def parse_ed(value: Any) -> ParsedAnswer:
    items = _as_list(value)
    events, bad = [], 0
    for item in items:
        if not isinstance(item, dict):
            bad += 1
            continue
        trig, etype = item.get("trigger"), item.get("event_type")
        if not isinstance(trig, str) or not isinstance(etype, str) or not trig.strip() or not etype.strip():
            bad += 1
            continue
        events.append(ParsedEvent(etype.strip(), trig.strip()))
    return ParsedAnswer(events, bad)


def parse_eae(value: Any) -> ParsedAnswer:
    """Parse EAE/joint answers. Items with no usable trigger or type count as
    malformed; individual empty or non-string argument values are dropped and
    also counted."""
    items = _as_list(value)
    events, bad = [], 0
    for item in items:
        if not isinstance(item, dict):
            bad += 1
            continue
        trig, etype = item.get("trigger"), item.get("event_type")
        if not isinstance(trig, str) or not isinstance(etype, str) or not trig.strip() or not etype.strip():
            bad += 1
            continue
        raw_args = item.get("arguments") or {}
        if not isinstance(raw_args, dict):
            bad += 1
            raw_args = {}
        args = []
        for role, val in raw_args.items():
            vals = val if isinstance(val, list) else [val]
            for v in vals:
                if isinstance(v, str) and v.strip():
                    args.append((role.strip(), v.strip()))
                elif v is not None and v != "":
                    bad += 1
        events.append(ParsedEvent(etype.strip(), trig.strip(), args))
    return ParsedAnswer(events, bad)


def parse_synthesis(value: Any) -> tuple[str, ParsedAnswer]:
    if not isinstance(value, dict) or not isinstance(value.get("text"), str):
        raise AnswerFormatError('expected an object with a "text" string')
    return value["text"], parse_eae(value.get("events") or [])
