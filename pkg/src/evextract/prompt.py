"""Prompt assembly for event detection, argument extraction and synthesis.

A template is an ordered list of named sections. Each section is text with
``{{placeholder}}`` slots drawn from a fixed vocabulary. Rendering fills the
slots, drops sections that come out blank and joins the rest with blank
lines, so identical inputs always produce identical bytes.

Template files use ``@@`` directive lines::

    @@ task_kind: ed
    @@ section: task
    {{task_description}}
    @@ section: query
    {{query_text}}
    Answer:
"""

from __future__ import annotations

import hashlib
import json
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from . import formats
from .corpus import Corpus, Instance
from .embed import EmbeddingProviderConfig, embed_text
from .errors import PromptError, ScopingError
from .index import FlatIndex, query as index_query
from .schema import EventSchema

TASK_KINDS = ("ed", "eae", "joint", "synthesis")
PLACEHOLDERS = (
    "task_description",
    "event_type_definitions",
    "extraction_rules",
    "output_format",
    "examples",
    "query_text",
    "detected_events",
    "seed_examples",
    "chosen_event_types",
)
DEMO_MODES = ("none", "fixed", "rae")
DEMO_ORDERS = ("most-similar-first", "most-similar-last")

_SLOT = re.compile(r"\{\{\s*([^{}]*?)\s*\}\}")
_EXAMPLE_HEAD = "Example {n}"
_QUERY_HEAD = "Query"

TASK_DESCRIPTIONS = {
    "ed": (
        "You are an expert annotator for event detection. Read the text and identify every event "
        "it reports. For each event, find the trigger: the word or short phrase that most clearly "
        "expresses the event. Then classify the event into exactly one of the event types defined below."
    ),
    "eae": (
        "You are an expert annotator for event argument extraction. The events listed with the query "
        "have already been detected in the text. For each of them, extract the text spans that fill "
        "its argument roles as defined below."
    ),
    "joint": (
        "You are an expert annotator for event extraction. Read the text and identify every event it "
        "reports: find its trigger, classify it into one of the event types defined below, and extract "
        "the text spans that fill its argument roles."
    ),
    "synthesis": (
        "You write realistic {domain} reports for an event extraction dataset. Study the seed reports, "
        "then write ONE new report of a few sentences that describes at least one event of every chosen "
        "event type, mentioning values for the listed arguments where natural. Vary the vessels, places, "
        "dates and wording; do not copy the seeds. Annotate the report you wrote."
    ),
}

EXTRACTION_RULES = {
    "ed": (
        "Copy each trigger exactly as it appears in the text; it must be a contiguous substring of the text.",
        "Report one event per trigger occurrence.",
        "Use only the event types listed above.",
        "Output only the specified format and nothing else.",
    ),
    "eae": (
        "Copy each argument exactly as it appears in the text; it must be a contiguous substring of the text.",
        "Only fill roles defined for the event's type; omit roles with no argument in the text.",
        "Keep the event type and trigger of each detected event unchanged.",
        "Output only the specified format and nothing else.",
    ),
    "joint": (
        "Copy triggers and arguments exactly as they appear in the text; each must be a contiguous substring.",
        "Report one event per trigger occurrence.",
        "Use only the event types and roles listed above; omit roles with no argument in the text.",
        "Output only the specified format and nothing else.",
    ),
    "synthesis": (
        "Every trigger and argument value in the annotation must appear verbatim in the report text.",
        "Use only the chosen event types and their listed arguments.",
        "Output only the specified format and nothing else.",
    ),
}

OUTPUT_FORMATS = {
    "ed": (
        "Return a JSON array inside a ```json fenced block. Each element is "
        '{"trigger": <trigger text>, "event_type": <event type name>}. '
        "Return [] if the text reports no event."
    ),
    "eae": (
        "Return a JSON array inside a ```json fenced block with one element per detected event: "
        '{"event_type": <event type name>, "trigger": <trigger text>, '
        '"arguments": {<role name>: <argument text, or a list of texts if the role has several>}}.'
    ),
    "joint": (
        "Return a JSON array inside a ```json fenced block with one element per event: "
        '{"event_type": <event type name>, "trigger": <trigger text>, '
        '"arguments": {<role name>: <argument text, or a list of texts if the role has several>}}. '
        "Return [] if the text reports no event."
    ),
    "synthesis": (
        "Return one JSON object inside a ```json fenced block: "
        '{"text": <the new report>, "events": [{"event_type": <event type name>, "trigger": <trigger text>, '
        '"arguments": {<role name>: <argument text>}}]}.'
    ),
}

FORMAT_REMINDER = (
    "Your previous answer could not be parsed. Answer again using exactly the output format "
    "described above: a single JSON value inside a ```json fenced block, with no other text."
)


@dataclass(frozen=True)
class PromptTemplate:
    task_kind: str
    sections: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise PromptError(f"unknown task kind {self.task_kind!r}")
        if not self.sections:
            raise PromptError("template has no sections")
        for name, body in self.sections:
            slots = _SLOT.findall(body)
            unknown = sorted({s for s in slots if s not in PLACEHOLDERS})
            if unknown:
                raise PromptError(f"section {name!r}: unknown placeholder(s) {unknown}")
            dupes = sorted({s for s in slots if slots.count(s) > 1})
            if dupes:
                raise PromptError(f"section {name!r}: placeholder(s) used more than once: {dupes}")

    @property
    def placeholders(self) -> list[str]:
        return [s for _, body in self.sections for s in _SLOT.findall(body)]


def parse_template(text: str) -> PromptTemplate:
    kind = None
    sections: list[tuple[str, list[str]]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("@@"):
            key, _, value = line[2:].partition(":")
            key, value = key.strip(), value.strip()
            if key == "task_kind":
                kind = value
            elif key == "section":
                if not value:
                    raise PromptError(f"line {lineno}: section directive without a name")
                sections.append((value, []))
            else:
                raise PromptError(f"line {lineno}: unknown directive {key!r}")
        elif sections:
            sections[-1][1].append(line)
        elif line.strip():
            raise PromptError(f"line {lineno}: text before the first section directive")
    if kind is None:
        raise PromptError("template is missing '@@ task_kind:'")
    return PromptTemplate(kind, tuple((name, "\n".join(lines).strip("\n")) for name, lines in sections))


def load_template(path: str | Path) -> PromptTemplate:
    return parse_template(Path(path).read_text(encoding="utf-8"))


def default_template(task_kind: str) -> PromptTemplate:
    if task_kind not in TASK_KINDS:
        raise PromptError(f"unknown task kind {task_kind!r}")
    text = resources.files("evextract.templates").joinpath(f"{task_kind}.txt").read_text(encoding="utf-8")
    return parse_template(text)


@dataclass(frozen=True)
class Demonstration:
    instance_id: str
    input_text: str
    target: str
    task_kind: str
    similarity: float | None = None

    def __post_init__(self) -> None:
        if self.task_kind not in ("ed", "eae", "joint"):
            raise PromptError(f"demonstrations are ed/eae/joint, got {self.task_kind!r}")
        try:
            value = json.loads(self.target)
            parsed = formats.parse_ed(value) if self.task_kind == "ed" else formats.parse_eae(value)
        except (ValueError, formats.AnswerFormatError) as exc:
            raise PromptError(f"demonstration {self.instance_id!r}: target does not parse: {exc}") from exc
        if parsed.malformed:
            raise PromptError(f"demonstration {self.instance_id!r}: target has malformed items")

    @classmethod
    def from_instance(cls, inst: Instance, task_kind: str, similarity: float | None = None) -> Demonstration:
        answer = formats.ed_answer(inst.events) if task_kind == "ed" else formats.eae_answer(inst.events)
        return cls(inst.id, inst.text, formats.dumps(answer), task_kind, similarity)


class DemonstrationList(list):
    """List of demonstrations that also records how many requested ones were
    unavailable (``shortfall``)."""

    def __init__(self, items=(), shortfall: int = 0) -> None:
        super().__init__(items)
        self.shortfall = shortfall


@dataclass(frozen=True)
class PromptOptions:
    task_description: str | None = None
    extraction_rules: tuple[str, ...] | None = None
    demo_order: str = "most-similar-first"
    multi_turn: bool = False

    def __post_init__(self) -> None:
        if self.demo_order not in DEMO_ORDERS:
            raise PromptError(f"demo_order must be one of {DEMO_ORDERS}")


@dataclass(frozen=True)
class PromptBundle:
    task_kind: str
    text: str
    demonstrations: tuple[Demonstration, ...]
    query_instance_id: str
    config_digest: str
    messages: tuple[dict[str, str], ...] = field(default=(), compare=False)

    @property
    def prompt_sha256(self) -> str:
        return sha256_text(self.text)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------- rendering


def _render_rules(rules: Sequence[str]) -> str:
    return "\n".join(f"{i}. {r}" for i, r in enumerate(rules, 1))


def _detected_lines(pairs: Sequence[tuple[str, str]]) -> str:
    return "\n".join(f'- {etype} (trigger: "{trig}")' for etype, trig in pairs)


def _demo_input(demo: Demonstration) -> str:
    lines = [f"Text: {demo.input_text}"]
    if demo.task_kind == "eae":
        parsed = formats.parse_eae(json.loads(demo.target))
        lines.append("Detected events:")
        lines.append(_detected_lines([(e.event_type, e.trigger) for e in parsed.events]) or "(none)")
    return "\n".join(lines)


def _example_block(n: int, demo: Demonstration) -> str:
    return f"{_EXAMPLE_HEAD.format(n=n)}\n{_demo_input(demo)}\nAnswer:\n```json\n{demo.target}\n```"


def _examples(demos: Sequence[Demonstration]) -> str:
    if not demos:
        return ""
    blocks = [_example_block(i, d) for i, d in enumerate(demos, 1)]
    return "Examples:\n\n" + "\n\n".join(blocks)


def _query_block(query: Instance) -> str:
    return f"{_QUERY_HEAD}\nText: {query.text}"


def _render(template: PromptTemplate, values: dict[str, str]) -> list[tuple[str, str]]:
    missing = sorted({p for p in template.placeholders if p not in values})
    if missing:
        raise PromptError(f"{template.task_kind} template has unresolved placeholder(s) {missing}")
    out = []
    for name, body in template.sections:
        text = _SLOT.sub(lambda m: values[m.group(1)], body).strip("\n")
        if text.strip():
            out.append((name, text))
    return out


def _digest(task_kind: str, template: PromptTemplate, payload: dict[str, Any]) -> str:
    doc = {"task_kind": task_kind, "template": [list(s) for s in template.sections], **payload}
    return sha256_text(json.dumps(doc, sort_keys=True, ensure_ascii=False))


def _demo_payload(demos: Sequence[Demonstration]) -> list[dict[str, Any]]:
    return [
        {"id": d.instance_id, "input": d.input_text, "target": d.target, "kind": d.task_kind, "sim": d.similarity}
        for d in demos
    ]


def _bundle(
    template: PromptTemplate,
    values: dict[str, str],
    demos: Sequence[Demonstration],
    query: Instance,
    payload: dict[str, Any],
    options: PromptOptions,
) -> PromptBundle:
    sections = _render(template, values)
    text = "\n\n".join(body for _, body in sections)
    if options.multi_turn:
        messages = _multi_turn(template, values, demos)
    else:
        messages = ({"role": "user", "content": text},)
    payload = {**payload, "query": {"id": query.id, "text": query.text}, "options": _options_payload(options)}
    digest = _digest(template.task_kind, template, {**payload, "values": values})
    return PromptBundle(template.task_kind, text, tuple(demos), query.id, digest, messages)


def _options_payload(options: PromptOptions) -> dict[str, Any]:
    return {"demo_order": options.demo_order, "multi_turn": options.multi_turn}


def _multi_turn(
    template: PromptTemplate, values: dict[str, str], demos: Sequence[Demonstration]
) -> tuple[dict[str, str], ...]:
    """Instructions, then one user/assistant pair per demonstration, then the
    sections from the examples slot onwards (with the examples left out)."""
    split = next(
        (i for i, (_, body) in enumerate(template.sections) if "examples" in _SLOT.findall(body)),
        len(template.sections),
    )
    blank = {**values, "examples": ""}
    head = PromptTemplate(template.task_kind, template.sections[:split]) if split else None
    tail = PromptTemplate(template.task_kind, template.sections[split:]) if split < len(template.sections) else None
    messages = []
    if head is not None:
        messages.append({"role": "user", "content": "\n\n".join(b for _, b in _render(head, blank))})
    for d in demos:
        messages.append({"role": "user", "content": _demo_input(d)})
        messages.append({"role": "assistant", "content": f"```json\n{d.target}\n```"})
    if tail is not None:
        messages.append({"role": "user", "content": "\n\n".join(b for _, b in _render(tail, blank))})
    return tuple(messages)


def _check_demos(demos: Sequence[Demonstration], kind: str) -> None:
    for d in demos:
        if d.task_kind != kind:
            raise PromptError(f"demonstration {d.instance_id!r} is {d.task_kind}, expected {kind}")


def _common_values(kind: str, options: PromptOptions, domain: str = "") -> dict[str, str]:
    desc = options.task_description or TASK_DESCRIPTIONS[kind]
    return {
        "task_description": desc.replace("{domain}", domain),
        "extraction_rules": _render_rules(options.extraction_rules or EXTRACTION_RULES[kind]),
        "output_format": OUTPUT_FORMATS[kind],
    }


def type_definitions(schema: EventSchema) -> str:
    return "\n".join(f"- {et.name}: {et.definition}" for et in schema.event_types)


def role_definitions(schema: EventSchema, order: Sequence[str] | None = None) -> str:
    """Event types with their role definitions, in ``order`` if given."""
    names = list(order) if order is not None else list(schema.type_names)
    blocks = []
    for name in names:
        et = schema.get(name)
        roles = "\n".join(f"    - {r.name}: {r.definition}" for r in et.roles) or "    (no roles)"
        blocks.append(f"- {et.name}: {et.definition}\n  Roles:\n{roles}")
    return "\n".join(blocks)


def _ordered(demos: Sequence[Demonstration], options: PromptOptions) -> list[Demonstration]:
    return list(reversed(demos)) if options.demo_order == "most-similar-last" else list(demos)


def build_ed_prompt(
    template: PromptTemplate,
    schema: EventSchema,
    demos: Sequence[Demonstration],
    query: Instance,
    options: PromptOptions | None = None,
) -> PromptBundle:
    """Event-detection prompt over the full schema.

    ``demos`` are expected most-similar-first; ``options.demo_order`` decides
    the order they appear in the prompt.
    """
    options = options or PromptOptions()
    if template.task_kind != "ed":
        raise PromptError(f"expected an ed template, got {template.task_kind}")
    _check_demos(demos, "ed")
    demos = _ordered(demos, options)
    values = {
        **_common_values("ed", options),
        "event_type_definitions": type_definitions(schema),
        "examples": _examples(demos),
        "query_text": _query_block(query),
    }
    return _bundle(template, values, demos, query, {"schema": schema.to_dict(), "demos": _demo_payload(demos)}, options)


def build_eae_prompt(
    template: PromptTemplate,
    schema_subset: EventSchema,
    detected: Sequence[tuple[str, str]],
    demos: Sequence[Demonstration],
    query: Instance,
    options: PromptOptions | None = None,
) -> PromptBundle:
    """Argument-extraction prompt scoped to the detected event types.

    ``schema_subset`` must hold exactly the detected types; anything else is a
    :class:`ScopingError`. Role sections follow detection order.
    """
    options = options or PromptOptions()
    if template.task_kind != "eae":
        raise PromptError(f"expected an eae template, got {template.task_kind}")
    if not detected:
        raise PromptError("argument extraction needs at least one detected event")
    _check_demos(demos, "eae")
    order = list(dict.fromkeys(etype for etype, _ in detected))
    extra = sorted(set(schema_subset.type_names) - set(order))
    if extra:
        raise ScopingError(f"schema subset contains undetected event type(s): {extra}")
    missing = sorted(set(order) - set(schema_subset.type_names))
    if missing:
        raise ScopingError(f"detected event type(s) missing from schema subset: {missing}")
    demos = _ordered(demos, options)
    values = {
        **_common_values("eae", options),
        "event_type_definitions": role_definitions(schema_subset, order),
        "examples": _examples(demos),
        "query_text": _query_block(query),
        "detected_events": _detected_lines(detected),
    }
    payload = {"schema": schema_subset.to_dict(), "demos": _demo_payload(demos), "detected": [list(p) for p in detected]}
    return _bundle(template, values, demos, query, payload, options)


def build_joint_prompt(
    template: PromptTemplate,
    schema: EventSchema,
    demos: Sequence[Demonstration],
    query: Instance,
    options: PromptOptions | None = None,
) -> PromptBundle:
    """Single-step prompt carrying every type and role definition."""
    options = options or PromptOptions()
    if template.task_kind != "joint":
        raise PromptError(f"expected a joint template, got {template.task_kind}")
    _check_demos(demos, "joint")
    demos = _ordered(demos, options)
    values = {
        **_common_values("joint", options),
        "event_type_definitions": role_definitions(schema),
        "examples": _examples(demos),
        "query_text": _query_block(query),
    }
    return _bundle(template, values, demos, query, {"schema": schema.to_dict(), "demos": _demo_payload(demos)}, options)


def build_synthesis_prompt(
    template: PromptTemplate,
    schema: EventSchema,
    seed_examples: Sequence[Instance],
    chosen_types: Sequence[tuple[str, Sequence[str]]],
    options: PromptOptions | None = None,
    query_id: str = "synthesis",
) -> PromptBundle:
    """Prompt asking for one new annotated report.

    ``chosen_types`` pairs each event type with the roles to mention.
    """
    options = options or PromptOptions()
    if template.task_kind != "synthesis":
        raise PromptError(f"expected a synthesis template, got {template.task_kind}")
    if not seed_examples:
        raise PromptError("synthesis needs at least one seed example")
    if not chosen_types:
        raise PromptError("synthesis needs at least one chosen event type")
    chosen_lines = []
    for etype, roles in chosen_types:
        et = schema.get(etype)
        if et is None:
            raise PromptError(f"chosen event type {etype!r} is not in schema {schema.name!r}")
        bad = [r for r in roles if et.role(r) is None]
        if bad:
            raise PromptError(f"roles {bad} are not defined for event type {etype!r}")
        args = "; ".join(f"{r} ({et.role(r).definition})" for r in roles) or "none"
        chosen_lines.append(f"- {et.name}: {et.definition}\n  Arguments: {args}")
    seeds = "\n\n".join(
        f"Seed {i}\nReport: {s.text}\nAnnotation:\n{formats.fenced(formats.synthesis_answer(s))}"
        for i, s in enumerate(seed_examples, 1)
    )
    values = {
        **_common_values("synthesis", options, domain=schema.name),
        "seed_examples": seeds,
        "chosen_event_types": "\n".join(chosen_lines),
    }
    payload = {
        "schema": schema.name,
        "seeds": [s.id for s in seed_examples],
        "chosen": [[t, list(r)] for t, r in chosen_types],
    }
    pseudo_query = Instance(id=query_id, text="")
    return _bundle(template, values, (), pseudo_query, payload, options)


def count_example_blocks(text: str) -> int:
    return len(re.findall(r"^Example \d+$", text, flags=re.MULTILINE))


def count_query_blocks(text: str) -> int:
    return len(re.findall(rf"^{_QUERY_HEAD}$", text, flags=re.MULTILINE))


# ------------------------------------------------------- demonstration choice


def select_demonstrations(
    mode: str,
    pool: Corpus,
    index: FlatIndex | None,
    embed_config: EmbeddingProviderConfig | None,
    query: Instance,
    k: int,
    *,
    task_kind: str = "ed",
    canonical_ids: Sequence[str] | None = None,
    provider=None,
) -> DemonstrationList:
    """Pick demonstrations for one query.

    ``none`` gives nothing; ``fixed`` takes the first ``k`` canonical pool
    instances for every query; ``rae`` retrieves the ``k`` pool instances most
    similar to the query (never the query itself), most-similar-first. When
    fewer than ``k`` are available the list is short and ``shortfall`` says by
    how much.
    """
    if mode not in DEMO_MODES:
        raise PromptError(f"demo mode must be one of {DEMO_MODES}, got {mode!r}")
    if k < 0:
        raise PromptError("k must be >= 0")
    if mode == "none" or k == 0:
        return DemonstrationList()
    if mode == "fixed":
        if not canonical_ids:
            raise PromptError("fixed demonstrations need a canonical example list")
        chosen = []
        for iid in list(canonical_ids)[:k]:
            inst = pool.get(iid)
            if inst is None:
                raise PromptError(f"canonical example {iid!r} is not in the demonstration pool")
            chosen.append(Demonstration.from_instance(inst, task_kind))
        return DemonstrationList(chosen, shortfall=k - len(chosen))

    if index is None or embed_config is None:
        raise PromptError("rae demonstrations need an index and an embedding config")
    qvec = embed_text(embed_config, query.text, provider=provider)
    hits = index_query(index, qvec, k, exclude={query.id})
    chosen = []
    for hit in hits:
        inst = pool.get(hit.instance_id)
        if inst is None:
            raise PromptError(f"index entry {hit.instance_id!r} is not in the demonstration pool")
        chosen.append(Demonstration.from_instance(inst, task_kind, similarity=hit.score))
    return DemonstrationList(chosen, shortfall=k - len(chosen))
