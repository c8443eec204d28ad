"""Offline backends that answer extraction prompts from gold annotations.

They read the query text back out of the prompt, look the instance up in a
gold corpus and reply in the requested answer format. Used for dry runs and
for end-to-end tests that must score perfectly.
"""

from __future__ import annotations

import re
from collections.abc import Callable

from . import formats
from .corpus import Corpus, Instance
from .llm import CallableBackend
from .prompt import OUTPUT_FORMATS

_QUERY_MARK = "Query\nText: "
_DETECTED_LINE = re.compile(r'^- (\S+) \(trigger: "(.*)"\)$', re.MULTILINE)


def task_kind_of(prompt: str) -> str:
    for kind in ("joint", "eae", "ed", "synthesis"):
        if OUTPUT_FORMATS[kind] in prompt:
            return kind
    raise ValueError("prompt does not carry a known output format")


def query_instance(prompt: str, corpus: Corpus) -> Instance:
    """Find the gold instance whose text is the prompt's query text."""
    pos = prompt.rfind(_QUERY_MARK)
    if pos < 0:
        raise ValueError("prompt has no query block")
    rest = prompt[pos + len(_QUERY_MARK) :]
    by_text = {inst.text: inst for inst in corpus}
    cuts = [m.start() for m in re.finditer("\n", rest)] + [len(rest)]
    for cut in reversed(cuts):
        inst = by_text.get(rest[:cut])
        if inst is not None:
            return inst
    raise KeyError("query text not found in gold corpus")


def detected_pairs(prompt: str) -> list[tuple[str, str]]:
    """(event_type, trigger) pairs listed after the query block."""
    tail = prompt[prompt.rfind(_QUERY_MARK) :]
    return _DETECTED_LINE.findall(tail)


def gold_answer(prompt: str, inst: Instance) -> str:
    kind = task_kind_of(prompt)
    if kind == "ed":
        return formats.fenced(formats.ed_answer(inst.events))
    if kind == "joint":
        return formats.fenced(formats.eae_answer(inst.events))
    wanted = set(detected_pairs(prompt))
    events = [ev for ev in inst.events if (ev.event_type, ev.trigger.text) in wanted]
    return formats.fenced(formats.eae_answer(events))


def gold_echo_backend(gold: Corpus) -> CallableBackend:
    """Backend that answers every ED, EAE or joint prompt with the gold events."""
    return CallableBackend(lambda prompt: "Here is the answer.\n" + gold_answer(prompt, query_instance(prompt, gold)))


def injecting_backend(
    gold: Corpus,
    inject: Callable[[str, Instance, list], list],
) -> CallableBackend:
    """Gold echo whose decoded answer passes through ``inject(kind, inst, items)``
    before being sent back, for fault-injection tests."""

    def respond(prompt: str) -> str:
        inst = query_instance(prompt, gold)
        kind = task_kind_of(prompt)
        items = formats.extract_json(gold_answer(prompt, inst))
        return formats.fenced(inject(kind, inst, items))

    return CallableBackend(respond)

