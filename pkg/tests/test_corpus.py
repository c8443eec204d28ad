from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evextract.corpus import (
    ArgumentMention,
    EventRecord,
    Instance,
    Span,
    corpus_stats,
    dumps_corpus,
    instance_to_dict,
    load_corpus,
    validate_instance,
)
from evextract.errors import CorpusError


def _line(**kw):
    base = {
        "id": "a",
        "text": "The tanker departed Aden.",
        "granularity": "sentence",
        "events": [
            {
                "event_type": "depart",
                "trigger": {"start": 11, "end": 19, "text": "departed"},
                "arguments": [{"role": "location", "start": 20, "end": 24, "text": "Aden"}],
            }
        ],
    }
    base.update(kw)
    return json.dumps(base)


def test_seed_fixture_is_valid_and_grounded(seeds, schema):
    assert len(seeds) == 20
    for inst in seeds:
        assert validate_instance(inst, schema) == []
        for ev in inst.events:
            assert inst.text[ev.trigger.start : ev.trigger.end] == ev.trigger.text
            for a in ev.arguments:
                assert inst.text[a.span.start : a.span.end] == a.span.text
    assert {ev.event_type for inst in seeds for ev in inst.events} == set(schema.type_names)


def test_loads_valid_line(schema):
    c = load_corpus([_line()], schema)
    assert c.get("a").events[0].arguments[0].span == Span(20, 24, "Aden")


def test_absent_events_means_unlabeled(schema):
    obj = json.loads(_line())
    del obj["events"]
    c = load_corpus([json.dumps(obj)], schema)
    assert not c.get("a").labeled
    assert "events" not in instance_to_dict(c.get("a"))


def test_zero_events_is_legal(schema):
    c = load_corpus([_line(events=[])], schema)
    assert c.get("a").labeled and c.get("a").events == ()


def test_all_errors_are_collected(schema):
    bad_span = _line(id="b", events=[{"event_type": "depart", "trigger": {"start": 0, "end": 3, "text": "xyz"}, "arguments": []}])
    bad_type = _line(id="c", events=[{"event_type": "teleport", "trigger": {"start": 0, "end": 3, "text": "The"}, "arguments": []}])
    bad_role = _line(
        id="d",
        events=[
            {
                "event_type": "depart",
                "trigger": {"start": 11, "end": 19, "text": "departed"},
                "arguments": [{"role": "weapon", "start": 20, "end": 24, "text": "Aden"}],
            }
        ],
    )
    with pytest.raises(CorpusError) as exc:
        load_corpus([_line(), bad_span, bad_type, bad_role, _line()], schema)
    ids = exc.value.instance_ids
    assert {"a", "b", "c", "d"} <= set(ids)  # "a" is the duplicate id


def test_span_offsets_are_characters_not_bytes(schema):
    text = "Le navire a quitté Brest."
    i = text.index("quitté")
    line = json.dumps(
        {
            "id": "u",
            "text": text,
            "events": [{"event_type": "depart", "trigger": {"start": i, "end": i + 6, "text": "quitté"}, "arguments": []}],
        }
    )
    assert load_corpus([line], schema).get("u").events[0].trigger.text == "quitté"


def test_malformed_json_line_names_line(schema):
    with pytest.raises(CorpusError) as exc:
        load_corpus([_line(), "{oops"], schema)
    assert "2" in str(exc.value)


def test_stats_count_events_and_arguments(seeds):
    st_ = corpus_stats(seeds).to_dict()
    assert st_["instances"] == 20
    assert st_["events"] == 30
    assert st_["arguments"] == 106


_words = st.lists(st.sampled_from(["alpha", "beta", "gamma", "delta", "Ω", "naïve"]), min_size=2, max_size=8)


@st.composite
def instances(draw, idx):
    words = draw(_words)
    text = " ".join(words)
    events = []
    for _ in range(draw(st.integers(0, 2))):
        w = draw(st.integers(0, len(words) - 1))
        start = len(" ".join(words[:w])) + (1 if w else 0)
        trig = Span(start, start + len(words[w]), words[w])
        args = ()
        if draw(st.booleans()):
            args = (ArgumentMention("location", trig),)
        events.append(EventRecord(draw(st.sampled_from(["depart", "arrive"])), trig, args))
    return Instance(f"i{idx}", text, tuple(events), draw(st.sampled_from(["sentence", "document"])))


@settings(max_examples=50)
@given(st.integers(1, 5).flatmap(lambda n: st.tuples(*[instances(i) for i in range(n)])))
def test_round_trip_is_structural_identity(insts):
    from evextract.schema import maritime_schema

    schema = maritime_schema()
    c1 = load_corpus(dumps_corpus(insts).splitlines(), schema)
    c2 = load_corpus(dumps_corpus(c1).splitlines(), schema)
    assert list(c1) == list(insts)
    assert list(c2) == list(c1)


def test_user_supplied_schema_at_test_split_scale():
    from evextract.schema import schema_from_dict

    ace_like = schema_from_dict(
        {
            "name": "ace-like",
            "version": "0",
            "event_types": [
                {"name": "Conflict:Attack", "definition": "A violent act.", "roles": [{"name": "Attacker", "definition": "Agent."}]},
                {"name": "Movement:Transport", "definition": "Movement.", "roles": [{"name": "Destination", "definition": "Where to."}]},
            ],
        }
    )
    lines = []
    for i in range(832):
        text = f"Troops attacked town {i} and moved to base {i}."
        a = text.index("attacked")
        m = text.index("moved")
        b = text.index(f"base {i}")
        events = [
            {"event_type": "Conflict:Attack", "trigger": {"start": a, "end": a + 8, "text": "attacked"},
             "arguments": [{"role": "Attacker", "start": 0, "end": 6, "text": "Troops"}]},
            {"event_type": "Movement:Transport", "trigger": {"start": m, "end": m + 5, "text": "moved"},
             "arguments": [{"role": "Destination", "start": b, "end": b + len(f"base {i}"), "text": f"base {i}"}]},
        ]
        lines.append(json.dumps({"id": f"doc{i:04d}", "text": text, "events": events}))
    corpus = load_corpus(lines, ace_like)
    stats = corpus_stats(corpus).to_dict()
    assert (stats["instances"], stats["events"], stats["arguments"]) == (832, 1664, 1664)
