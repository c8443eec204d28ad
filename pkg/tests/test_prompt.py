from __future__ import annotations

import numpy as np
import pytest

from evextract.corpus import Instance
from evextract.embed import EmbeddingProviderConfig, embed_batch
from evextract.errors import PromptError, ScopingError
from evextract.index import build_index
from evextract.prompt import (
    Demonstration,
    PromptOptions,
    build_eae_prompt,
    build_ed_prompt,
    build_joint_prompt,
    build_synthesis_prompt,
    count_example_blocks,
    count_query_blocks,
    default_template,
    parse_template,
    select_demonstrations,
)
from evextract.schema import schema_subset

EMB = EmbeddingProviderConfig(dim=256)


@pytest.fixture(scope="module")
def seed_index(seeds):
    return build_index(zip((i.id for i in seeds), embed_batch(EMB, [i.text for i in seeds])), metric="cosine")


def _detected_pair(inst, etype):
    ev = next(e for e in inst.events if e.event_type == etype)
    return (etype, ev.trigger.text)


def test_template_rejects_unknown_and_repeated_placeholders():
    with pytest.raises(PromptError, match="unknown"):
        parse_template("@@ task_kind: ed\n@@ section: a\n{{query_text}} {{mystery}}")
    with pytest.raises(PromptError, match="more than once"):
        parse_template("@@ task_kind: ed\n@@ section: a\n{{query_text}} {{query_text}}")
    with pytest.raises(PromptError):
        parse_template("{{query_text}}")


def test_template_loads_from_file(tmp_path):
    p = tmp_path / "ed.txt"
    p.write_text("@@ task_kind: ed\n@@ section: all\nTypes:\n{{event_type_definitions}}\n{{examples}}\n{{query_text}}\nAnswer:")
    from evextract.prompt import load_template

    t = load_template(p)
    assert t.task_kind == "ed" and t.placeholders == ["event_type_definitions", "examples", "query_text"]


@pytest.mark.parametrize("k", [0, 1, 5])
def test_example_block_count_matches_demonstrations(seeds, schema, k):
    demos = [Demonstration.from_instance(i, "ed") for i in list(seeds)[1 : 1 + k]]
    b = build_ed_prompt(default_template("ed"), schema, demos, seeds.instances[0])
    assert count_example_blocks(b.text) == k
    assert count_query_blocks(b.text) == 1
    assert len(b.demonstrations) == k


def test_query_text_is_embedded_verbatim(seeds, schema):
    b = build_ed_prompt(default_template("ed"), schema, [], seeds.instances[3])
    assert seeds.instances[3].text in b.text


def test_ed_prompt_lists_every_type(seeds, schema):
    b = build_ed_prompt(default_template("ed"), schema, [], seeds.instances[0])
    for et in schema.event_types:
        assert et.definition in b.text


def test_eae_prompt_is_scoped_to_detected_types(seeds, schema):
    inst = next(i for i in seeds if len({e.event_type for e in i.events}) >= 2)
    types = list(dict.fromkeys(e.event_type for e in inst.events))
    pairs = [_detected_pair(inst, t) for t in types]
    b = build_eae_prompt(default_template("eae"), schema_subset(schema, types), pairs, [], inst)
    for et in schema.event_types:
        for role in et.roles:
            assert (role.definition in b.text) == (et.name in types)


def test_eae_scoping_mismatch_is_an_error(seeds, schema):
    inst = seeds.instances[0]
    etype = inst.events[0].event_type
    other = next(t for t in schema.type_names if t != etype)
    with pytest.raises(ScopingError):
        build_eae_prompt(default_template("eae"), schema_subset(schema, [etype, other]), [_detected_pair(inst, etype)], [], inst)
    with pytest.raises(ScopingError):
        build_eae_prompt(default_template("eae"), schema_subset(schema, [other]), [_detected_pair(inst, etype)], [], inst)


def test_joint_prompt_carries_all_role_definitions(seeds, schema):
    b = build_joint_prompt(default_template("joint"), schema, [], seeds.instances[0])
    assert all(r.definition in b.text for et in schema.event_types for r in et.roles)


def test_digest_changes_with_inputs(seeds, schema):
    t = default_template("ed")
    a = build_ed_prompt(t, schema, [], seeds.instances[0])
    b = build_ed_prompt(t, schema, [], seeds.instances[1])
    c = build_ed_prompt(t, schema, [Demonstration.from_instance(seeds.instances[2], "ed")], seeds.instances[0])
    d = build_ed_prompt(t, schema, [], seeds.instances[0], PromptOptions(task_description="Find events."))
    assert len({a.config_digest, b.config_digest, c.config_digest, d.config_digest}) == 4
    assert a.config_digest == build_ed_prompt(t, schema, [], seeds.instances[0]).config_digest


def test_demo_order_flag_reverses_examples(seeds, schema):
    demos = [Demonstration.from_instance(i, "ed") for i in list(seeds)[1:4]]
    t = default_template("ed")
    first = build_ed_prompt(t, schema, demos, seeds.instances[0])
    last = build_ed_prompt(t, schema, demos, seeds.instances[0], PromptOptions(demo_order="most-similar-last"))
    assert [d.instance_id for d in last.demonstrations] == [d.instance_id for d in reversed(first.demonstrations)]


def test_multi_turn_messages_alternate_roles(seeds, schema):
    demos = [Demonstration.from_instance(i, "ed") for i in list(seeds)[1:3]]
    b = build_ed_prompt(default_template("ed"), schema, demos, seeds.instances[0], PromptOptions(multi_turn=True))
    roles = [m["role"] for m in b.messages]
    assert roles[-1] == "user"
    assert roles.count("assistant") == 2


def test_demonstration_target_must_parse():
    with pytest.raises(PromptError):
        Demonstration("x", "text", "not json", "ed")


def test_synthesis_prompt_names_chosen_types_and_seeds(seeds, schema):
    chosen = [("hail", ["ship name", "location"])]
    b = build_synthesis_prompt(default_template("synthesis"), schema, list(seeds)[:3], chosen)
    et = schema.get("hail")
    assert et.definition in b.text
    assert et.role("ship name").definition in b.text
    assert all(s.text in b.text for s in list(seeds)[:3])
    with pytest.raises(PromptError):
        build_synthesis_prompt(default_template("synthesis"), schema, list(seeds)[:3], [("hail", ["weapon"])])


def test_rae_selection_is_sorted_excludes_query_and_has_k(seeds, seed_index):
    q = seeds.instances[0]
    demos = select_demonstrations("rae", seeds, seed_index, EMB, q, 5)
    assert len(demos) == 5 and demos.shortfall == 0
    sims = [d.similarity for d in demos]
    assert sims == sorted(sims, reverse=True)
    assert q.id not in [d.instance_id for d in demos]


def test_rae_shortfall_when_pool_is_small(seeds, seed_index):
    demos = select_demonstrations("rae", seeds, seed_index, EMB, seeds.instances[0], 25)
    assert len(demos) == 19 and demos.shortfall == 6


def test_fixed_selection_is_query_independent(seeds):
    ids = [i.id for i in list(seeds)[:3]]
    a = select_demonstrations("fixed", seeds, None, None, seeds.instances[5], 2, canonical_ids=ids)
    b = select_demonstrations("fixed", seeds, None, None, seeds.instances[9], 2, canonical_ids=ids)
    assert a == b and [d.instance_id for d in a] == ids[:2]


def test_unknown_query_is_fine_for_rae(seeds, seed_index):
    q = Instance("new", "A bulk carrier was hailed by the coast guard near Aden.")
    demos = select_demonstrations("rae", seeds, seed_index, EMB, q, 3, task_kind="eae")
    assert len(demos) == 3 and all(d.task_kind == "eae" for d in demos)
    assert np.all(np.diff([d.similarity for d in demos]) <= 0)
