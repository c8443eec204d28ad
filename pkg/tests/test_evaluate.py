from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evextract.corpus import ArgumentMention, Corpus, EventRecord, Instance, Span
from evextract.errors import ScoringError
from evextract.evaluate import compare_runs, f1_score, normalize, score
from evextract.pipeline import PredictedArgument, PredictedEvent, PredictionRecord


def _gold_event(text, etype, trig, args=()):
    s = text.index(trig)
    mentions = []
    for role, val in args:
        a = text.index(val)
        mentions.append(ArgumentMention(role, Span(a, a + len(val), val)))
    return EventRecord(etype, Span(s, s + len(trig), trig), tuple(mentions))


def _pred(etype, trig, args=(), span=None):
    return PredictedEvent(etype, trig, span, tuple(PredictedArgument(r, v) for r, v in args))


def four_gold_fixture():
    text = "The Alba departed Aden, arrived Muscat, passed Salalah and hailed Duqm."
    gold = Instance(
        "f1",
        text,
        (
            _gold_event(text, "depart", "departed"),
            _gold_event(text, "arrive", "arrived"),
            _gold_event(text, "pass", "passed"),
            _gold_event(text, "hail", "hailed"),
        ),
    )
    preds = [
        PredictionRecord("f1", [_pred("depart", "Departed "), _pred("arrive", "arrived"), _pred("detect", "passed")])
    ]
    return Corpus("maritime", "test", (gold,)), preds


def test_two_of_three_against_four_gold():
    gold, preds = four_gold_fixture()
    rep = score(gold, preds)
    assert abs(rep.trig_precision - 2 / 3) <= 1e-9
    assert abs(rep.trig_recall - 1 / 2) <= 1e-9
    assert abs(rep.trig_f1 - 4 / 7) <= 1e-9


def test_normalization_trims_folds_and_collapses():
    assert normalize("  The   Blue\tStar ") == "the blue star"
    assert normalize("STRASSE") == normalize("straße")


def test_no_predictions_gives_zero_precision_not_error(seeds):
    rep = score(seeds, [])
    assert rep.trig_precision == 0.0 and rep.trig_recall == 0.0 and rep.trig_f1 == 0.0


def test_unknown_and_duplicate_prediction_ids_raise(seeds):
    with pytest.raises(ScoringError):
        score(seeds, [PredictionRecord("nope")])
    with pytest.raises(ScoringError):
        score(seeds, [PredictionRecord(seeds.instances[0].id)] * 2)


def test_duplicate_gold_items_match_with_multiplicity():
    text = "She passed, then passed again."
    ev = _gold_event(text, "pass", "passed")
    gold = Corpus("m", "test", (Instance("d", text, (ev, ev)),))
    one = score(gold, [PredictionRecord("d", [_pred("pass", "passed")])])
    three = score(gold, [PredictionRecord("d", [_pred("pass", "passed")] * 3)])
    assert (one.trigger.matched, one.trig_recall) == (1, 0.5)
    assert (three.trigger.matched, three.trig_precision) == (2, 2 / 3)


def test_span_strictness_requires_offsets():
    text = "The Alba departed Aden."
    gold = Corpus("m", "test", (Instance("s", text, (_gold_event(text, "depart", "departed", [("location", "Aden")]),)),))
    no_span = [PredictionRecord("s", [_pred("depart", "departed", [("location", "Aden")])])]
    good = [PredictionRecord("s", [PredictedEvent("depart", "departed", Span(9, 17, "departed"))])]
    assert score(gold, no_span).trig_f1 == 1.0
    assert score(gold, no_span, strictness="span").trig_f1 == 0.0
    assert score(gold, good, strictness="span").trig_f1 == 1.0


def test_argument_needs_matching_event_type_unless_relaxed():
    text = "The Alba departed Aden."
    gold = Corpus("m", "test", (Instance("s", text, (_gold_event(text, "depart", "departed", [("location", "Aden")]),)),))
    wrong_type = [PredictionRecord("s", [_pred("transit", "departed", [("location", "Aden")])])]
    assert score(gold, wrong_type).arg_f1 == 0.0
    assert score(gold, wrong_type, arg_requires_type=False).arg_f1 == 1.0


def test_self_score_is_perfect(seeds):
    preds = [
        PredictionRecord(
            i.id,
            [
                PredictedEvent(
                    e.event_type, e.trigger.text, e.trigger, tuple(PredictedArgument(a.role, a.span.text, a.span) for a in e.arguments)
                )
                for e in i.events
            ],
        )
        for i in seeds
    ]
    for strictness in ("string", "span"):
        rep = score(seeds, preds, strictness)
        assert rep.trig_f1 == rep.arg_f1 == 1.0
        assert set(rep.per_type) == {e.event_type for i in seeds for e in i.events}


def test_report_serialization_states_strictness(seeds):
    rep = score(seeds, [])
    assert rep.to_dict()["strictness"] == "string"
    assert "strictness: string" in rep.render_text()


def test_comparison_table_deltas(seeds):
    gold, preds = four_gold_fixture()
    base = score(gold, [])
    better = score(gold, preds)
    table = compare_runs([("zero-shot", base), ("5-shot RAE", better)])
    assert table.rows[1].trig_delta == pytest.approx(4 / 7)
    csv_lines = table.to_csv().splitlines()
    assert csv_lines[0].startswith("run,") and csv_lines[2].startswith("5-shot RAE,")
    with pytest.raises(ScoringError):
        compare_runs([("only", base)])


# ----------------------------------------------------- property-based checks

TYPES = ["depart", "arrive", "pass"]
ROLES = ["date", "location"]
WORDS = ["alpha", "Beta", "gamma", " delta"]


@st.composite
def event(draw):
    return (
        draw(st.sampled_from(TYPES)),
        draw(st.sampled_from(WORDS)),
        tuple(draw(st.lists(st.tuples(st.sampled_from(ROLES), st.sampled_from(WORDS)), max_size=3))),
    )


@st.composite
def fixture(draw):
    n = draw(st.integers(1, 6))
    insts = []
    for i in range(n):
        insts.append((f"i{i}", draw(st.lists(event(), max_size=4)), draw(st.lists(event(), max_size=4))))
    return insts


def _build(fx):
    text = " ".join(w.strip() for w in WORDS)
    gold_insts, preds = [], []
    for iid, gold_events, pred_events in fx:
        evs = []
        for etype, trig, args in gold_events:
            t = trig.strip()
            s = text.index(t)
            ams = tuple(ArgumentMention(r, Span(text.index(v.strip()), text.index(v.strip()) + len(v.strip()), v.strip())) for r, v in args)
            evs.append(EventRecord(etype, Span(s, s + len(t), t), ams))
        gold_insts.append(Instance(iid, text, tuple(evs)))
        preds.append(PredictionRecord(iid, [_pred(et, tr, args) for et, tr, args in pred_events]))
    return Corpus("m", "test", tuple(gold_insts)), preds


def _brute(fx):
    """Greedy pairing over explicit (gold, pred) lists; with exact-key
    matching, greedy pairing is a maximum matching."""
    counts = {"t": [0, 0, 0], "a": [0, 0, 0]}
    for _, gold_events, pred_events in fx:
        for level in ("t", "a"):
            if level == "t":
                g = [(et, normalize(tr)) for et, tr, _ in gold_events]
                p = [(et, normalize(tr)) for et, tr, _ in pred_events]
            else:
                g = [(et, r, normalize(v)) for et, _, args in gold_events for r, v in args]
                p = [(et, r, normalize(v)) for et, _, args in pred_events for r, v in args]
            used = [False] * len(g)
            m = 0
            for x in p:
                for j, y in enumerate(g):
                    if not used[j] and x == y:
                        used[j] = True
                        m += 1
                        break
            counts[level][0] += len(g)
            counts[level][1] += len(p)
            counts[level][2] += m
    out = {}
    for level, (g, p, m) in counts.items():
        prec = m / p if p else 0.0
        rec = m / g if g else 0.0
        out[level] = f1_score(prec, rec)
    return out


@settings(max_examples=150)
@given(fixture())
def test_micro_f1_matches_brute_force(fx):
    gold, preds = _build(fx)
    rep = score(gold, preds)
    want = _brute(fx)
    assert rep.trig_f1 == pytest.approx(want["t"], abs=1e-12)
    assert rep.arg_f1 == pytest.approx(want["a"], abs=1e-12)
    assert rep.argument.matched <= rep.argument.gold


@settings(max_examples=150)
@given(fixture(), st.data())
def test_removing_a_prediction_never_raises_recall(fx, data):
    gold, preds = _build(fx)
    before = score(gold, preds)
    nonempty = [i for i, (_, _, p) in enumerate(fx) if p]
    if not nonempty:
        return
    i = data.draw(st.sampled_from(nonempty))
    j = data.draw(st.integers(0, len(fx[i][2]) - 1))
    iid, g, p = fx[i]
    fx2 = list(fx)
    fx2[i] = (iid, g, p[:j] + p[j + 1 :])
    after = score(*_build(fx2))
    assert after.trig_recall <= before.trig_recall
    assert after.arg_recall <= before.arg_recall


@settings(max_examples=150)
@given(fixture(), st.integers(0, 5))
def test_adding_an_unmatched_prediction_never_raises_precision(fx, where):
    gold, preds = _build(fx)
    before = score(gold, preds)
    i = where % len(fx)
    iid, g, p = fx[i]
    fx2 = list(fx)
    fx2[i] = (iid, g, p + [("hail", "alpha", (("destination", "gamma"),))])  # type never in gold
    after = score(*_build(fx2))
    assert after.trig_precision <= before.trig_precision
    assert after.arg_precision <= before.arg_precision
