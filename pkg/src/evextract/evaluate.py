"""Trig-C / Arg-C micro precision, recall and F1.

A trigger counts as correct when its event type and normalized text match a
gold trigger of the same instance; an argument when its event type, role and
normalized text match. Matching is one-to-one with multiplicity: identical
keys pair off up to the smaller of the two counts. With ``strictness='span'``
the character offsets must match as well, so ungrounded predictions never
count.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

from .corpus import Corpus
from .errors import ScoringError
from .pipeline import PredictionRecord, rejection_totals

STRICTNESS = ("string", "span")


def normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass(frozen=True)
class LevelScore:
    gold: int
    predicted: int
    matched: int

    @property
    def precision(self) -> float:
        return self.matched / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.matched / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def __add__(self, other: LevelScore) -> LevelScore:
        return LevelScore(self.gold + other.gold, self.predicted + other.predicted, self.matched + other.matched)

    def to_dict(self) -> dict[str, Any]:
        return {
            "gold": self.gold,
            "predicted": self.predicted,
            "matched": self.matched,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


_ZERO = LevelScore(0, 0, 0)


@dataclass
class EvalReport:
    trigger: LevelScore
    argument: LevelScore
    per_type: dict[str, dict[str, LevelScore]] = field(default_factory=dict)
    strictness: str = "string"
    arg_requires_type: bool = True
    instances: int = 0
    parse_failures: int = 0
    hallucinations: dict[str, int] = field(default_factory=dict)

    @property
    def trig_precision(self) -> float:
        return self.trigger.precision

    @property
    def trig_recall(self) -> float:
        return self.trigger.recall

    @property
    def trig_f1(self) -> float:
        return self.trigger.f1

    @property
    def arg_precision(self) -> float:
        return self.argument.precision

    @property
    def arg_recall(self) -> float:
        return self.argument.recall

    @property
    def arg_f1(self) -> float:
        return self.argument.f1

    def to_dict(self) -> dict[str, Any]:
        return {
            "strictness": self.strictness,
            "arg_requires_type": self.arg_requires_type,
            "instances": self.instances,
            "parse_failures": self.parse_failures,
            "trig_c": self.trigger.to_dict(),
            "arg_c": self.argument.to_dict(),
            "per_type": {t: {k: v.to_dict() for k, v in lv.items()} for t, lv in sorted(self.per_type.items())},
            "hallucinations": dict(self.hallucinations),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_text(self) -> str:
        head = f"{'level':<8}{'gold':>7}{'pred':>7}{'match':>7}{'P':>9}{'R':>9}{'F1':>9}"
        lines = [f"strictness: {self.strictness}   instances: {self.instances}", head, "-" * len(head)]
        for name, lv in (("Trig-C", self.trigger), ("Arg-C", self.argument)):
            lines.append(
                f"{name:<8}{lv.gold:>7}{lv.predicted:>7}{lv.matched:>7}"
                f"{lv.precision:>9.4f}{lv.recall:>9.4f}{lv.f1:>9.4f}"
            )
        if self.per_type:
            lines += ["", f"{'event type':<16}{'trig F1':>9}{'arg F1':>9}{'gold':>6}"]
            for t, lv in sorted(self.per_type.items()):
                lines.append(f"{t:<16}{lv['trigger'].f1:>9.4f}{lv['argument'].f1:>9.4f}{lv['trigger'].gold:>6}")
        return "\n".join(lines) + "\n"


def _trigger_keys(events, strict_span: bool, *, gold: bool) -> Counter:
    keys: Counter = Counter()
    for ev in events:
        if gold:
            etype, text, span = ev.event_type, ev.trigger.text, ev.trigger
        else:
            etype, text, span = ev.event_type, ev.trigger, ev.trigger_span
        if strict_span:
            if span is None:
                keys[(etype, None)] += 1  # can never match a gold key
                continue
            keys[(etype, normalize(text), span.start, span.end)] += 1
        else:
            keys[(etype, normalize(text))] += 1
    return keys


def _argument_keys(events, strict_span: bool, with_type: bool, *, gold: bool) -> Counter:
    keys: Counter = Counter()
    for ev in events:
        for a in ev.arguments:
            if gold:
                role, text, span = a.role, a.span.text, a.span
            else:
                role, text, span = a.role, a.text, a.span
            base = (ev.event_type, role) if with_type else (None, role)
            if strict_span:
                if span is None:
                    keys[(*base, None)] += 1
                    continue
                keys[(*base, normalize(text), span.start, span.end)] += 1
            else:
                keys[(*base, normalize(text))] += 1
    return keys


def _by_type(keys: Counter, key_type) -> dict[str, Counter]:
    out: dict[str, Counter] = {}
    for k, n in keys.items():
        out.setdefault(key_type(k), Counter())[k] += n
    return out


def _level(gold: Counter, pred: Counter) -> LevelScore:
    return LevelScore(sum(gold.values()), sum(pred.values()), sum((gold & pred).values()))


def score(
    gold: Corpus,
    predictions: Sequence[PredictionRecord],
    strictness: str = "string",
    arg_requires_type: bool = True,
) -> EvalReport:
    """Micro-averaged Trig-C and Arg-C over the whole corpus.

    Gold instances without a prediction record count as predicting nothing.

    Raises:
        ScoringError: a prediction names an instance not in ``gold``, or one
            instance has more than one prediction record.
    """
    if strictness not in STRICTNESS:
        raise ScoringError(f"strictness must be one of {STRICTNESS}")
    strict = strictness == "span"
    by_id: dict[str, PredictionRecord] = {}
    for rec in predictions:
        if gold.get(rec.instance_id) is None:
            raise ScoringError(f"prediction for unknown instance id {rec.instance_id!r}")
        if rec.instance_id in by_id:
            raise ScoringError(f"duplicate prediction record for instance {rec.instance_id!r}")
        by_id[rec.instance_id] = rec

    trig = arg = _ZERO
    per_type: dict[str, dict[str, LevelScore]] = {}

    def bump(etype: str, level: str, s: LevelScore) -> None:
        slot = per_type.setdefault(etype, {"trigger": _ZERO, "argument": _ZERO})
        slot[level] = slot[level] + s

    for inst in gold:
        rec = by_id.get(inst.id)
        pred_events = rec.events if rec is not None else []
        g_t = _trigger_keys(inst.events, strict, gold=True)
        p_t = _trigger_keys(pred_events, strict, gold=False)
        g_a = _argument_keys(inst.events, strict, arg_requires_type, gold=True)
        p_a = _argument_keys(pred_events, strict, arg_requires_type, gold=False)
        trig += _level(g_t, p_t)
        arg += _level(g_a, p_a)

        gt, pt = _by_type(g_t, lambda k: k[0]), _by_type(p_t, lambda k: k[0])
        for etype in set(gt) | set(pt):
            bump(etype, "trigger", _level(gt.get(etype, Counter()), pt.get(etype, Counter())))
        if arg_requires_type:
            ga, pa = _by_type(g_a, lambda k: k[0]), _by_type(p_a, lambda k: k[0])
            for etype in set(ga) | set(pa):
                bump(etype, "argument", _level(ga.get(etype, Counter()), pa.get(etype, Counter())))

    recs = list(by_id.values())
    return EvalReport(
        trigger=trig,
        argument=arg,
        per_type=per_type,
        strictness=strictness,
        arg_requires_type=arg_requires_type,
        instances=len(gold),
        parse_failures=sum(r.parse_failed for r in recs),
        hallucinations=rejection_totals(recs),
    )


# --------------------------------------------------------------- comparison

REGIME_ORDER = ("zero-shot", "one-shot", "5-shot", "5-shot RAE")


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    trig: LevelScore
    arg: LevelScore
    trig_delta: float
    arg_delta: float


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    def render_text(self) -> str:
        width = max(12, *(len(r.label) for r in self.rows)) + 2
        head = f"{'run':<{width}}{'Trig-P':>8}{'Trig-R':>8}{'Trig-F1':>9}{'dTrig':>9}{'Arg-P':>8}{'Arg-R':>8}{'Arg-F1':>9}{'dArg':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(
                f"{r.label:<{width}}{r.trig.precision:>8.4f}{r.trig.recall:>8.4f}{r.trig.f1:>9.4f}{r.trig_delta:>+9.4f}"
                f"{r.arg.precision:>8.4f}{r.arg.recall:>8.4f}{r.arg.f1:>9.4f}{r.arg_delta:>+9.4f}"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "trig_p", "trig_r", "trig_f1", "trig_f1_delta", "arg_p", "arg_r", "arg_f1", "arg_f1_delta"])
        for r in self.rows:
            w.writerow(
                [r.label]
                + [f"{x:.6f}" for x in (r.trig.precision, r.trig.recall, r.trig.f1, r.trig_delta)]
                + [f"{x:.6f}" for x in (r.arg.precision, r.arg.recall, r.arg.f1, r.arg_delta)]
            )
        return buf.getvalue()


def compare_runs(reports: Sequence[tuple[str, EvalReport]]) -> ComparisonTable:
    """One row per run, in the given order, with F1 deltas against the first."""
    if len(reports) < 2:
        raise ScoringError("compare_runs needs at least two reports")
    base_t, base_a = reports[0][1].trig_f1, reports[0][1].arg_f1
    return ComparisonTable(
        tuple(
            ComparisonRow(label, rep.trigger, rep.argument, rep.trig_f1 - base_t, rep.arg_f1 - base_a)
            for label, rep in reports
        )
    )
