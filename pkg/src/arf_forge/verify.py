"""Answer re-derivation from ground-truth records.

Every question's correct option is recomputed here from the stored
anomaly records and the persisted series values, without touching the
stored ``correct_index``. Generation runs this as a soundness gate
before a benchmark is finalized, and the oracle baseline answers
through it, so a disagreement always means corrupted ground truth.
"""

from __future__ import annotations

import math

import numpy as np

from .anomalies import AnomalyRecord, compute_magnitude_arrays
from .errors import IntegrityError
from .questions import (
    CATEGORY_OPTION_TEXT,
    CORRELATION_OPTIONS,
    END_SENTINEL,
    INDICATOR_OPTIONS,
    NO_ANOMALY,
    START_SENTINEL,
    Category,
    Question,
    parse_timestamp,
    shared_event_records,
)
from .synth import TimeSeries


def recompute_magnitude(series: TimeSeries, record: AnomalyRecord) -> float:
    """Severity from the stored counterfactual and the observed values."""
    if record.counterfactual is None:
        raise IntegrityError("record is missing its counterfactual window")
    observed = series.values[record.window(), list(record.channels)]
    if observed.shape != record.counterfactual.shape:
        raise IntegrityError("counterfactual shape does not match the record window")
    return compute_magnitude_arrays(record.counterfactual, observed)


def _index_of_option(question: Question, text: str) -> int:
    try:
        return question.options.index(text)
    except ValueError:
        raise IntegrityError(
            f"{question.question_id}: derived answer {text!r} is not an option"
        ) from None


def _nearest_timestamp_index(question: Question, target, stamps: list[tuple[int, float]]) -> int:
    # stamps: (option index, seconds distance); unique minimum required.
    ranked = sorted(stamps, key=lambda x: x[1])
    if len(ranked) < 2 or ranked[0][1] == ranked[1][1]:
        raise IntegrityError(f"{question.question_id}: no unique nearest timestamp")
    return ranked[0][0]


def _derive_presence(question: Question, records: list[AnomalyRecord]) -> int:
    return _index_of_option(question, "Yes" if records else "No")


def _derive_identification(
    question: Question, series: TimeSeries, records: list[AnomalyRecord]
) -> int:
    triples = [o for o in question.options if o.count(" and ") == 2]
    if len(triples) != 1:
        raise IntegrityError(f"{question.question_id}: expected one triplet option")
    listed_names = triples[0].split(" and ")
    try:
        listed = {series.channel_names.index(n) for n in listed_names}
    except ValueError:
        raise IntegrityError(f"{question.question_id}: option names an unknown channel") from None
    anomalous = {c for r in records for c in r.channels}
    hit = sorted(listed & anomalous)
    if not hit:
        return _index_of_option(question, NO_ANOMALY)
    if len(hit) == 1:
        return _index_of_option(question, series.channel_names[hit[0]])
    names = sorted(series.channel_names[c] for c in hit)
    return _index_of_option(question, " and ".join(names))


def _derive_start(question: Question, series: TimeSeries, records: list[AnomalyRecord]) -> int:
    if not records:
        return _index_of_option(question, NO_ANOMALY)
    first = min(records, key=lambda r: (r.start_idx, r.end_idx))
    if first.began_before_window:
        return _index_of_option(question, START_SENTINEL)
    truth = series.timestamp_at(first.start_idx)
    stamps = []
    for i, opt in enumerate(question.options):
        if opt in (NO_ANOMALY, START_SENTINEL):
            continue
        dist = abs((parse_timestamp(opt) - truth).total_seconds())
        stamps.append((i, dist))
    return _nearest_timestamp_index(question, truth, stamps)


def _derive_end(question: Question, series: TimeSeries, records: list[AnomalyRecord]) -> int:
    if not records:
        return _index_of_option(question, NO_ANOMALY)
    last = max(records, key=lambda r: (r.end_idx, r.start_idx))
    if last.end_idx >= series.n_steps:
        return _index_of_option(question, END_SENTINEL)
    truth = series.timestamp_at(last.end_idx - 1)
    stamps = []
    for i, opt in enumerate(question.options):
        if opt in (NO_ANOMALY, END_SENTINEL):
            continue
        dist = abs((parse_timestamp(opt) - truth).total_seconds())
        stamps.append((i, dist))
    return _nearest_timestamp_index(question, truth, stamps)


def _derive_magnitude(question: Question, series: TimeSeries, records: list[AnomalyRecord]) -> int:
    if not records:
        return _index_of_option(question, NO_ANOMALY)
    magnitudes = [recompute_magnitude(series, r) for r in records]
    m = max(magnitudes)
    if m <= 0:
        raise IntegrityError(f"{question.question_id}: no positive severity to grade")
    best = None
    best_dist = None
    for i, opt in enumerate(question.options):
        if opt == NO_ANOMALY:
            continue
        rung = float(opt)
        dist = abs(math.log(rung) - math.log(m))
        if best_dist is None or dist < best_dist:
            best, best_dist = i, dist
        elif dist == best_dist:
            raise IntegrityError(f"{question.question_id}: tie between magnitude rungs")
    if best is None:
        raise IntegrityError(f"{question.question_id}: no numeric options")
    return best


def _derive_categorization(
    question: Question, series: TimeSeries, records: list[AnomalyRecord]
) -> int:
    if not records:
        return _index_of_option(question, NO_ANOMALY)
    magnitudes = [recompute_magnitude(series, r) for r in records]
    top = records[int(np.argmax(magnitudes))]
    return _index_of_option(question, CATEGORY_OPTION_TEXT[top.kind])


def _derive_correlation(
    question: Question,
    records_1: list[AnomalyRecord],
    records_2: list[AnomalyRecord],
) -> int:
    if not records_1 and not records_2:
        return _index_of_option(question, CORRELATION_OPTIONS[0])
    if records_1 and not records_2:
        return _index_of_option(question, CORRELATION_OPTIONS[2])
    if records_2 and not records_1:
        return _index_of_option(question, CORRELATION_OPTIONS[3])
    if shared_event_records(records_1, records_2) is not None:
        return _index_of_option(question, CORRELATION_OPTIONS[4])
    return _index_of_option(question, CORRELATION_OPTIONS[1])


def _derive_indicator(
    question: Question,
    series_1: TimeSeries,
    records_1: list[AnomalyRecord],
    series_2: TimeSeries,
    records_2: list[AnomalyRecord],
) -> int:
    if not records_1 or not records_2:
        return _index_of_option(question, INDICATOR_OPTIONS[4])
    pair = shared_event_records(records_1, records_2)
    if pair is None:
        return _index_of_option(question, INDICATOR_OPTIONS[2])
    r1, r2 = pair
    # Order from the injected windows themselves, not the stored lags.
    t1 = series_1.timestamp_at(r1.start_idx)
    t2 = series_2.timestamp_at(r2.start_idx)
    if t1 < t2:
        return _index_of_option(question, INDICATOR_OPTIONS[0])
    if t1 > t2:
        return _index_of_option(question, INDICATOR_OPTIONS[1])
    return _index_of_option(question, INDICATOR_OPTIONS[3])


def derive_correct_index(
    question: Question,
    series_by_id: dict[str, TimeSeries],
    records_by_id: dict[str, list[AnomalyRecord]],
) -> int:
    """Recompute the correct option index for ``question``."""
    sid = question.series_ids[0]
    if sid not in series_by_id:
        raise IntegrityError(f"{question.question_id}: unknown series {sid}")
    series = series_by_id[sid]
    records = records_by_id.get(sid, [])
    cat = question.category
    if cat == Category.PRESENCE:
        return _derive_presence(question, records)
    if cat == Category.IDENTIFICATION:
        return _derive_identification(question, series, records)
    if cat == Category.START_TIME:
        return _derive_start(question, series, records)
    if cat == Category.END_TIME:
        return _derive_end(question, series, records)
    if cat == Category.MAGNITUDE:
        return _derive_magnitude(question, series, records)
    if cat == Category.CATEGORIZATION:
        return _derive_categorization(question, series, records)
    sid2 = question.series_ids[1]
    if sid2 not in series_by_id:
        raise IntegrityError(f"{question.question_id}: unknown series {sid2}")
    series_2 = series_by_id[sid2]
    records_2 = records_by_id.get(sid2, [])
    if cat == Category.CORRELATION:
        return _derive_correlation(question, records, records_2)
    if cat == Category.INDICATOR:
        return _derive_indicator(question, series, records, series_2, records_2)
    raise IntegrityError(f"{question.question_id}: unknown category {cat}")


def check_question(
    question: Question,
    series_by_id: dict[str, TimeSeries],
    records_by_id: dict[str, list[AnomalyRecord]],
) -> None:
    """Raise if the stored correct index disagrees with re-derivation."""
    derived = derive_correct_index(question, series_by_id, records_by_id)
    if derived != question.correct_index:
        raise IntegrityError(
            f"{question.question_id}: stored answer {question.correct_index} "
            f"({question.options[question.correct_index]!r}) but derived {derived} "
            f"({question.options[derived]!r})"
        )
