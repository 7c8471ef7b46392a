import math

import numpy as np
import pytest

from arf_forge.anomalies import AnomalyKind, inject
from arf_forge.errors import ConfigError, PairingError
from arf_forge.questions import (
    CORRELATION_OPTIONS,
    END_SENTINEL,
    INDICATOR_OPTIONS,
    NO_ANOMALY,
    SEMANTIC_CLASSES,
    START_SENTINEL,
    Category,
    Question,
    format_timestamp,
    gen_categorization,
    gen_correlation,
    gen_end_time,
    gen_identification,
    gen_indicator,
    gen_magnitude,
    gen_presence,
    gen_start_time,
    magnitude_ladder,
    nearest_rung_index,
    pair_series,
    parse_timestamp,
    read_questions,
    tie_radius,
    write_questions,
)
from arf_forge.rng import child_rng
from arf_forge.synth import SynthConfig, generate_series, parse_rfc3339

from test_anomalies import noise_series, record


def make_anomalous(n=1200, v=3, start=300, end=400, kind=AnomalyKind.LEVEL_SHIFT,
                   channels=(0,), factor=2.0, seed=0, series_id="s0", **kw):
    base = noise_series(n=n, v=v, seed=seed, series_id=series_id)
    r = record(kind, channels=channels, start=start, end=end, factor=factor, **kw)
    out = inject(base, [r])
    return out, [r]


def _classes(category, options, correct=0):
    q = Question(
        question_id="qx", category=category, text="t",
        captions=["c"], series_ids=["s"], series_paths=["p"],
        options=options, correct_index=correct,
    )
    return q.option_classes


def test_ladder_worked_example_25():
    rungs = magnitude_ladder(25.0)
    assert rungs == [1.0, 5.0, 25.0, 125.0]
    assert nearest_rung_index(rungs, 25.0) == 2


def test_ladder_worked_example_7():
    rungs = magnitude_ladder(7.0)
    assert rungs == [2.0, 4.0, 8.0, 16.0]
    assert nearest_rung_index(rungs, 7.0) == 2


def test_ladder_properties_random():
    rng = child_rng(0, "ladder")
    for _ in range(300):
        m = float(np.exp(rng.uniform(np.log(0.05), np.log(5000.0))))
        rungs = magnitude_ladder(m)
        assert len(rungs) == 4
        assert all(r > 0 for r in rungs)
        assert rungs == sorted(rungs)
        assert len(set(rungs)) == 4
        # Geometric ladder: constant ratio.
        ratios = [rungs[i + 1] / rungs[i] for i in range(3)]
        assert max(ratios) / min(ratios) == pytest.approx(1.0, rel=1e-9)
        # The ladder brackets m within two rungs on either side.
        assert rungs[0] <= m * ratios[0] and rungs[-1] >= m / ratios[0]
        # Independent check of the correct rung: brute force log distance.
        best = min(range(4), key=lambda i: abs(math.log(rungs[i]) - math.log(m)))
        assert nearest_rung_index(rungs, m) == best


def test_bin_semantic_identification():
    opts = ["host:h0", "host:h2", "host:h0 and host:h1", "host:h0 and host:h1 and host:h2", NO_ANOMALY]
    classes = _classes(Category.IDENTIFICATION, opts)
    assert classes[2] == "Two Channels"
    assert classes[3] == "Three Channels"
    assert classes[4] == "No Anomaly"
    # Lexicographic ordering of the two singles: h0 small, h2 large.
    assert classes[0] == "One Channel (small)"
    assert classes[1] == "One Channel (large)"


def test_bin_semantic_timestamps():
    stamps = ["2025-01-01 00:10:00", "2025-01-01 04:00:00", "2025-01-02 00:00:00"]
    cls = _classes(Category.START_TIME, stamps + [START_SENTINEL, NO_ANOMALY])
    assert cls == ["Early", "Medium", "Late", "Earliest", "No Anomaly"]
    cls_end = _classes(Category.END_TIME, stamps + [END_SENTINEL, NO_ANOMALY])
    assert cls_end == ["Early", "Medium", "Late", "Latest", "No Anomaly"]


def test_bin_semantic_magnitude():
    cls = _classes(Category.MAGNITUDE, ["5", "1", "25", "125", NO_ANOMALY])
    assert cls == ["Small", "Smallest", "Medium", "Large", "No Anomaly"]


def test_bin_semantic_categorization_merges():
    opts = ["Level Shift", "Transient Spike", "Change in Trend", "Change in Seasonality", NO_ANOMALY]
    assert _classes(Category.CATEGORIZATION, opts)[3] == "Change in Seasonality/Variance"
    opts2 = ["Level Shift", "Transient Spike", "Change in Trend", "Change in Variance", NO_ANOMALY]
    assert _classes(Category.CATEGORIZATION, opts2)[3] == "Change in Seasonality/Variance"


def test_question_rejects_bad_shape():
    with pytest.raises(ConfigError):
        Question(
            question_id="q0", category=Category.PRESENCE, text="t",
            captions=["c"], series_ids=["s"], series_paths=["p"],
            options=["Yes", "Yes"], correct_index=0,
        )
    with pytest.raises(ConfigError):
        Question(
            question_id="q0", category=Category.MAGNITUDE, text="t",
            captions=["c"], series_ids=["s"], series_paths=["p"],
            options=["1", "2", "3", NO_ANOMALY], correct_index=0,  # needs 5
        )


def test_presence_both_ways():
    series, records = make_anomalous()
    q = gen_presence(series, records, child_rng(0, "q"), "q0")
    assert q.options == ["Yes", "No"]
    assert q.options[q.correct_index] == "Yes"
    clean = noise_series()
    q2 = gen_presence(clean, [], child_rng(0, "q"), "q1")
    assert q2.options[q2.correct_index] == "No"


def test_identification_lists_true_channels():
    series, records = make_anomalous(v=5, channels=(1, 3))
    q = gen_identification(series, records, child_rng(1, "q"), "q0")
    assert len(q.options) == 5
    correct = q.options[q.correct_index]
    assert correct == "host:h1 and host:h3"
    # The triplet option exists and includes both true channels.
    triple = [o for o in q.options if o.count(" and ") == 2]
    assert len(triple) == 1
    assert NO_ANOMALY in q.options
    # Class coverage: exactly the five identification classes.
    assert sorted(q.option_classes) == sorted(SEMANTIC_CLASSES[Category.IDENTIFICATION])


def test_identification_clean_series():
    clean = noise_series(v=4)
    q = gen_identification(clean, [], child_rng(2, "q"), "q0")
    assert q.options[q.correct_index] == NO_ANOMALY


def test_identification_needs_three_channels():
    with pytest.raises(ConfigError):
        gen_identification(noise_series(v=2), [], child_rng(0, "q"), "q0")


def test_start_time_nearest_unique():
    for seed in range(12):
        series, records = make_anomalous(seed=seed, start=300 + 17 * seed, end=520 + 17 * seed)
        q = gen_start_time(series, records, child_rng(seed, "q"), f"q{seed}")
        truth = series.timestamp_at(records[0].start_idx)
        stamps = [o for o in q.options if o not in (NO_ANOMALY, START_SENTINEL)]
        assert len(stamps) == 3
        dists = sorted(abs((parse_timestamp(o) - truth).total_seconds()) for o in stamps)
        # Unique nearest with a clear margin.
        assert dists[0] < dists[1]
        nearest = min(stamps, key=lambda o: abs((parse_timestamp(o) - truth).total_seconds()))
        assert q.options[q.correct_index] == nearest


def test_start_time_sentinel_when_began_before():
    series, records = make_anomalous(start=0, end=200)
    records[0].began_before_window = True
    q = gen_start_time(series, records, child_rng(3, "q"), "q0")
    assert q.options[q.correct_index] == START_SENTINEL


def test_end_time_sentinel_when_unresolved():
    n = 1200
    series, records = make_anomalous(n=n, start=900, end=n)
    q = gen_end_time(series, records, child_rng(4, "q"), "q0")
    assert q.options[q.correct_index] == END_SENTINEL


def test_end_time_nearest():
    series, records = make_anomalous(start=250, end=470)
    q = gen_end_time(series, records, child_rng(5, "q"), "q0")
    truth = series.timestamp_at(records[0].end_idx - 1)
    stamps = [o for o in q.options if o not in (NO_ANOMALY, END_SENTINEL)]
    nearest = min(stamps, key=lambda o: abs((parse_timestamp(o) - truth).total_seconds()))
    assert q.options[q.correct_index] == nearest


def test_magnitude_correct_is_nearest_rung():
    series, records = make_anomalous(factor=3.0)
    q = gen_magnitude(series, records, child_rng(6, "q"), "q0")
    m = records[0].magnitude
    rungs = [float(o) for o in q.options if o != NO_ANOMALY]
    best = min(range(4), key=lambda i: abs(math.log(rungs[i]) - math.log(m)))
    assert q.options[q.correct_index] == q.options[best]
    assert NO_ANOMALY in q.options


def test_magnitude_clean_series():
    clean = noise_series()
    q = gen_magnitude(clean, [], child_rng(7, "q"), "q0")
    assert q.options[q.correct_index] == NO_ANOMALY
    assert len([o for o in q.options if o != NO_ANOMALY]) == 4


def test_magnitude_rejects_all_gap_records():
    base = noise_series()
    gap = record(AnomalyKind.FLATLINE, start=100, end=160, flatline_mode="gap")
    out = inject(base, [gap])
    with pytest.raises(ConfigError):
        gen_magnitude(out, [gap], child_rng(8, "q"), "q0")


def test_categorization_classes_and_flatline_mapping():
    series, records = make_anomalous(kind=AnomalyKind.FLATLINE, flatline_mode="hold")
    q = gen_categorization(series, records, child_rng(9, "q"), "q0")
    # Flatline reads as a level shift.
    assert q.options[q.correct_index] == "Level Shift"
    assert sorted(q.option_classes) == sorted(SEMANTIC_CLASSES[Category.CATEGORIZATION])

    for kind, text in [
        (AnomalyKind.VARIANCE_CHANGE, "Change in Variance"),
        (AnomalyKind.TREND_CHANGE, "Change in Trend"),
        (AnomalyKind.TRANSIENT_SPIKE, "Transient Spike"),
    ]:
        end = 303 if kind == AnomalyKind.TRANSIENT_SPIKE else 400
        s, rs = make_anomalous(kind=kind, end=end)
        q = gen_categorization(s, rs, child_rng(10, "q"), "q1")
        assert q.options[q.correct_index] == text


def test_categorization_picks_strongest():
    base = noise_series(n=2000, v=2)
    weak = record(AnomalyKind.TREND_CHANGE, channels=(0,), start=100, end=200, factor=0.5)
    strong = record(AnomalyKind.LEVEL_SHIFT, channels=(1,), start=900, end=1100, factor=5.0)
    out = inject(base, [weak, strong])
    assert strong.magnitude > weak.magnitude
    q = gen_categorization(out, [weak, strong], child_rng(11, "q"), "q0")
    assert q.options[q.correct_index] == "Level Shift"


def make_pair(seed, kind=AnomalyKind.LEVEL_SHIFT, lag=5, with_event=True,
              only=None):
    config = SynthConfig(length_segments=((1500, 1500, 1.0),), variate_range=(2, 2))
    start = parse_rfc3339("2025-04-01T00:00:00Z")
    s1 = generate_series(config, child_rng(seed, "p1"), series_id=f"a{seed}", start_time=start)
    s2 = generate_series(config, child_rng(seed, "p2"), series_id=f"b{seed}", start_time=start)
    recs1, recs2 = [], []
    if with_event:
        from arf_forge.anomalies import PlanConfig, make_incident_event

        event, recs = make_incident_event(
            [s1, s2], kind, {s1.series_id: 0, s2.series_id: lag},
            PlanConfig(), child_rng(seed, "ev"), event_id=f"ev{seed}",
        )
        s1 = inject(s1, [recs[s1.series_id]])
        s2 = inject(s2, [recs[s2.series_id]])
        recs1, recs2 = [recs[s1.series_id]], [recs[s2.series_id]]
    elif only == 1:
        r = record(kind, start=200, end=300)
        s1 = inject(s1, [r])
        recs1 = [r]
    elif only == 2:
        r = record(kind, start=200, end=300)
        s2 = inject(s2, [r])
        recs2 = [r]
    return s1, recs1, s2, recs2


def test_correlation_all_branches():
    s1, r1, s2, r2 = make_pair(1, with_event=False)
    q = gen_correlation(s1, r1, s2, r2, child_rng(0, "q"), "q0")
    assert q.options[q.correct_index] == CORRELATION_OPTIONS[0]

    s1, r1, s2, r2 = make_pair(2, with_event=False, only=1)
    q = gen_correlation(s1, r1, s2, r2, child_rng(0, "q"), "q1")
    assert q.options[q.correct_index] == CORRELATION_OPTIONS[2]

    s1, r1, s2, r2 = make_pair(3, with_event=False, only=2)
    q = gen_correlation(s1, r1, s2, r2, child_rng(0, "q"), "q2")
    assert q.options[q.correct_index] == CORRELATION_OPTIONS[3]

    s1, r1, s2, r2 = make_pair(4, with_event=True)
    q = gen_correlation(s1, r1, s2, r2, child_rng(0, "q"), "q3")
    assert q.options[q.correct_index] == CORRELATION_OPTIONS[4]


def test_correlation_negative_pair_never_correlated():
    # Both series anomalous but no shared event: anomalies are
    # not correlated by construction.
    s1, r1, _, _ = make_pair(5, with_event=False, only=1)
    _, _, s2, r2 = make_pair(6, with_event=False, only=2)
    q = gen_correlation(s1, r1, s2, r2, child_rng(0, "q"), "q0", negative_pair=True)
    assert q.options[q.correct_index] == CORRELATION_OPTIONS[1]
    assert q.negative_pair


def test_indicator_lead_lag_perfect():
    s1, r1, s2, r2 = make_pair(7, lag=6)
    q = gen_indicator(s1, r1, s2, r2, child_rng(0, "q"), "q0")
    # Series 1 starts first: it is leading.
    assert q.options[q.correct_index] == INDICATOR_OPTIONS[0]

    s1, r1, s2, r2 = make_pair(8, lag=-6)
    q = gen_indicator(s1, r1, s2, r2, child_rng(0, "q"), "q1")
    assert q.options[q.correct_index] == INDICATOR_OPTIONS[1]

    s1, r1, s2, r2 = make_pair(9, lag=0)
    q = gen_indicator(s1, r1, s2, r2, child_rng(0, "q"), "q2")
    assert q.options[q.correct_index] == INDICATOR_OPTIONS[3]

    s1, r1, s2, r2 = make_pair(10, with_event=False, only=1)
    q = gen_indicator(s1, r1, s2, r2, child_rng(0, "q"), "q3")
    assert q.options[q.correct_index] == INDICATOR_OPTIONS[4]


def test_tie_radius():
    assert tie_radius(100) == 2
    assert tie_radius(1000) == 10
    assert tie_radius(50_000) == 500


def test_question_jsonl_round_trip(tmp_path, bench_questions):
    path = tmp_path / "q.jsonl"
    write_questions(str(path), bench_questions)
    loaded = read_questions(str(path))
    assert len(loaded) == len(bench_questions)
    for a, b in zip(bench_questions, loaded):
        assert a.question_id == b.question_id
        assert a.options == b.options
        assert a.correct_index == b.correct_index
        assert a.option_classes == b.option_classes
        assert a.series_ids == b.series_ids


def test_pair_series_structure():
    config = SynthConfig(length_segments=((300, 600, 1.0),), variate_range=(1, 2))
    series = []
    for g in range(3):
        for k in range(3):
            s = generate_series(
                config, child_rng(g * 10 + k, "pp"), series_id=f"s{g}{k}", incident_group=f"g{g}"
            )
            series.append(s)
    pairs = pair_series(series, max_pairs_per_group=2, negative_fraction=0.5, rng=child_rng(0, "pair"))
    group_of = {s.series_id: s.incident_group for s in series}
    within = [p for p in pairs if p[2] == "within"]
    cross = [p for p in pairs if p[2] == "cross"]
    assert len(within) == 6  # 3 groups x cap 2
    assert len(cross) == round(0.5 * len(within))
    for a, b, _ in within:
        assert group_of[a] == group_of[b]
    for a, b, _ in cross:
        assert group_of[a] != group_of[b]


def test_pair_series_needs_two_groups():
    config = SynthConfig(length_segments=((300, 300, 1.0),), variate_range=(1, 1))
    series = [
        generate_series(config, child_rng(k, "one"), series_id=f"s{k}", incident_group="g0")
        for k in range(3)
    ]
    with pytest.raises(PairingError):
        pair_series(series, max_pairs_per_group=2, negative_fraction=0.5, rng=child_rng(0, "x"))


def test_format_timestamp_round_trip():
    t = parse_rfc3339("2025-02-03T04:05:00Z")
    text = format_timestamp(t)
    assert parse_timestamp(text) == t
