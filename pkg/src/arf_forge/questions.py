"""Multiple-choice question construction and semantic class binning.

Eight categories in three tiers. Tier 1 and 2 questions target one
series; tier 3 questions target a pair. Options are stored in a
canonical order with the correct index; display shuffling happens at
evaluation time. Every option also carries a semantic class label so
scoring can bin free-form answer choices (timestamps, channel sets,
magnitudes) into a fixed five-way (or two-way) scheme.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .anomalies import AnomalyKind, AnomalyRecord
from .errors import ConfigError, PairingError
from .synth import TimeSeries

QUESTION_SCHEMA_VERSION = 1


class Category:
    PRESENCE = "presence"
    IDENTIFICATION = "identification"
    START_TIME = "start_time"
    END_TIME = "end_time"
    MAGNITUDE = "magnitude"
    CATEGORIZATION = "categorization"
    CORRELATION = "correlation"
    INDICATOR = "indicator"


ALL_CATEGORIES = (
    Category.PRESENCE,
    Category.IDENTIFICATION,
    Category.START_TIME,
    Category.END_TIME,
    Category.MAGNITUDE,
    Category.CATEGORIZATION,
    Category.CORRELATION,
    Category.INDICATOR,
)

TIER_OF = {
    Category.PRESENCE: 1,
    Category.IDENTIFICATION: 2,
    Category.START_TIME: 2,
    Category.END_TIME: 2,
    Category.MAGNITUDE: 2,
    Category.CATEGORIZATION: 2,
    Category.CORRELATION: 3,
    Category.INDICATOR: 3,
}

SINGLE_SERIES_CATEGORIES = tuple(c for c in ALL_CATEGORIES if TIER_OF[c] < 3)
PAIRED_CATEGORIES = (Category.CORRELATION, Category.INDICATOR)

QUESTION_TEMPLATES = {
    Category.PRESENCE: "Does the time series exhibit an anomaly in the given time range?",
    Category.IDENTIFICATION: "Which channels are exhibiting anomalies in the given time range?",
    Category.START_TIME: "What is the start time of the anomaly, if an anomaly exists?",
    Category.END_TIME: "What is the end time of the anomaly, if an anomaly exists?",
    Category.MAGNITUDE: (
        "How much does the anomaly in this time-series deviate from the expected "
        "behavior of this time-series, if an anomaly exists?"
    ),
    Category.CATEGORIZATION: "What type of anomaly in the given time range is exhibited, if any?",
    Category.CORRELATION: (
        "Does the anomaly in time-series 1 correlate with the anomaly in the other "
        "time-series, if anomalies exist?"
    ),
    Category.INDICATOR: (
        "Is the anomaly in time-series 1 a leading or lagging indicator of the "
        "anomaly in time-series 2, if anomalies exist?"
    ),
}

NO_ANOMALY = "No Anomaly"
START_SENTINEL = "Before the earliest timestamp"
END_SENTINEL = "Not resolved"
TIMESTAMP_FMT = "%Y-%m-%d %H:%M:%S"

CATEGORY_OPTION_TEXT = {
    AnomalyKind.LEVEL_SHIFT: "Level Shift",
    AnomalyKind.TRANSIENT_SPIKE: "Transient Spike",
    AnomalyKind.SEASONALITY_CHANGE: "Change in Seasonality",
    AnomalyKind.VARIANCE_CHANGE: "Change in Variance",
    AnomalyKind.TREND_CHANGE: "Change in Trend",
    # An all-flat segment reads as a sustained change in mean.
    AnomalyKind.FLATLINE: "Level Shift",
}

SEA_VAR_CLASS = "Change in Seasonality/Variance"

CORRELATION_OPTIONS = (
    "No, there is no anomaly in either time-series",
    "No, there is an anomaly in both but they are not correlated",
    "No, there is an anomaly only in time-series 1",
    "No, there is an anomaly only in time-series 2",
    "Yes, there is an anomaly in both and they are correlated",
)

INDICATOR_OPTIONS = (
    "The anomaly in time-series 1 is a leading indicator of the anomaly in time-series 2",
    "The anomaly in time-series 1 is a lagging indicator of the anomaly in time-series 2",
    "The anomaly in time-series 1 is not correlated to the anomaly in time-series 2",
    "The anomaly in time-series 1 is perfectly correlated to the anomaly in time-series 2",
    "No Anomaly in one or both series",
)

SEMANTIC_CLASSES = {
    Category.PRESENCE: ("Yes", "No"),
    Category.IDENTIFICATION: (
        NO_ANOMALY,
        "One Channel (small)",
        "One Channel (large)",
        "Two Channels",
        "Three Channels",
    ),
    Category.START_TIME: (NO_ANOMALY, "Earliest", "Early", "Medium", "Late"),
    Category.END_TIME: (NO_ANOMALY, "Early", "Medium", "Late", "Latest"),
    Category.MAGNITUDE: (NO_ANOMALY, "Smallest", "Small", "Medium", "Large"),
    Category.CATEGORIZATION: (
        NO_ANOMALY,
        "Change in Trend",
        "Transient Spike",
        "Level Shift",
        SEA_VAR_CLASS,
    ),
    Category.CORRELATION: CORRELATION_OPTIONS,
    Category.INDICATOR: INDICATOR_OPTIONS,
}

MAGNITUDE_BASES = (2, 5, 10)
MAGNITUDE_EPS = 1e-12


@dataclass
class Question:
    question_id: str
    category: str
    text: str
    captions: list[str]
    series_ids: list[str]
    series_paths: list[str]
    options: list[str]
    correct_index: int
    option_classes: list[str] = field(default_factory=list)
    negative_pair: bool = False

    @property
    def tier(self) -> int:
        return TIER_OF[self.category]

    @property
    def correct_class(self) -> str:
        return self.option_classes[self.correct_index]

    def __post_init__(self) -> None:
        if self.category not in ALL_CATEGORIES:
            raise ConfigError(f"unknown category {self.category!r}")
        expected = 2 if self.category == Category.PRESENCE else 5
        if len(self.options) != expected:
            raise ConfigError(f"{self.category} question needs {expected} options")
        if len(set(self.options)) != len(self.options):
            raise ConfigError("options must be unique")
        if not 0 <= self.correct_index < len(self.options):
            raise ConfigError("correct_index out of range")
        if not self.option_classes:
            self.option_classes = [bin_semantic(self, i) for i in range(len(self.options))]
        if len(self.option_classes) != len(self.options):
            raise ConfigError("option_classes length mismatch")

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "category": self.category,
            "tier": self.tier,
            "text": self.text,
            "captions": list(self.captions),
            "series_ids": list(self.series_ids),
            "series_paths": list(self.series_paths),
            "options": list(self.options),
            "correct_index": self.correct_index,
            "option_classes": list(self.option_classes),
            "negative_pair": self.negative_pair,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        return cls(
            question_id=d["question_id"],
            category=d["category"],
            text=d["text"],
            captions=list(d["captions"]),
            series_ids=list(d["series_ids"]),
            series_paths=list(d["series_paths"]),
            options=list(d["options"]),
            correct_index=int(d["correct_index"]),
            option_classes=list(d.get("option_classes") or []),
            negative_pair=bool(d.get("negative_pair", False)),
        )


def write_questions(path: str, questions: list[Question]) -> None:
    with open(path, "w") as fh:
        for q in questions:
            fh.write(json.dumps(q.to_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_questions(path: str) -> list[Question]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Question.from_dict(json.loads(line)))
    return out


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime(TIMESTAMP_FMT)


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, TIMESTAMP_FMT).replace(tzinfo=timezone.utc)


def _is_timestamp(text: str) -> bool:
    try:
        parse_timestamp(text)
        return True
    except ValueError:
        return False


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def bin_semantic(question: Question, option_index: int) -> str:
    """Semantic class of one option, derived from the option texts.

    Timestamp options are ranked chronologically, magnitude options by
    value, single-channel options lexicographically; sentinel and
    No Anomaly options map to their dedicated classes.
    """
    text = question.options[option_index]
    cat = question.category
    if cat == Category.PRESENCE:
        if text in ("Yes", "No"):
            return text
        raise ConfigError(f"unexpected presence option {text!r}")
    if cat in (Category.CORRELATION, Category.INDICATOR):
        if text in SEMANTIC_CLASSES[cat]:
            return text
        raise ConfigError(f"unexpected {cat} option {text!r}")
    if text == NO_ANOMALY:
        return NO_ANOMALY
    if cat == Category.IDENTIFICATION:
        n_channels = text.count(" and ") + 1
        if n_channels == 1:
            singles = sorted(
                opt for opt in question.options if opt != NO_ANOMALY and " and " not in opt
            )
            if len(singles) != 2:
                raise ConfigError("identification question needs exactly two single options")
            return "One Channel (small)" if text == singles[0] else "One Channel (large)"
        if n_channels == 2:
            return "Two Channels"
        if n_channels == 3:
            return "Three Channels"
        raise ConfigError(f"identification option with {n_channels} channels")
    if cat == Category.START_TIME:
        if text == START_SENTINEL:
            return "Earliest"
        stamps = sorted(opt for opt in question.options if _is_timestamp(opt))
        rank = stamps.index(text)
        return ("Early", "Medium", "Late")[rank]
    if cat == Category.END_TIME:
        if text == END_SENTINEL:
            return "Latest"
        stamps = sorted(opt for opt in question.options if _is_timestamp(opt))
        rank = stamps.index(text)
        return ("Early", "Medium", "Late")[rank]
    if cat == Category.MAGNITUDE:
        rungs = sorted(
            (opt for opt in question.options if _is_number(opt)), key=lambda s: float(s)
        )
        rank = rungs.index(text)
        return ("Smallest", "Small", "Medium", "Large")[rank]
    if cat == Category.CATEGORIZATION:
        if text in ("Change in Seasonality", "Change in Variance"):
            return SEA_VAR_CLASS
        if text in ("Level Shift", "Transient Spike", "Change in Trend"):
            return text
        raise ConfigError(f"unexpected categorization option {text!r}")
    raise ConfigError(f"unknown category {cat!r}")


def _caption_list(series: TimeSeries) -> list[str]:
    return [series.caption]


def _series_meta(series: TimeSeries) -> tuple[list[str], list[str]]:
    return [series.series_id], [f"series/{series.series_id}.csv"]


def gen_presence(
    series: TimeSeries,
    records: list[AnomalyRecord],
    rng: np.random.Generator,
    question_id: str,
) -> Question:
    correct = "Yes" if records else "No"
    options = ["Yes", "No"]
    ids, paths = _series_meta(series)
    return Question(
        question_id=question_id,
        category=Category.PRESENCE,
        text=QUESTION_TEMPLATES[Category.PRESENCE],
        captions=_caption_list(series),
        series_ids=ids,
        series_paths=paths,
        options=options,
        correct_index=options.index(correct),
    )


def gen_identification(
    series: TimeSeries,
    records: list[AnomalyRecord],
    rng: np.random.Generator,
    question_id: str,
) -> Question:
    """Five choices over three listed channels: two singles, one pair,
    the triplet, and No Anomaly. All anomalous channels are listed when
    three or fewer carry anomalies."""
    if series.n_channels < 3:
        raise ConfigError("identification needs at least three channels")
    anomalous = sorted({c for r in records for c in r.channels})
    all_idx = list(range(series.n_channels))
    if len(anomalous) >= 3:
        listed = sorted(int(c) for c in rng.choice(anomalous, size=3, replace=False))
    else:
        rest = [c for c in all_idx if c not in anomalous]
        fill = rng.choice(rest, size=3 - len(anomalous), replace=False)
        listed = sorted(anomalous + [int(c) for c in fill])
    names = [series.channel_names[c] for c in listed]
    truth = sorted(set(anomalous) & set(listed))
    k = len(truth)

    if k == 1:
        single_pool = [series.channel_names[truth[0]]]
        other = [n for n in names if n != single_pool[0]]
        single_pool.append(str(rng.choice(other)))
    else:
        single_pool = [str(n) for n in rng.choice(names, size=2, replace=False)]
    singles = sorted(single_pool)

    if k == 2:
        pair = sorted(series.channel_names[c] for c in truth)
    else:
        pair = sorted(str(n) for n in rng.choice(names, size=2, replace=False))
    pair_text = " and ".join(pair)
    triple_text = " and ".join(sorted(names))

    options = [singles[0], singles[1], pair_text, triple_text, NO_ANOMALY]
    if len(set(options)) != len(options):
        raise ConfigError("identification options collided")
    if k == 0:
        correct = NO_ANOMALY
    elif k == 1:
        correct = series.channel_names[truth[0]]
    elif k == 2:
        correct = pair_text
    else:
        correct = triple_text
    ids, paths = _series_meta(series)
    return Question(
        question_id=question_id,
        category=Category.IDENTIFICATION,
        text=QUESTION_TEMPLATES[Category.IDENTIFICATION],
        captions=_caption_list(series),
        series_ids=ids,
        series_paths=paths,
        options=options,
        correct_index=options.index(correct),
    )


def tie_radius(n_steps: int) -> int:
    """Minimum index distance treated as meaningfully different."""
    return max(2, math.ceil(0.01 * n_steps))


def _place_candidates(
    n_steps: int,
    rng: np.random.Generator,
    anchor: int | None,
) -> list[int]:
    """Pick three candidate indices at least two tie radii apart.

    When ``anchor`` is given, one candidate lands strictly inside the
    tie radius around it, so the anchor has a unique nearest candidate.
    """
    r = tie_radius(n_steps)
    spacing = 2 * r
    picks: list[int] = []
    if anchor is not None:
        offset = int(rng.integers(-(r - 1), r))
        picks.append(min(max(anchor + offset, 0), n_steps - 1))
    for _ in range(2000):
        if len(picks) == 3:
            break
        cand = int(rng.integers(0, n_steps))
        if all(abs(cand - p) >= spacing for p in picks):
            picks.append(cand)
    if len(picks) != 3:
        raise ConfigError("could not place spaced candidate timestamps")
    return sorted(picks)


def gen_start_time(
    series: TimeSeries,
    records: list[AnomalyRecord],
    rng: np.random.Generator,
    question_id: str,
) -> Question:
    """Three timestamp choices plus the before-range sentinel and
    No Anomaly. Truth is the start of the earliest anomaly; the correct
    choice is the unique nearest timestamp."""
    anchor = None
    sentinel_correct = False
    if records:
        first = min(records, key=lambda r: (r.start_idx, r.end_idx))
        if first.began_before_window:
            sentinel_correct = True
        else:
            anchor = first.start_idx
    candidates = _place_candidates(series.n_steps, rng, anchor)
    stamps = [format_timestamp(series.timestamp_at(i)) for i in candidates]
    options = stamps + [START_SENTINEL, NO_ANOMALY]
    if not records:
        correct = len(options) - 1
    elif sentinel_correct:
        correct = 3
    else:
        dists = [abs(c - anchor) for c in candidates]
        best = int(np.argmin(dists))
        if sorted(dists)[0] == sorted(dists)[1]:
            raise ConfigError("ambiguous nearest start candidate")
        correct = best
    ids, paths = _series_meta(series)
    return Question(
        question_id=question_id,
        category=Category.START_TIME,
        text=QUESTION_TEMPLATES[Category.START_TIME],
        captions=_caption_list(series),
        series_ids=ids,
        series_paths=paths,
        options=options,
        correct_index=correct,
    )


def gen_end_time(
    series: TimeSeries,
    records: list[AnomalyRecord],
    rng: np.random.Generator,
    question_id: str,
) -> Question:
    """Mirror of the start question: truth is the end of the last
    anomaly, with Not resolved for anomalies running past the data."""
    anchor = None
    sentinel_correct = False
    if records:
        last = max(records, key=lambda r: (r.end_idx, r.start_idx))
        if last.end_idx >= series.n_steps:
            sentinel_correct = True
        else:
            anchor = last.end_idx - 1
    candidates = _place_candidates(series.n_steps, rng, anchor)
    stamps = [format_timestamp(series.timestamp_at(i)) for i in candidates]
    options = stamps + [END_SENTINEL, NO_ANOMALY]
    if not records:
        correct = len(options) - 1
    elif sentinel_correct:
        correct = 3
    else:
        dists = [abs(c - anchor) for c in candidates]
        best = int(np.argmin(dists))
        if sorted(dists)[0] == sorted(dists)[1]:
            raise ConfigError("ambiguous nearest end candidate")
        correct = best
    ids, paths = _series_meta(series)
    return Question(
        question_id=question_id,
        category=Category.END_TIME,
        text=QUESTION_TEMPLATES[Category.END_TIME],
        captions=_caption_list(series),
        series_ids=ids,
        series_paths=paths,
        options=options,
        correct_index=correct,
    )


def format_rung(value: float) -> str:
    """Decimal text for a ladder rung, no exponent notation."""
    if value >= 1 and abs(value - round(value)) < 1e-9:
        return str(int(round(value)))
    text = f"{value:.12g}"
    if "e" in text or "E" in text:
        text = f"{value:.15f}".rstrip("0").rstrip(".")
    return text


def magnitude_ladder(m: float) -> list[float]:
    """Four geometric rungs around ``m``.

    Bases 2, 5, and 10 are ranked by how close (in log space) their
    nearest power lands on ``m``; the first base whose ladder stays
    within a factor of base**2 of ``m`` wins. The rung nearest ``m`` is
    always on the ladder.
    """
    if not math.isfinite(m) or m <= 0:
        raise ConfigError("magnitude ladder needs a positive finite value")
    log_m = math.log(m)

    def nearest_exp(base: int) -> int:
        return round(log_m / math.log(base))

    ranked = sorted(
        MAGNITUDE_BASES,
        key=lambda b: (abs(log_m - nearest_exp(b) * math.log(b)), b),
    )
    for base in ranked:
        k = nearest_exp(base)
        lo = max(m / base**2, MAGNITUDE_EPS)
        hi = m * base**2
        for shift in (2, 1, 3, 0):
            rungs = [float(base) ** (k - shift + i) for i in range(4)]
            if rungs[0] >= lo - MAGNITUDE_EPS and rungs[-1] <= hi + MAGNITUDE_EPS:
                return rungs
    base = 10
    k = nearest_exp(base)
    return [float(base) ** (k - 1 + i) for i in range(4)]


def nearest_rung_index(rungs: list[float], m: float) -> int:
    dists = [abs(math.log(r) - math.log(m)) for r in rungs]
    return int(np.argmin(dists))


def gen_magnitude(
    series: TimeSeries,
    records: list[AnomalyRecord],
    rng: np.random.Generator,
    question_id: str,
) -> Question:
    """Four ladder rungs plus No Anomaly; the correct rung is the one
    nearest the severity of the strongest anomaly."""
    scored = [r for r in records if r.magnitude is not None and r.magnitude > 0]
    if records and not scored:
        raise ConfigError("magnitude question needs a record with positive severity")
    if scored:
        m = max(r.magnitude for r in scored)
    else:
        # Clean series: build a plausible ladder around the data peak.
        peak = float(np.nanmax(np.abs(series.values)))
        m = peak if peak > 0 else 1.0
    rungs = magnitude_ladder(m)
    texts = [format_rung(v) for v in rungs]
    if len(set(texts)) != 4:
        raise ConfigError("magnitude rungs collided after formatting")
    options = texts + [NO_ANOMALY]
    correct = nearest_rung_index(rungs, m) if scored else 4
    ids, paths = _series_meta(series)
    return Question(
        question_id=question_id,
        category=Category.MAGNITUDE,
        text=QUESTION_TEMPLATES[Category.MAGNITUDE],
        captions=_caption_list(series),
        series_ids=ids,
        series_paths=paths,
        options=options,
        correct_index=correct,
    )


def gen_categorization(
    series: TimeSeries,
    records: list[AnomalyRecord],
    rng: np.random.Generator,
    question_id: str,
) -> Question:
    """One option per semantic class; the merged seasonality/variance
    class contributes exactly one of its two texts."""
    if records:
        scored = [r for r in records if r.magnitude is not None]
        top = max(scored, key=lambda r: r.magnitude) if scored else records[0]
        correct_text = CATEGORY_OPTION_TEXT[top.kind]
    else:
        correct_text = NO_ANOMALY
    if correct_text == "Change in Seasonality":
        sea_var = "Change in Seasonality"
    elif correct_text == "Change in Variance":
        sea_var = "Change in Variance"
    else:
        sea_var = str(rng.choice(["Change in Seasonality", "Change in Variance"]))
    options = ["Level Shift", "Transient Spike", "Change in Trend", sea_var, NO_ANOMALY]
    ids, paths = _series_meta(series)
    return Question(
        question_id=question_id,
        category=Category.CATEGORIZATION,
        text=QUESTION_TEMPLATES[Category.CATEGORIZATION],
        captions=_caption_list(series),
        series_ids=ids,
        series_paths=paths,
        options=options,
        correct_index=options.index(correct_text),
    )


def shared_event_records(
    records_1: list[AnomalyRecord], records_2: list[AnomalyRecord]
) -> tuple[AnomalyRecord, AnomalyRecord] | None:
    for r1 in records_1:
        if r1.event_id is None:
            continue
        for r2 in records_2:
            if r2.event_id == r1.event_id:
                return r1, r2
    return None


def gen_correlation(
    series_1: TimeSeries,
    records_1: list[AnomalyRecord],
    series_2: TimeSeries,
    records_2: list[AnomalyRecord],
    rng: np.random.Generator,
    question_id: str,
    negative_pair: bool = False,
) -> Question:
    options = list(CORRELATION_OPTIONS)
    if not records_1 and not records_2:
        correct = options[0]
    elif records_1 and not records_2:
        correct = options[2]
    elif records_2 and not records_1:
        correct = options[3]
    elif shared_event_records(records_1, records_2) is not None:
        correct = options[4]
    else:
        correct = options[1]
    return Question(
        question_id=question_id,
        category=Category.CORRELATION,
        text=QUESTION_TEMPLATES[Category.CORRELATION],
        captions=[series_1.caption, series_2.caption],
        series_ids=[series_1.series_id, series_2.series_id],
        series_paths=[
            f"series/{series_1.series_id}.csv",
            f"series/{series_2.series_id}.csv",
        ],
        options=options,
        correct_index=options.index(correct),
        negative_pair=negative_pair,
    )


def gen_indicator(
    series_1: TimeSeries,
    records_1: list[AnomalyRecord],
    series_2: TimeSeries,
    records_2: list[AnomalyRecord],
    rng: np.random.Generator,
    question_id: str,
    negative_pair: bool = False,
) -> Question:
    options = list(INDICATOR_OPTIONS)
    if not records_1 or not records_2:
        correct = options[4]
    else:
        pair = shared_event_records(records_1, records_2)
        if pair is None:
            correct = options[2]
        else:
            r1, r2 = pair
            t1 = series_1.timestamp_at(r1.start_idx)
            t2 = series_2.timestamp_at(r2.start_idx)
            if t1 < t2:
                correct = options[0]
            elif t1 > t2:
                correct = options[1]
            else:
                correct = options[3]
    return Question(
        question_id=question_id,
        category=Category.INDICATOR,
        text=QUESTION_TEMPLATES[Category.INDICATOR],
        captions=[series_1.caption, series_2.caption],
        series_ids=[series_1.series_id, series_2.series_id],
        series_paths=[
            f"series/{series_1.series_id}.csv",
            f"series/{series_2.series_id}.csv",
        ],
        options=options,
        correct_index=options.index(correct),
        negative_pair=negative_pair,
    )


def pair_series(
    series_list: list[TimeSeries],
    max_pairs_per_group: int,
    negative_fraction: float,
    rng: np.random.Generator,
) -> list[tuple[str, str, str]]:
    """Build (id_1, id_2, relation) pairs for tier-3 questions.

    Within-group pairs are capped per incident group; cross-group
    negatives are appended at ``round(negative_fraction * n_within)``.
    Member order is randomized so both role assignments occur.
    """
    if not 0.0 <= negative_fraction <= 1.0:
        raise ConfigError("negative_fraction must be in [0, 1]")
    if max_pairs_per_group < 1:
        raise ConfigError("max_pairs_per_group must be >= 1")
    groups: dict[str, list[str]] = {}
    for s in series_list:
        if s.incident_group is not None:
            groups.setdefault(s.incident_group, []).append(s.series_id)
    within: list[tuple[str, str, str]] = []
    for group_id in sorted(groups):
        members = sorted(groups[group_id])
        combos = [
            (members[i], members[j])
            for i in range(len(members))
            for j in range(i + 1, len(members))
        ]
        if len(combos) > max_pairs_per_group:
            idx = rng.choice(len(combos), size=max_pairs_per_group, replace=False)
            combos = [combos[i] for i in sorted(int(i) for i in idx)]
        for a, b in combos:
            if rng.random() < 0.5:
                a, b = b, a
            within.append((a, b, "within"))
    n_negative = int(round(negative_fraction * len(within)))
    negatives: list[tuple[str, str, str]] = []
    if n_negative > 0:
        if len(groups) < 2:
            raise PairingError("negative pairs need at least two incident groups")
        by_group = {g: sorted(ids) for g, ids in groups.items()}
        group_ids = sorted(by_group)
        seen = set()
        guard = 0
        while len(negatives) < n_negative and guard < 200 * n_negative + 1000:
            guard += 1
            g1, g2 = (str(g) for g in rng.choice(group_ids, size=2, replace=False))
            a = str(rng.choice(by_group[g1]))
            b = str(rng.choice(by_group[g2]))
            if (a, b) in seen:
                continue
            seen.add((a, b))
            negatives.append((a, b, "cross"))
        if len(negatives) < n_negative:
            raise PairingError("could not place enough cross-group pairs")
    return within + negatives
