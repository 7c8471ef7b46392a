"""Reference answerers: random, frequent-choice, answer-key oracle, and
a classical robust z-score detector.

The oracle re-derives every answer from ground truth records (never by
copying the stored index) and refuses to continue if re-derivation and
the stored key disagree. The detector is tuned only on synthetic data
and maps its detections onto each question category with simple rules.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter, uniform_filter1d

from .anomalies import AnomalyRecord, spike_width_cap
from .errors import ConfigError
from .questions import (
    CORRELATION_OPTIONS,
    END_SENTINEL,
    INDICATOR_OPTIONS,
    NO_ANOMALY,
    START_SENTINEL,
    SEMANTIC_CLASSES,
    Category,
    Question,
    parse_timestamp,
)
from .rng import child_rng
from .synth import TimeSeries
from .verify import derive_correct_index

BASELINE_NAMES = ("baseline:random", "baseline:frequent", "baseline:oracle", "baseline:zscore")


def predict_random(question: Question, seed: int) -> int:
    rng = child_rng(seed, "random-baseline", question.question_id)
    return int(rng.integers(len(question.options)))


class FrequentChoice:
    """Always answers with each category's most frequently correct
    semantic class, fit on the benchmark's own label distribution."""

    def __init__(self, questions: list[Question]):
        counts: dict[str, Counter] = {}
        for q in questions:
            counts.setdefault(q.category, Counter())[q.correct_class] += 1
        self.modal_class: dict[str, str] = {}
        for cat, counter in counts.items():
            top = max(counter.values())
            # Deterministic tie-break: first in the category's class order.
            for cls in SEMANTIC_CLASSES[cat]:
                if counter.get(cls, 0) == top:
                    self.modal_class[cat] = cls
                    break

    def predict(self, question: Question) -> int:
        target = self.modal_class.get(question.category)
        if target is not None and target in question.option_classes:
            return question.option_classes.index(target)
        return 0


class OracleBaseline:
    """Answers by re-deriving ground truth; raises on key corruption."""

    def __init__(self, series_by_id: dict[str, TimeSeries], records_by_id: dict[str, list[AnomalyRecord]]):
        self.series_by_id = series_by_id
        self.records_by_id = records_by_id

    def predict(self, question: Question) -> int:
        from .errors import IntegrityError

        derived = derive_correct_index(question, self.series_by_id, self.records_by_id)
        if derived != question.correct_index:
            raise IntegrityError(
                f"{question.question_id}: oracle derived {derived}, key says {question.correct_index}"
            )
        return derived


@dataclass
class ChannelDetection:
    flags: np.ndarray  # boolean per step
    fired_collapse: bool = False
    fired_variance: bool = False
    fired_gap: bool = False
    runs: list[tuple[int, int]] = field(default_factory=list)
    variance_runs: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class DetectionResult:
    channels: list[ChannelDetection]

    @property
    def any_flag(self) -> bool:
        return any(c.flags.any() for c in self.channels)

    def flagged_channels(self) -> list[int]:
        return [i for i, c in enumerate(self.channels) if c.flags.any()]

    def first_index(self) -> int | None:
        firsts = [int(np.argmax(c.flags)) for c in self.channels if c.flags.any()]
        return min(firsts) if firsts else None

    def last_index(self) -> int | None:
        lasts = [
            len(c.flags) - 1 - int(np.argmax(c.flags[::-1]))
            for c in self.channels
            if c.flags.any()
        ]
        return max(lasts) if lasts else None


def _runs_of(mask: np.ndarray, min_len: int) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            if i - start >= min_len:
                runs.append((start, i))
            start = None
    if start is not None and len(mask) - start >= min_len:
        runs.append((start, len(mask)))
    return runs


def _robust_scale(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return 0.0
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    if mad > 0:
        return float(1.4826 * mad)
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    if iqr > 0:
        return float(iqr / 1.349)
    return 0.0


def detect_channel(
    col: np.ndarray,
    tau: float = 6.0,
    run_len: int = 3,
    window: int | None = None,
) -> ChannelDetection:
    """Flag anomalous steps in one channel.

    Rules: robust z against a rolling median (runs of ``run_len``, or a
    single point past ``2 * tau``), robust z against a global linear
    fit, a rolling-variance blowup, a variance collapse (flatline), and
    missing-data gaps.
    """
    n = col.shape[0]
    det = ChannelDetection(flags=np.zeros(n, dtype=bool))
    gaps = ~np.isfinite(col)
    if gaps.any():
        det.fired_gap = True
        det.flags |= gaps
    finite = np.isfinite(col)
    if finite.sum() < 10:
        return det
    global_med = float(np.median(col[finite]))
    filled = np.where(finite, col, global_med)
    if np.all(filled == filled[0]):
        return det

    w = window if window is not None else max(50, n // 20)
    w = min(w if w % 2 == 1 else w + 1, n if n % 2 == 1 else n - 1)
    baseline = median_filter(filled, size=w, mode="nearest")
    resid = filled - baseline
    scale = _robust_scale(resid)

    if scale > 0:
        z = np.abs(resid) / scale
        z[gaps] = 0.0
        for start, end in _runs_of(z >= tau, run_len):
            det.flags[start:end] = True
            det.runs.append((start, end))
        extreme = (z >= 2 * tau) & ~gaps
        if extreme.any():
            det.flags |= extreme

    # Level/trend structure survives in residuals against a single line.
    t = np.arange(n, dtype=np.float64)
    coef = np.polyfit(t[finite], col[finite], deg=1)
    gresid = filled - (coef[0] * t + coef[1])
    gscale = _robust_scale(gresid)
    if gscale > 0:
        gz = np.abs(gresid) / gscale
        gz[gaps] = 0.0
        for start, end in _runs_of(gz >= tau, run_len):
            det.flags[start:end] = True
            det.runs.append((start, end))

    # A shift wider than half the rolling window moves the rolling
    # median with it, and one near an edge tilts the line fit until the
    # fit's own residual spread swallows the step. A constant robust
    # baseline has neither blind spot while the shift covers under half
    # the series.
    mresid = filled - global_med
    mscale = _robust_scale(mresid)
    if mscale > 0:
        mz = np.abs(mresid) / mscale
        mz[gaps] = 0.0
        for start, end in _runs_of(mz >= tau, run_len):
            det.flags[start:end] = True
            det.runs.append((start, end))

    # Rolling variance: blowups and collapses.
    vw = max(run_len * 3 + 1, 25)
    if n >= 2 * vw and scale > 0:
        local_mean = uniform_filter1d(resid, size=vw, mode="nearest")
        local_sq = uniform_filter1d(resid * resid, size=vw, mode="nearest")
        local_var = np.maximum(local_sq - local_mean * local_mean, 0.0)
        local_std = np.sqrt(local_var)
        for start, end in _runs_of(local_std >= 3.0 * scale, vw // 2):
            det.flags[start:end] = True
            det.runs.append((start, end))
            det.variance_runs.append((start, end))
            det.fired_variance = True
    # Collapse: a segment with (numerically) zero spread in a channel
    # that is not globally constant.
    span = float(np.max(filled) - np.min(filled))
    if span > 0:
        cw = max(run_len, 5)
        diffs = np.abs(np.diff(filled))
        still = np.concatenate([[False], diffs <= 1e-12 * max(span, 1.0)])
        for start, end in _runs_of(still, cw):
            det.flags[start:end] = True
            det.runs.append((start, end))
            det.fired_collapse = True
    return det


def detect(series: TimeSeries, tau: float = 6.0, run_len: int = 3, window: int | None = None) -> DetectionResult:
    return DetectionResult(
        channels=[
            detect_channel(series.values[:, c], tau=tau, run_len=run_len, window=window)
            for c in range(series.n_channels)
        ]
    )


class ZScoreBaseline:
    """Maps detector output onto each question category."""

    def __init__(self, tau: float = 6.0, run_len: int = 3, window: int | None = None):
        self.tau = tau
        self.run_len = run_len
        self.window = window
        self._cache: dict[str, DetectionResult] = {}

    def _detect(self, series: TimeSeries) -> DetectionResult:
        if series.series_id not in self._cache:
            self._cache[series.series_id] = detect(
                series, tau=self.tau, run_len=self.run_len, window=self.window
            )
        return self._cache[series.series_id]

    def predict(self, question: Question, series_list: list[TimeSeries]) -> int:
        cat = question.category
        if cat == Category.PRESENCE:
            det = self._detect(series_list[0])
            return question.options.index("Yes" if det.any_flag else "No")
        if cat == Category.IDENTIFICATION:
            return self._predict_identification(question, series_list[0])
        if cat == Category.START_TIME:
            return self._predict_start(question, series_list[0])
        if cat == Category.END_TIME:
            return self._predict_end(question, series_list[0])
        if cat == Category.MAGNITUDE:
            return self._predict_magnitude(question, series_list[0])
        if cat == Category.CATEGORIZATION:
            return self._predict_categorization(question, series_list[0])
        if cat == Category.CORRELATION:
            return self._predict_correlation(question, series_list)
        if cat == Category.INDICATOR:
            return self._predict_indicator(question, series_list)
        raise ConfigError(f"unknown category {cat}")

    def _predict_identification(self, question: Question, series: TimeSeries) -> int:
        det = self._detect(series)
        triple = next(o for o in question.options if o.count(" and ") == 2)
        listed_names = triple.split(" and ")
        listed = [series.channel_names.index(n) for n in listed_names if n in series.channel_names]
        hits = sorted(set(det.flagged_channels()) & set(listed))
        if not hits:
            return question.options.index(NO_ANOMALY)
        if len(hits) == 1:
            name = series.channel_names[hits[0]]
            if name in question.options:
                return question.options.index(name)
        target = " and ".join(sorted(series.channel_names[c] for c in hits))
        if target in question.options:
            return question.options.index(target)
        # Fall back to the option sharing the most named channels.
        best, best_score = 0, -1
        hit_names = {series.channel_names[c] for c in hits}
        for i, opt in enumerate(question.options):
            if opt == NO_ANOMALY:
                continue
            names = set(opt.split(" and "))
            score = len(names & hit_names) - 0.1 * abs(len(names) - len(hit_names))
            if score > best_score:
                best, best_score = i, score
        return best

    def _nearest_stamp(self, question: Question, series: TimeSeries, idx: int, skip: str) -> int:
        target = series.timestamp_at(idx)
        best, best_d = None, None
        for i, opt in enumerate(question.options):
            if opt in (NO_ANOMALY, skip):
                continue
            d = abs((parse_timestamp(opt) - target).total_seconds())
            if best_d is None or d < best_d:
                best, best_d = i, d
        return best if best is not None else 0

    def _predict_start(self, question: Question, series: TimeSeries) -> int:
        det = self._detect(series)
        first = det.first_index()
        if first is None:
            return question.options.index(NO_ANOMALY)
        if first == 0:
            return question.options.index(START_SENTINEL)
        return self._nearest_stamp(question, series, first, START_SENTINEL)

    def _predict_end(self, question: Question, series: TimeSeries) -> int:
        det = self._detect(series)
        last = det.last_index()
        if last is None:
            return question.options.index(NO_ANOMALY)
        if last >= series.n_steps - 1:
            return question.options.index(END_SENTINEL)
        return self._nearest_stamp(question, series, last, END_SENTINEL)

    def _predict_magnitude(self, question: Question, series: TimeSeries) -> int:
        det = self._detect(series)
        flagged = det.flagged_channels()
        if not flagged:
            return question.options.index(NO_ANOMALY)
        peaks = []
        means = []
        for c in flagged:
            col = series.values[:, c]
            mask = det.channels[c].flags & np.isfinite(col)
            calm = ~det.channels[c].flags & np.isfinite(col)
            if mask.any():
                peaks.append(float(np.max(np.abs(col[mask]))))
            if calm.any():
                means.append(float(np.mean(col[calm])))
        if not peaks:
            return question.options.index(NO_ANOMALY)
        peak = max(peaks)
        mean_cf = float(np.mean(means)) if means else 0.0
        est = peak if mean_cf == 0.0 else peak / abs(mean_cf)
        best, best_d = None, None
        for i, opt in enumerate(question.options):
            if opt == NO_ANOMALY:
                continue
            rung = float(opt)
            if rung <= 0 or est <= 0:
                continue
            d = abs(math.log(rung) - math.log(est))
            if best_d is None or d < best_d:
                best, best_d = i, d
        return best if best is not None else 0

    def _predict_categorization(self, question: Question, series: TimeSeries) -> int:
        det = self._detect(series)
        flagged = det.flagged_channels()
        if not flagged:
            return question.options.index(NO_ANOMALY)
        union = np.zeros(series.n_steps, dtype=bool)
        for c in flagged:
            union |= det.channels[c].flags
        total = int(union.sum())
        cap = spike_width_cap(series.n_steps)
        vw = max(self.run_len * 3 + 1, 25)
        var_total = sum(
            end - start for c in flagged for (start, end) in det.channels[c].variance_runs
        )
        if any(det.channels[c].fired_collapse or det.channels[c].fired_gap for c in flagged):
            desired = "Level Shift"
        elif total <= vw + cap:
            # A burst this narrow is a spike even when it drags the
            # rolling variance up around it.
            desired = "Transient Spike"
        elif var_total >= max(3 * vw, 0.5 * total):
            # Sustained blowup, not just edge artifacts of a shift/trend.
            desired = "Change in Seasonality/Variance"
        else:
            desired = self._shift_or_trend(series, det, flagged)
        for i, cls in enumerate(question.option_classes):
            if cls == desired:
                return i
        return 0

    def _shift_or_trend(self, series: TimeSeries, det: DetectionResult, flagged: list[int]) -> str:
        # Inside the widest flagged run: steadily moving mean reads as a
        # trend change, a stable shifted mean as a level shift.
        widest = None
        for c in flagged:
            for start, end in det.channels[c].runs:
                if widest is None or end - start > widest[1] - widest[0]:
                    widest = (start, end, c)
        if widest is None:
            return "Level Shift"
        start, end, c = widest
        seg = series.values[start:end, c]
        seg = seg[np.isfinite(seg)]
        if seg.size < 6:
            return "Level Shift"
        half = seg.size // 2
        a, b = seg[:half], seg[half:]
        spread = float(np.std(seg)) or 1.0
        if abs(float(np.mean(b)) - float(np.mean(a))) > 0.8 * spread:
            return "Change in Trend"
        return "Level Shift"

    def _flag_span(self, series: TimeSeries):
        det = self._detect(series)
        first, last = det.first_index(), det.last_index()
        if first is None:
            return None
        return series.timestamp_at(first), series.timestamp_at(last)

    def _predict_correlation(self, question: Question, series_list: list[TimeSeries]) -> int:
        span_1 = self._flag_span(series_list[0])
        span_2 = self._flag_span(series_list[1])
        if span_1 is None and span_2 is None:
            return question.options.index(CORRELATION_OPTIONS[0])
        if span_1 is not None and span_2 is None:
            return question.options.index(CORRELATION_OPTIONS[2])
        if span_2 is not None and span_1 is None:
            return question.options.index(CORRELATION_OPTIONS[3])
        slack = 10 * max(series_list[0].step_seconds, series_list[1].step_seconds)
        overlap = (
            span_1[0].timestamp() - slack <= span_2[1].timestamp()
            and span_2[0].timestamp() - slack <= span_1[1].timestamp()
        )
        if overlap:
            return question.options.index(CORRELATION_OPTIONS[4])
        return question.options.index(CORRELATION_OPTIONS[1])

    def _predict_indicator(self, question: Question, series_list: list[TimeSeries]) -> int:
        span_1 = self._flag_span(series_list[0])
        span_2 = self._flag_span(series_list[1])
        if span_1 is None or span_2 is None:
            return question.options.index(INDICATOR_OPTIONS[4])
        slack = 10 * max(series_list[0].step_seconds, series_list[1].step_seconds)
        overlap = (
            span_1[0].timestamp() - slack <= span_2[1].timestamp()
            and span_2[0].timestamp() - slack <= span_1[1].timestamp()
        )
        if not overlap:
            return question.options.index(INDICATOR_OPTIONS[2])
        delta = span_1[0].timestamp() - span_2[0].timestamp()
        tol = 2 * max(series_list[0].step_seconds, series_list[1].step_seconds)
        if abs(delta) <= tol:
            return question.options.index(INDICATOR_OPTIONS[3])
        if delta < 0:
            return question.options.index(INDICATOR_OPTIONS[0])
        return question.options.index(INDICATOR_OPTIONS[1])
