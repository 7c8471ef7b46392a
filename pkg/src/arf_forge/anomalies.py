"""Anomaly planning, injection, and ground-truth records.

Injection is local: applying a record only touches its window on its
channels, everything else stays bit-identical. Each applied record
keeps the pre-injection (counterfactual) values of its window plus the
derived severity, and those records form the answer key for a series.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum

import numpy as np

from .errors import ConfigError, InjectionError, PairingError
from .synth import TimeSeries, format_rfc3339, parse_rfc3339

KEY_SCHEMA_VERSION = 1


class AnomalyKind(str, Enum):
    LEVEL_SHIFT = "level_shift"
    TRANSIENT_SPIKE = "transient_spike"
    SEASONALITY_CHANGE = "seasonality_change"
    VARIANCE_CHANGE = "variance_change"
    TREND_CHANGE = "trend_change"
    FLATLINE = "flatline"


def spike_width_cap(n_steps: int) -> int:
    return max(3, n_steps // 200)


@dataclass
class AnomalyRecord:
    """One injected anomaly on one series.

    ``end_idx`` is exclusive. ``start_idx == 0`` with
    ``began_before_window`` set means the anomaly was already underway
    at the first sample; ``end_idx == n_steps`` means it never resolves
    inside the window. ``counterfactual`` holds the pre-injection values
    of (window x channels) and ``magnitude`` the severity derived from
    it; both are filled in by :func:`inject`.
    """

    kind: AnomalyKind
    channels: tuple[int, ...]
    start_idx: int
    end_idx: int
    magnitude_factor: float
    sign: int = 1
    began_before_window: bool = False
    event_id: str | None = None
    lag_steps: int | None = None
    flatline_mode: str = "hold"
    period_ratio: float = 2.0
    counterfactual: np.ndarray | None = None
    magnitude: float | None = None

    def window(self) -> slice:
        return slice(self.start_idx, self.end_idx)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "channels": list(self.channels),
            "start_idx": self.start_idx,
            "end_idx": self.end_idx,
            "magnitude_factor": self.magnitude_factor,
            "sign": self.sign,
            "began_before_window": self.began_before_window,
            "event_id": self.event_id,
            "lag_steps": self.lag_steps,
            "flatline_mode": self.flatline_mode,
            "period_ratio": self.period_ratio,
            "magnitude": self.magnitude,
        }
        if self.counterfactual is not None:
            cf = np.asarray(self.counterfactual, dtype=np.float64)
            d["counterfactual"] = [
                [None if math.isnan(v) else v for v in row] for row in cf.tolist()
            ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyRecord":
        cf = d.get("counterfactual")
        counterfactual = None
        if cf is not None:
            counterfactual = np.array(
                [[math.nan if v is None else v for v in row] for row in cf],
                dtype=np.float64,
            )
            counterfactual = counterfactual.reshape(len(cf), -1)
        return cls(
            kind=AnomalyKind(d["kind"]),
            channels=tuple(int(c) for c in d["channels"]),
            start_idx=int(d["start_idx"]),
            end_idx=int(d["end_idx"]),
            magnitude_factor=float(d["magnitude_factor"]),
            sign=int(d.get("sign", 1)),
            began_before_window=bool(d.get("began_before_window", False)),
            event_id=d.get("event_id"),
            lag_steps=d.get("lag_steps") if d.get("lag_steps") is None else int(d["lag_steps"]),
            flatline_mode=d.get("flatline_mode", "hold"),
            period_ratio=float(d.get("period_ratio", 2.0)),
            counterfactual=counterfactual,
            magnitude=None if d.get("magnitude") is None else float(d["magnitude"]),
        )


@dataclass
class IncidentEvent:
    """A shared root cause linking anomalies across several series."""

    event_id: str
    root_kind: AnomalyKind
    reference_series_id: str
    reference_time: datetime
    member_lags: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "root_kind": self.root_kind.value,
            "reference_series_id": self.reference_series_id,
            "reference_time": format_rfc3339(self.reference_time),
            "member_lags": dict(self.member_lags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IncidentEvent":
        return cls(
            event_id=d["event_id"],
            root_kind=AnomalyKind(d["root_kind"]),
            reference_series_id=d["reference_series_id"],
            reference_time=parse_rfc3339(d["reference_time"]),
            member_lags={k: int(v) for k, v in d["member_lags"].items()},
        )


@dataclass
class PlanConfig:
    """Distributional knobs for :func:`sample_plan`."""

    p_none: float = 0.2
    p_second_anomaly: float = 0.2
    magnitude_factor_range: tuple[float, float] = (0.5, 5.0)
    window_fraction_range: tuple[float, float] = (0.05, 0.30)
    max_channels: int = 3
    p_begin_before: float = 0.08
    p_unresolved: float = 0.08
    p_downward: float = 0.25
    p_flatline_gap: float = 0.25
    kinds: tuple[AnomalyKind, ...] = tuple(AnomalyKind)

    def validate(self) -> None:
        for name in ("p_none", "p_second_anomaly", "p_begin_before", "p_unresolved", "p_downward", "p_flatline_gap"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        lo, hi = self.magnitude_factor_range
        if not 0.0 < lo <= hi:
            raise ConfigError("magnitude_factor_range must be positive and ordered")
        lo, hi = self.window_fraction_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError("window_fraction_range must sit inside (0, 1]")
        if self.max_channels < 1:
            raise ConfigError("max_channels must be >= 1")
        if not self.kinds:
            raise ConfigError("kinds must be non-empty")

    def to_dict(self) -> dict:
        return {
            "p_none": self.p_none,
            "p_second_anomaly": self.p_second_anomaly,
            "magnitude_factor_range": list(self.magnitude_factor_range),
            "window_fraction_range": list(self.window_fraction_range),
            "max_channels": self.max_channels,
            "p_begin_before": self.p_begin_before,
            "p_unresolved": self.p_unresolved,
            "p_downward": self.p_downward,
            "p_flatline_gap": self.p_flatline_gap,
            "kinds": [k.value for k in self.kinds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlanConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown plan config keys: {sorted(unknown)}")
        kwargs: dict = dict(d)
        if "magnitude_factor_range" in kwargs:
            kwargs["magnitude_factor_range"] = tuple(kwargs["magnitude_factor_range"])
        if "window_fraction_range" in kwargs:
            kwargs["window_fraction_range"] = tuple(kwargs["window_fraction_range"])
        if "kinds" in kwargs:
            kwargs["kinds"] = tuple(AnomalyKind(k) for k in kwargs["kinds"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _seasonal_channels(series: TimeSeries, min_window: int) -> list[int]:
    # A seasonality change needs an existing seasonal component with at
    # least two full cycles inside the window.
    out = []
    for idx, model in enumerate(series.channel_models):
        if model.seasonal_period is not None and model.seasonal_amplitude != 0.0:
            if 2.0 * model.seasonal_period <= min_window:
                out.append(idx)
    return out


def _draw_window(series: TimeSeries, kind: AnomalyKind, config: PlanConfig, rng: np.random.Generator) -> tuple[int, int, bool]:
    n = series.n_steps
    if kind == AnomalyKind.TRANSIENT_SPIKE:
        cap = spike_width_cap(n)
        length = int(rng.integers(min(3, cap), cap + 1))
    else:
        frac = rng.uniform(*config.window_fraction_range)
        length = max(3, int(round(frac * n)))
        length = min(length, n)
    began_before = rng.random() < config.p_begin_before
    unresolved = rng.random() < config.p_unresolved
    # A spike is a few samples wide at most, so it can touch one edge of
    # the window but never span it the way an open-ended shift can.
    if began_before and unresolved and kind != AnomalyKind.TRANSIENT_SPIKE:
        return 0, n, True
    if began_before:
        return 0, length, True
    if unresolved:
        return n - length, n, False
    start = int(rng.integers(0, n - length + 1))
    return start, start + length, False


def _pick_channels(series: TimeSeries, config: PlanConfig, rng: np.random.Generator, pool: list[int] | None = None) -> tuple[int, ...]:
    candidates = pool if pool is not None else list(range(series.n_channels))
    k_max = min(config.max_channels, len(candidates))
    k = int(rng.integers(1, k_max + 1))
    chosen = rng.choice(candidates, size=k, replace=False)
    return tuple(sorted(int(c) for c in chosen))


def _overlaps(a: AnomalyRecord, b: AnomalyRecord) -> bool:
    if not set(a.channels) & set(b.channels):
        return False
    return a.start_idx < b.end_idx and b.start_idx < a.end_idx


def sample_plan(series: TimeSeries, config: PlanConfig, rng: np.random.Generator) -> list[AnomalyRecord]:
    """Draw an injection plan for one series (possibly empty).

    With probability ``p_none`` the series stays clean. Otherwise one
    record is drawn, plus a second non-overlapping one with probability
    ``p_second_anomaly``. Kind is uniform over eligible kinds; a
    seasonality change is only eligible when a channel has a seasonal
    component short enough to show at least two cycles in the window.
    """
    config.validate()
    if rng.random() < config.p_none:
        return []
    n_records = 2 if rng.random() < config.p_second_anomaly else 1
    records: list[AnomalyRecord] = []
    for _ in range(n_records):
        for _attempt in range(24):
            kind = AnomalyKind(rng.choice([k.value for k in config.kinds]))
            start, end, began_before = _draw_window(series, kind, config, rng)
            if kind == AnomalyKind.SEASONALITY_CHANGE:
                pool = _seasonal_channels(series, end - start)
                if not pool:
                    continue
                channels = _pick_channels(series, config, rng, pool)
            else:
                channels = _pick_channels(series, config, rng)
            record = AnomalyRecord(
                kind=kind,
                channels=channels,
                start_idx=start,
                end_idx=end,
                magnitude_factor=float(rng.uniform(*config.magnitude_factor_range)),
                sign=-1 if rng.random() < config.p_downward else 1,
                began_before_window=began_before,
                flatline_mode="gap" if rng.random() < config.p_flatline_gap else "hold",
                period_ratio=float(rng.choice([0.5, 2.0])),
            )
            if any(_overlaps(record, other) for other in records):
                continue
            records.append(record)
            break
    records.sort(key=lambda r: (r.start_idx, r.end_idx, r.channels))
    return records


def reference_amplitude(values: np.ndarray) -> float:
    """Peak absolute value of a series, the unit for scaled injections."""
    peak = float(np.nanmax(np.abs(values)))
    return peak if peak > 0 else 1.0


def _validate_record(series: TimeSeries, record: AnomalyRecord) -> None:
    n, v = series.n_steps, series.n_channels
    if not (0 <= record.start_idx < record.end_idx <= n):
        raise InjectionError(
            f"window [{record.start_idx}, {record.end_idx}) outside series of length {n}"
        )
    if not record.channels:
        raise InjectionError("record must target at least one channel")
    if len(set(record.channels)) != len(record.channels):
        raise InjectionError("record channels must be unique")
    if any(not 0 <= c < v for c in record.channels):
        raise InjectionError(f"channel index outside [0, {v})")
    if record.magnitude_factor <= 0:
        raise InjectionError("magnitude_factor must be positive")
    if record.kind == AnomalyKind.TRANSIENT_SPIKE:
        cap = spike_width_cap(n)
        if record.end_idx - record.start_idx > cap:
            raise InjectionError(f"spike window longer than cap {cap}")


def _apply(series: TimeSeries, values: np.ndarray, record: AnomalyRecord) -> None:
    w = record.window()
    ch = list(record.channels)
    amp = record.sign * record.magnitude_factor * reference_amplitude(values)
    if record.kind in (AnomalyKind.LEVEL_SHIFT, AnomalyKind.TRANSIENT_SPIKE):
        values[w, ch] = values[w, ch] + amp
    elif record.kind == AnomalyKind.TREND_CHANGE:
        length = record.end_idx - record.start_idx
        ramp = amp * (np.arange(1, length + 1, dtype=np.float64) / length)
        values[w, ch] = values[w, ch] + ramp[:, None]
    elif record.kind == AnomalyKind.VARIANCE_CHANGE:
        seg = values[w, ch]
        center = np.nanmean(seg, axis=0, keepdims=True)
        values[w, ch] = center + (seg - center) * (1.0 + record.magnitude_factor)
    elif record.kind == AnomalyKind.SEASONALITY_CHANGE:
        t = np.arange(record.start_idx, record.end_idx, dtype=np.float64)
        for c in ch:
            model = series.channel_models[c] if c < len(series.channel_models) else None
            if model is None or model.seasonal_period is None:
                raise InjectionError("seasonality change targets a channel with no seasonal component")
            old = model.seasonal_amplitude * np.sin(
                2.0 * math.pi * t / model.seasonal_period + model.seasonal_phase
            )
            new = model.seasonal_amplitude * np.sin(
                2.0 * math.pi * t / (model.seasonal_period * record.period_ratio)
                + model.seasonal_phase
            )
            values[w, c] = values[w, c] - old + new
    elif record.kind == AnomalyKind.FLATLINE:
        if record.flatline_mode == "gap":
            values[w, ch] = np.nan
        else:
            values[w, ch] = values[record.start_idx, ch]
    else:  # pragma: no cover - enum is closed
        raise InjectionError(f"unsupported kind {record.kind}")


def compute_magnitude_arrays(counterfactual: np.ndarray, observed: np.ndarray) -> float:
    """Severity of a window: max |observed| over the mean counterfactual.

    When the counterfactual mean is exactly zero the ratio is undefined
    and the peak absolute observed value is returned instead. A window
    that is entirely missing has severity 0.
    """
    if counterfactual.size == 0 or observed.size == 0:
        raise InjectionError("magnitude needs a non-empty window")
    finite = observed[np.isfinite(observed)]
    if finite.size == 0:
        return 0.0
    peak = float(np.max(np.abs(finite)))
    cf_finite = counterfactual[np.isfinite(counterfactual)]
    mean_cf = float(np.mean(cf_finite)) if cf_finite.size else 0.0
    if mean_cf == 0.0:
        return peak
    return peak / abs(mean_cf)


def compute_magnitude(pre: TimeSeries, post: TimeSeries, record: AnomalyRecord) -> float:
    """Severity of ``record`` given the series before and after injection."""
    _validate_record(post, record)
    ch = list(record.channels)
    w = record.window()
    return compute_magnitude_arrays(pre.values[w, ch], post.values[w, ch])


def inject(series: TimeSeries, records: list[AnomalyRecord]) -> TimeSeries:
    """Apply ``records`` in order to a copy of ``series``.

    Each record's ``counterfactual`` and ``magnitude`` fields are filled
    from the state just before that record is applied. Values outside
    all (window x channels) regions are bit-identical to the input.
    """
    out = series.copy()
    for record in records:
        _validate_record(out, record)
        w = record.window()
        ch = list(record.channels)
        record.counterfactual = out.values[w, ch].copy()
        _apply(out, out.values, record)
        record.magnitude = compute_magnitude_arrays(record.counterfactual, out.values[w, ch])
    return out


def make_incident_event(
    series_group: list[TimeSeries],
    root_kind: AnomalyKind,
    lags: dict[str, int],
    config: PlanConfig,
    rng: np.random.Generator,
    event_id: str = "ev-0",
) -> tuple[IncidentEvent, dict[str, AnomalyRecord]]:
    """Plan one cross-series event with per-member lags.

    All members must share a step size and overlap in absolute time.
    The member listed first in ``lags`` is the reference; its anomaly
    starts at the chosen reference time and every other member's window
    starts ``lag_steps`` steps later (negative lags lead).
    """
    if len(series_group) < 2:
        raise PairingError("an incident event needs at least two series")
    by_id = {s.series_id: s for s in series_group}
    if set(lags) != set(by_id):
        raise PairingError("lags must cover exactly the series in the group")
    steps = {s.step_seconds for s in series_group}
    if len(steps) != 1:
        raise PairingError("incident members must share a step size")
    step = steps.pop()

    ref_id = next(iter(lags))
    if lags[ref_id] != 0:
        raise PairingError("the reference member must have lag 0")

    # Window length per member, drawn like a single-series plan window.
    lengths: dict[str, int] = {}
    for sid, s in by_id.items():
        if root_kind == AnomalyKind.TRANSIENT_SPIKE:
            cap = spike_width_cap(s.n_steps)
            lengths[sid] = int(rng.integers(min(3, cap), cap + 1))
        else:
            frac = rng.uniform(*config.window_fraction_range)
            lengths[sid] = min(max(3, int(round(frac * s.n_steps))), s.n_steps)

    # Feasible reference times: member start index must land in
    # [0, n - length] once shifted by its lag.
    lo = None
    hi = None
    for sid, s in by_id.items():
        first = s.start_time - timedelta(seconds=lags[sid] * step)
        last = s.start_time + timedelta(seconds=(s.n_steps - lengths[sid] - lags[sid]) * step)
        lo = first if lo is None or first > lo else lo
        hi = last if hi is None or last < hi else hi
    if lo is None or hi is None or hi < lo:
        raise PairingError("no reference time satisfies every member window")
    span_steps = int((hi - lo).total_seconds() // step)
    ref_time = lo + timedelta(seconds=int(rng.integers(0, span_steps + 1)) * step)

    records: dict[str, AnomalyRecord] = {}
    for sid, s in by_id.items():
        start_f = s.index_of(ref_time) + lags[sid]
        start = int(round(start_f))
        if abs(start_f - start) > 1e-9:
            raise PairingError(f"reference time is off the sampling grid of {sid}")
        if not 0 <= start <= s.n_steps - lengths[sid]:
            raise PairingError(f"event window leaves the range of {sid}")
        pool = None
        if root_kind == AnomalyKind.SEASONALITY_CHANGE:
            pool = _seasonal_channels(s, lengths[sid])
            if not pool:
                raise PairingError(f"{sid} has no seasonal channel for a seasonality event")
        channels = _pick_channels(s, config, rng, pool)
        records[sid] = AnomalyRecord(
            kind=root_kind,
            channels=channels,
            start_idx=start,
            end_idx=start + lengths[sid],
            magnitude_factor=float(rng.uniform(*config.magnitude_factor_range)),
            sign=-1 if rng.random() < config.p_downward else 1,
            event_id=event_id,
            lag_steps=lags[sid],
            flatline_mode="hold",
            period_ratio=float(rng.choice([0.5, 2.0])),
        )
    event = IncidentEvent(
        event_id=event_id,
        root_kind=root_kind,
        reference_series_id=ref_id,
        reference_time=ref_time,
        member_lags=dict(lags),
    )
    return event, records


def write_key(path: str, series_id: str, records: list[AnomalyRecord]) -> None:
    payload = {
        "schema_version": KEY_SCHEMA_VERSION,
        "series_id": series_id,
        "records": [r.to_dict() for r in records],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_key(path: str) -> tuple[str, list[AnomalyRecord]]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != KEY_SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported key schema")
    records = [AnomalyRecord.from_dict(d) for d in payload["records"]]
    return payload["series_id"], records


def write_events(path: str, events: list[IncidentEvent]) -> None:
    payload = {
        "schema_version": KEY_SCHEMA_VERSION,
        "events": [e.to_dict() for e in events],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_events(path: str) -> list[IncidentEvent]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != KEY_SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported events schema")
    return [IncidentEvent.from_dict(d) for d in payload["events"]]
