"""Synthetic multivariate telemetry generation.

A series is i.i.d. Gaussian noise per channel, optionally perturbed by a
sinusoidal seasonal component and a linear drift, with per-channel scale
drawn log-uniformly so channels span several orders of magnitude. The
generation parameters for each channel are kept on the series so later
stages (anomaly planning, ground-truth checks) can reason about the
clean base signal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import ConfigError

MAX_VARIATES = 100
MIN_LENGTH = 240
MAX_LENGTH = 50_000

# Weighted length segments, log-uniform within each segment. The middle
# segment carries 40% of the mass by construction.
DEFAULT_LENGTH_SEGMENTS: tuple[tuple[int, int, float], ...] = (
    (240, 999, 0.35),
    (1_000, 10_000, 0.40),
    (10_001, 50_000, 0.25),
)

TAG_KEYS = (
    "pod",
    "datacenter",
    "shard",
    "org_id",
    "job_type",
    "service",
    "host",
    "container",
    "region",
    "topic",
    "partition",
    "consumer_group",
)

AGGREGATIONS = ("Sum", "Average", "Maximum", "Minimum", "P95", "P99")

METRIC_NOUNS: dict[str, tuple[str, ...]] = {
    "latency": ("request latency", "query response time", "round-trip time", "partition time lag"),
    "errors": ("error count", "failed request count", "timeout count", "5xx response count"),
    "cpu": ("CPU utilization", "CPU throttling time"),
    "memory": ("memory usage", "resident set size", "heap allocation rate"),
    "queue": ("queue depth", "consumer lag", "pending task count"),
    "capacity": ("active replica count", "running pod count"),
    "throughput": ("request rate", "ingestion throughput", "messages consumed per second"),
    "storage": ("disk usage", "write IOPS", "compaction backlog"),
}

SURFACES = (
    "the ingestion service",
    "the checkout service",
    "the streaming pipeline",
    "the payments API",
    "the search cluster",
    "the recommendation backend",
    "a production workload",
    "the session cache",
)

FILTER_PHRASES = (
    "environment and region",
    "cluster and namespace",
    "consumer group and datacenter",
    "tenant tier",
    "deployment stage",
)

# Caption grammar. {groups} is filled with the tag keys that name the
# series channels so captions stay consistent with channel labels.
DEFAULT_CAPTION_TEMPLATES = (
    "{agg} of {metric} for {surface}, filtered by {filters}, and grouped by {groups}.",
    "{agg} of {metric} for {surface}, grouped by {groups}.",
    "{agg} of {metric} across {surface}, grouped by {groups}.",
    "Rate of change of {metric} for {surface}, grouped by {groups}.",
    "{agg} of {metric} for {surface} per reporting interval, grouped by {groups}.",
)

RFC3339_FMT = "%Y-%m-%dT%H:%M:%SZ"
DEFAULT_START_EPOCH = "2025-01-01T00:00:00Z"


def parse_rfc3339(text: str) -> datetime:
    return datetime.strptime(text, RFC3339_FMT).replace(tzinfo=timezone.utc)


def format_rfc3339(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime(RFC3339_FMT)


@dataclass
class ChannelModel:
    """Clean-signal parameters for one channel."""

    scale: float
    seasonal_period: float | None = None
    seasonal_amplitude: float = 0.0
    seasonal_phase: float = 0.0
    drift_total: float = 0.0

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "seasonal_period": self.seasonal_period,
            "seasonal_amplitude": self.seasonal_amplitude,
            "seasonal_phase": self.seasonal_phase,
            "drift_total": self.drift_total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelModel":
        return cls(
            scale=float(d["scale"]),
            seasonal_period=None if d.get("seasonal_period") is None else float(d["seasonal_period"]),
            seasonal_amplitude=float(d.get("seasonal_amplitude", 0.0)),
            seasonal_phase=float(d.get("seasonal_phase", 0.0)),
            drift_total=float(d.get("drift_total", 0.0)),
        )


@dataclass
class TimeSeries:
    """A regularly sampled multivariate series.

    ``values`` has shape (n_steps, n_channels); row ``i`` is observed at
    ``start_time + i * step_seconds``. Missing observations are NaN and
    only ever come from gap-style anomalies.
    """

    series_id: str
    start_time: datetime
    step_seconds: int
    values: np.ndarray
    channel_names: list[str]
    caption: str = ""
    incident_group: str | None = None
    channel_models: list[ChannelModel] = field(default_factory=list)
    metric_kind: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ConfigError("series values must be a 2-D array")
        if self.values.shape[1] != len(self.channel_names):
            raise ConfigError("channel name count does not match value columns")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ConfigError("channel names must be unique")
        if self.start_time.tzinfo is None:
            self.start_time = self.start_time.replace(tzinfo=timezone.utc)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def timestamp_at(self, index: int) -> datetime:
        return self.start_time + timedelta(seconds=int(index) * self.step_seconds)

    def index_of(self, when: datetime) -> float:
        return (when - self.start_time).total_seconds() / self.step_seconds

    def end_time(self) -> datetime:
        return self.timestamp_at(self.n_steps - 1)

    def copy(self) -> "TimeSeries":
        return TimeSeries(
            series_id=self.series_id,
            start_time=self.start_time,
            step_seconds=self.step_seconds,
            values=self.values.copy(),
            channel_names=list(self.channel_names),
            caption=self.caption,
            incident_group=self.incident_group,
            channel_models=list(self.channel_models),
            metric_kind=self.metric_kind,
        )


@dataclass
class SynthConfig:
    """Knobs for the clean-series generator.

    ``length_segments`` is a list of (low, high, weight) integer ranges:
    a segment is picked by weight, then the length is log-uniform inside
    it. ``drift_total_range`` is the total drift over the whole series
    in units of the channel noise scale, so drift severity does not
    depend on length. ``seasonal_period_range`` bounds are in steps; the
    upper bound is additionally capped at half the series length.
    """

    length_segments: tuple[tuple[int, int, float], ...] = DEFAULT_LENGTH_SEGMENTS
    variate_range: tuple[int, int] = (1, 100)
    step_seconds: int = 60
    noise_scale_range: tuple[float, float] = (0.5, 50.0)
    seasonal_probability: float = 0.5
    seasonal_amplitude_range: tuple[float, float] = (0.5, 2.0)
    seasonal_period_range: tuple[float, float] = (20.0, 25_000.0)
    drift_probability: float = 0.5
    drift_total_range: tuple[float, float] = (-2.0, 2.0)
    start_epoch: str = DEFAULT_START_EPOCH
    start_jitter_days: int = 365
    caption_templates: tuple[str, ...] = DEFAULT_CAPTION_TEMPLATES

    def validate(self) -> None:
        if not self.length_segments:
            raise ConfigError("length_segments must be non-empty")
        for lo, hi, w in self.length_segments:
            if not (MIN_LENGTH <= lo <= hi <= MAX_LENGTH):
                raise ConfigError(
                    f"length segment [{lo}, {hi}] outside [{MIN_LENGTH}, {MAX_LENGTH}]"
                )
            if w <= 0:
                raise ConfigError("length segment weights must be positive")
        lo, hi = self.variate_range
        if not (1 <= lo <= hi <= MAX_VARIATES):
            raise ConfigError(f"variate_range must sit inside [1, {MAX_VARIATES}]")
        if self.step_seconds <= 0:
            raise ConfigError("step_seconds must be positive")
        if self.noise_scale_range[0] <= 0 or self.noise_scale_range[0] > self.noise_scale_range[1]:
            raise ConfigError("noise_scale_range must be positive and ordered")
        if not 0.0 <= self.seasonal_probability <= 1.0:
            raise ConfigError("seasonal_probability must be in [0, 1]")
        if not 0.0 <= self.drift_probability <= 1.0:
            raise ConfigError("drift_probability must be in [0, 1]")
        if self.seasonal_amplitude_range[0] < 0 or self.seasonal_amplitude_range[0] > self.seasonal_amplitude_range[1]:
            raise ConfigError("seasonal_amplitude_range must be ordered and non-negative")
        if self.seasonal_period_range[0] < 2 or self.seasonal_period_range[0] > self.seasonal_period_range[1]:
            raise ConfigError("seasonal_period_range must be ordered with low bound >= 2")
        if self.drift_total_range[0] > self.drift_total_range[1]:
            raise ConfigError("drift_total_range must be ordered")
        if self.start_jitter_days < 0:
            raise ConfigError("start_jitter_days must be non-negative")
        if not self.caption_templates:
            raise ConfigError("caption_templates must be non-empty")
        parse_rfc3339(self.start_epoch)

    def to_dict(self) -> dict:
        return {
            "length_segments": [list(s) for s in self.length_segments],
            "variate_range": list(self.variate_range),
            "step_seconds": self.step_seconds,
            "noise_scale_range": list(self.noise_scale_range),
            "seasonal_probability": self.seasonal_probability,
            "seasonal_amplitude_range": list(self.seasonal_amplitude_range),
            "seasonal_period_range": list(self.seasonal_period_range),
            "drift_probability": self.drift_probability,
            "drift_total_range": list(self.drift_total_range),
            "start_epoch": self.start_epoch,
            "start_jitter_days": self.start_jitter_days,
            "caption_templates": list(self.caption_templates),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        kwargs: dict = dict(d)
        if "length_segments" in kwargs:
            kwargs["length_segments"] = tuple(
                (int(lo), int(hi), float(w)) for lo, hi, w in kwargs["length_segments"]
            )
        for key in (
            "variate_range",
            "noise_scale_range",
            "seasonal_amplitude_range",
            "seasonal_period_range",
            "drift_total_range",
        ):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "caption_templates" in kwargs:
            kwargs["caption_templates"] = tuple(kwargs["caption_templates"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _log_uniform_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    # Sample on [lo, hi] inclusive with density proportional to 1/x.
    u = rng.uniform(math.log(lo), math.log(hi + 1))
    return min(int(math.exp(u)), hi)


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def sample_length(config: SynthConfig, rng: np.random.Generator) -> int:
    weights = np.array([w for _, _, w in config.length_segments], dtype=float)
    weights /= weights.sum()
    idx = int(rng.choice(len(weights), p=weights))
    lo, hi, _ = config.length_segments[idx]
    return _log_uniform_int(rng, lo, hi)


def sample_variate_count(config: SynthConfig, rng: np.random.Generator) -> int:
    lo, hi = config.variate_range
    return _log_uniform_int(rng, lo, hi)


def make_channel_names(v_count: int, rng: np.random.Generator) -> list[str]:
    """Build ``v_count`` unique composite tag names like ``pod:2,region:1``.

    One or two tag keys are chosen for the whole series; values are
    enumerated over a grid so every name parses as comma-joined
    ``key:value`` pairs.
    """
    if v_count < 1:
        raise ConfigError("v_count must be >= 1")
    n_keys = 1 if v_count <= 3 else int(rng.choice([1, 2]))
    keys = list(rng.choice(TAG_KEYS, size=n_keys, replace=False))
    if n_keys == 1:
        return [f"{keys[0]}:{i + 1}" for i in range(v_count)]
    a = math.ceil(math.sqrt(v_count))
    names = []
    for flat in range(v_count):
        i, j = divmod(flat, a)
        names.append(f"{keys[0]}:{i + 1},{keys[1]}:{j + 1}")
    return names


def tag_keys_of(channel_names: list[str]) -> list[str]:
    """Tag keys used by a channel-name set, in first-seen order."""
    seen: list[str] = []
    for part in channel_names[0].split(","):
        key = part.split(":", 1)[0]
        if key not in seen:
            seen.append(key)
    return seen


def make_caption(
    templates: tuple[str, ...],
    metric_kind: str,
    rng: np.random.Generator,
    group_keys: list[str] | None = None,
) -> str:
    """Render a monitoring-style caption for the given metric kind."""
    if metric_kind not in METRIC_NOUNS:
        raise ConfigError(f"unknown metric kind: {metric_kind!r}")
    template = templates[int(rng.integers(len(templates)))]
    keys = group_keys or [str(rng.choice(TAG_KEYS))]
    if len(keys) == 1:
        groups = keys[0]
    else:
        groups = ", ".join(keys[:-1]) + " and " + keys[-1]
    return template.format(
        agg=str(rng.choice(AGGREGATIONS)),
        metric=str(rng.choice(METRIC_NOUNS[metric_kind])),
        surface=str(rng.choice(SURFACES)),
        filters=str(rng.choice(FILTER_PHRASES)),
        groups=groups,
    )


def generate_series(
    config: SynthConfig,
    rng: np.random.Generator,
    series_id: str = "s0",
    incident_group: str | None = None,
    start_time: datetime | None = None,
    length: int | None = None,
) -> TimeSeries:
    """Draw one clean series from the configured distribution.

    ``start_time`` and ``length`` may be pinned by the caller (incident
    groups share a clock); everything else comes from ``rng``.
    """
    config.validate()
    n_steps = int(length) if length is not None else sample_length(config, rng)
    if not MIN_LENGTH <= n_steps <= MAX_LENGTH:
        raise ConfigError(f"series length {n_steps} outside [{MIN_LENGTH}, {MAX_LENGTH}]")
    v_count = sample_variate_count(config, rng)
    names = make_channel_names(v_count, rng)
    metric_kind = str(rng.choice(sorted(METRIC_NOUNS)))
    caption = make_caption(config.caption_templates, metric_kind, rng, tag_keys_of(names))

    if start_time is None:
        base = parse_rfc3339(config.start_epoch)
        jitter_minutes = int(rng.integers(0, max(1, config.start_jitter_days * 24 * 60)))
        start_time = base + timedelta(minutes=jitter_minutes)

    t = np.arange(n_steps, dtype=np.float64)
    values = np.empty((n_steps, v_count), dtype=np.float64)
    models: list[ChannelModel] = []
    for c in range(v_count):
        scale = _log_uniform(rng, *config.noise_scale_range)
        col = rng.normal(0.0, scale, size=n_steps)
        model = ChannelModel(scale=scale)
        if rng.random() < config.seasonal_probability:
            lo = config.seasonal_period_range[0]
            hi = min(config.seasonal_period_range[1], n_steps / 2.0)
            if hi >= lo:
                period = _log_uniform(rng, lo, hi)
                amplitude = float(rng.uniform(*config.seasonal_amplitude_range)) * scale
                phase = float(rng.uniform(0.0, 2.0 * math.pi))
                col += amplitude * np.sin(2.0 * math.pi * t / period + phase)
                model.seasonal_period = period
                model.seasonal_amplitude = amplitude
                model.seasonal_phase = phase
        if rng.random() < config.drift_probability:
            total = float(rng.uniform(*config.drift_total_range)) * scale
            col += total * t / max(n_steps - 1, 1)
            model.drift_total = total
        values[:, c] = col
        models.append(model)

    return TimeSeries(
        series_id=series_id,
        start_time=start_time,
        step_seconds=config.step_seconds,
        values=values,
        channel_names=names,
        caption=caption,
        incident_group=incident_group,
        channel_models=models,
        metric_kind=metric_kind,
    )


def write_series_csv(series: TimeSeries, path: str) -> None:
    """Write ``timestamp,<channels...>`` rows; NaN becomes an empty cell.

    Floats are written with ``repr`` so a round trip is bit-exact.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(series.channel_names))
        step = timedelta(seconds=series.step_seconds)
        stamp = series.start_time
        for row in series.values:
            cells = [stamp.strftime(RFC3339_FMT)]
            cells.extend("" if math.isnan(v) else repr(v) for v in row.tolist())
            writer.writerow(cells)
            stamp += step


def read_series_csv(path: str, series_id: str = "", caption: str = "") -> TimeSeries:
    """Load a series written by :func:`write_series_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "timestamp" or len(header) < 2:
            raise ConfigError(f"{path}: malformed series header")
        names = header[1:]
        stamps: list[str] = []
        rows: list[list[float]] = []
        for line in reader:
            if len(line) != len(header):
                raise ConfigError(f"{path}: row width does not match header")
            stamps.append(line[0])
            rows.append([math.nan if cell == "" else float(cell) for cell in line[1:]])
    if len(rows) < 2:
        raise ConfigError(f"{path}: a series needs at least two rows")
    # Stamps are UTC by construction; numpy wants them zone-free.
    times = np.array([s.rstrip("Z") for s in stamps], dtype="datetime64[s]")
    deltas = np.diff(times).astype("timedelta64[s]").astype(np.int64)
    if len(set(deltas.tolist())) != 1 or deltas[0] <= 0:
        raise ConfigError(f"{path}: timestamps are not a uniform increasing grid")
    return TimeSeries(
        series_id=series_id or path,
        start_time=parse_rfc3339(stamps[0]),
        step_seconds=int(deltas[0]),
        values=np.array(rows, dtype=np.float64),
        channel_names=names,
        caption=caption,
    )
