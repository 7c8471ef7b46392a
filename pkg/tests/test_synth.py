import math
import re

import numpy as np
import pytest
from scipy import stats

from arf_forge.errors import ConfigError
from arf_forge.rng import child_rng
from arf_forge.synth import (
    AGGREGATIONS,
    DEFAULT_LENGTH_SEGMENTS,
    METRIC_NOUNS,
    SynthConfig,
    TimeSeries,
    format_rfc3339,
    generate_series,
    make_channel_names,
    parse_rfc3339,
    read_series_csv,
    sample_length,
    write_series_csv,
)


def test_rfc3339_round_trip():
    text = "2025-03-04T05:06:07Z"
    assert format_rfc3339(parse_rfc3339(text)) == text


def test_config_rejects_bad_ranges():
    with pytest.raises(ConfigError):
        SynthConfig(variate_range=(0, 5)).validate()
    with pytest.raises(ConfigError):
        SynthConfig(variate_range=(5, 2)).validate()
    with pytest.raises(ConfigError):
        SynthConfig(length_segments=((100, 999, 1.0),)).validate()
    with pytest.raises(ConfigError):
        SynthConfig(length_segments=((240, 999, 0.0),)).validate()
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"not_a_field": 1})


def test_length_segment_mass():
    # Default recipe: 40% of lengths fall in the 1000..10000 band.
    config = SynthConfig()
    rng = child_rng(5, "lengths")
    n = 4000
    lengths = np.array([sample_length(config, rng) for _ in range(n)])
    assert lengths.min() >= 240 and lengths.max() <= 50_000
    in_band = np.mean((lengths >= 1000) & (lengths <= 10_000))
    # 4 sigma around 0.40 at n=4000.
    assert abs(in_band - 0.40) < 4 * math.sqrt(0.4 * 0.6 / n)


def test_length_segment_chisquare():
    config = SynthConfig()
    rng = child_rng(6, "lengths")
    n = 3000
    lengths = np.array([sample_length(config, rng) for _ in range(n)])
    observed = []
    expected = []
    for lo, hi, w in DEFAULT_LENGTH_SEGMENTS:
        observed.append(int(np.sum((lengths >= lo) & (lengths <= hi))))
        expected.append(w * n)
    _, p = stats.chisquare(observed, expected)
    assert p > 0.001


def test_clean_channel_is_zero_mean_gaussian():
    config = SynthConfig(
        seasonal_probability=0.0,
        drift_probability=0.0,
        length_segments=((5000, 5000, 1.0),),
        variate_range=(1, 1),
    )
    series = generate_series(config, child_rng(3, "clean"))
    col = series.values[:, 0]
    scale = series.channel_models[0].scale
    n = col.shape[0]
    assert abs(col.mean()) < 4 * scale / math.sqrt(n)
    assert abs(col.std() - scale) < 0.1 * scale


def test_seasonal_component_visible():
    config = SynthConfig(
        seasonal_probability=1.0,
        drift_probability=0.0,
        seasonal_amplitude_range=(2.0, 2.0),
        seasonal_period_range=(50, 50),
        length_segments=((2000, 2000, 1.0),),
        variate_range=(1, 1),
    )
    series = generate_series(config, child_rng(4, "seasonal"))
    model = series.channel_models[0]
    assert model.seasonal_period == pytest.approx(50.0)
    t = np.arange(series.n_steps)
    template = np.sin(2 * np.pi * t / model.seasonal_period + model.seasonal_phase)
    # The injected sinusoid correlates strongly with its template.
    r = np.corrcoef(series.values[:, 0], template)[0, 1]
    assert r > 0.8


def test_drift_total_matches_model():
    config = SynthConfig(
        seasonal_probability=0.0,
        drift_probability=1.0,
        drift_total_range=(1.5, 1.5),
        length_segments=((4000, 4000, 1.0),),
        variate_range=(1, 1),
    )
    series = generate_series(config, child_rng(9, "drift"))
    model = series.channel_models[0]
    assert model.drift_total == pytest.approx(1.5 * model.scale)
    n = series.n_steps
    half = n // 2
    diff = series.values[half:, 0].mean() - series.values[:half, 0].mean()
    assert diff == pytest.approx(model.drift_total / 2, abs=4 * model.scale / math.sqrt(half))


def test_channel_names_unique_and_tagged():
    rng = child_rng(2, "names")
    for v in (1, 2, 3, 5, 8, 20, 100):
        names = make_channel_names(v, rng)
        assert len(names) == v
        assert len(set(names)) == v
        for name in names:
            assert re.fullmatch(r"[a-z_]+:[A-Za-z0-9_\-]+(,[a-z_]+:[A-Za-z0-9_\-]+)?", name), name


def test_caption_mentions_metric_and_aggregation():
    config = SynthConfig(variate_range=(2, 6))
    for i in range(20):
        series = generate_series(config, child_rng(i, "caption"), series_id=f"s{i}")
        phrases = [p for group in METRIC_NOUNS.values() for p in group]
        assert any(phrase in series.caption for phrase in phrases), series.caption
        has_agg = any(series.caption.startswith(agg) for agg in AGGREGATIONS)
        assert has_agg or series.caption.startswith("Rate of change"), series.caption
        assert series.caption.endswith(".")


def test_csv_round_trip_bit_exact(tmp_path):
    config = SynthConfig(length_segments=((240, 600, 1.0),), variate_range=(2, 4))
    series = generate_series(config, child_rng(8, "csv"), series_id="s42")
    # Plant NaNs to exercise empty cells.
    series.values[5, 0] = np.nan
    series.values[100, -1] = np.nan
    path = tmp_path / "s42.csv"
    write_series_csv(series, str(path))
    loaded = read_series_csv(str(path), series_id="s42", caption=series.caption)
    assert loaded.channel_names == series.channel_names
    assert loaded.step_seconds == series.step_seconds
    assert loaded.start_time == series.start_time
    assert loaded.values.shape == series.values.shape
    assert np.array_equal(loaded.values, series.values, equal_nan=True)
    # Bit-exact, not merely close.
    a = series.values[np.isfinite(series.values)]
    b = loaded.values[np.isfinite(loaded.values)]
    assert np.array_equal(a.view(np.uint64), b.view(np.uint64))


def test_read_csv_rejects_ragged_grid(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "timestamp,a\n2025-01-01T00:00:00Z,1.0\n2025-01-01T00:01:00Z,2.0\n2025-01-01T00:03:00Z,3.0\n"
    )
    with pytest.raises(ConfigError):
        read_series_csv(str(path))


def test_series_validation():
    values = np.zeros((10, 2))
    with pytest.raises(ConfigError):
        TimeSeries(
            series_id="x",
            start_time=parse_rfc3339("2025-01-01T00:00:00Z"),
            step_seconds=60,
            values=values,
            channel_names=["a"],  # wrong count
        )
    with pytest.raises(ConfigError):
        TimeSeries(
            series_id="x",
            start_time=parse_rfc3339("2025-01-01T00:00:00Z"),
            step_seconds=60,
            values=values,
            channel_names=["a", "a"],  # duplicate
        )


def test_generate_series_deterministic():
    config = SynthConfig(length_segments=((240, 999, 1.0),), variate_range=(1, 6))
    s1 = generate_series(config, child_rng(12, "det"), series_id="s0")
    s2 = generate_series(config, child_rng(12, "det"), series_id="s0")
    assert np.array_equal(s1.values, s2.values)
    assert s1.channel_names == s2.channel_names
    assert s1.caption == s2.caption
    assert s1.start_time == s2.start_time
