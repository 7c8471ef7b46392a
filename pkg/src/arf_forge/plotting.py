"""Deterministic PNG rendering of series for vision-mode evaluation.

Single-series questions get one image; paired questions get three (a
stacked two-panel view with a shared time axis, then each series on its
own). Output bytes are stable for a fixed renderer version and
environment: a pinned style, no embedded timestamps or software tags,
and decimation that depends only on the data.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.dates as mdates
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError
from .synth import TimeSeries

RENDERER_VERSION = 1
MAX_SIDE_PX = 1500

SERIES_1_COLOR = "#1f77b4"
SERIES_2_COLOR = "#ff7f0e"

_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linewidth": 0.6,
    "axes.linewidth": 0.8,
    "lines.linewidth": 0.9,
    "figure.autolayout": False,
    "svg.hashsalt": "arf-forge",
}


@dataclass
class PlotSpec:
    """Size and styling for one rendered image."""

    width_px: int = 1200
    height_px: int = 400
    dpi: int = 100
    legend: bool = False
    monochrome: str | None = None
    max_points_per_px: int = 4

    def validate(self) -> None:
        if not (100 <= self.width_px <= MAX_SIDE_PX):
            raise ConfigError(f"width_px must be within [100, {MAX_SIDE_PX}]")
        if not (100 <= self.height_px <= MAX_SIDE_PX):
            raise ConfigError(f"height_px must be within [100, {MAX_SIDE_PX}]")
        if self.dpi <= 0:
            raise ConfigError("dpi must be positive")
        if self.max_points_per_px < 1:
            raise ConfigError("max_points_per_px must be >= 1")


def legend_enabled(category: str, n_channels: int) -> bool:
    """Channel names appear only when they fit or the task needs them."""
    return category == "identification" or n_channels < 8


def decimate_indices(values: np.ndarray, target_points: int) -> np.ndarray:
    """Indices to plot, at most ``target_points`` per channel.

    Buckets preserve extremes: each bucket contributes the positions of
    its min and max so spikes survive downsampling. ``values`` is one
    channel. All-NaN buckets contribute one position to keep gaps.
    """
    n = values.shape[0]
    if n <= target_points:
        return np.arange(n)
    n_buckets = max(target_points // 2, 1)
    edges = np.linspace(0, n, n_buckets + 1, dtype=np.int64)
    keep: set[int] = {0, n - 1}
    for b in range(n_buckets):
        lo, hi = int(edges[b]), int(edges[b + 1])
        if hi <= lo:
            continue
        seg = values[lo:hi]
        finite = np.isfinite(seg)
        if not finite.any():
            keep.add(lo)
            continue
        idx = np.where(finite)[0]
        keep.add(lo + int(idx[np.argmin(seg[idx])]))
        keep.add(lo + int(idx[np.argmax(seg[idx])]))
    return np.array(sorted(keep), dtype=np.int64)


def _channel_colors(n_channels: int, monochrome: str | None) -> list:
    if monochrome is not None:
        return [monochrome] * n_channels
    if n_channels <= 10:
        cmap = plt.get_cmap("tab10")
        return [cmap(i) for i in range(n_channels)]
    cmap = plt.get_cmap("viridis")
    return [cmap(i / max(n_channels - 1, 1)) for i in range(n_channels)]


def _plot_series(ax, series: TimeSeries, spec: PlotSpec) -> None:
    target = spec.max_points_per_px * spec.width_px
    colors = _channel_colors(series.n_channels, spec.monochrome)
    base_num = mdates.date2num(series.start_time)
    day_step = series.step_seconds / 86400.0
    for c in range(series.n_channels):
        col = series.values[:, c]
        idx = decimate_indices(col, target)
        x = base_num + idx * day_step
        ax.plot(x, col[idx], color=colors[c], label=series.channel_names[c])
    locator = mdates.AutoDateLocator()
    ax.xaxis.set_major_locator(locator)
    ax.xaxis.set_major_formatter(mdates.ConciseDateFormatter(locator))
    ax.margins(x=0)
    if spec.legend:
        ncol = 1 + (series.n_channels - 1) // 20
        ax.legend(loc="upper right", fontsize=6, ncol=ncol, framealpha=0.6)


def _finish(fig) -> bytes:
    buf = io.BytesIO()
    # Dropping the Software tag keeps bytes free of library versioning.
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def render_single(series: TimeSeries, spec: PlotSpec) -> bytes:
    """One PNG of every channel over absolute time."""
    spec.validate()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(
            figsize=(spec.width_px / spec.dpi, spec.height_px / spec.dpi),
            dpi=spec.dpi,
        )
        _plot_series(ax, series, spec)
        fig.subplots_adjust(left=0.07, right=0.99, top=0.96, bottom=0.12)
        return _finish(fig)


def render_paired(series_1: TimeSeries, series_2: TimeSeries, spec: PlotSpec) -> bytes:
    """Stacked two-panel PNG with a shared time axis.

    The first series is drawn monochrome blue, the second monochrome
    orange, so panel membership stays readable at any channel count.
    """
    spec.validate()
    height = min(max(spec.height_px * 2, 100), MAX_SIDE_PX)
    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(
            2,
            1,
            sharex=True,
            figsize=(spec.width_px / spec.dpi, height / spec.dpi),
            dpi=spec.dpi,
        )
        spec_1 = PlotSpec(
            width_px=spec.width_px,
            height_px=spec.height_px,
            dpi=spec.dpi,
            legend=False,
            monochrome=SERIES_1_COLOR,
            max_points_per_px=spec.max_points_per_px,
        )
        spec_2 = PlotSpec(
            width_px=spec.width_px,
            height_px=spec.height_px,
            dpi=spec.dpi,
            legend=False,
            monochrome=SERIES_2_COLOR,
            max_points_per_px=spec.max_points_per_px,
        )
        _plot_series(ax1, series_1, spec_1)
        _plot_series(ax2, series_2, spec_2)
        ax1.set_title("time-series 1", fontsize=8, color=SERIES_1_COLOR)
        ax2.set_title("time-series 2", fontsize=8, color=SERIES_2_COLOR)
        fig.subplots_adjust(left=0.07, right=0.99, top=0.95, bottom=0.08, hspace=0.25)
        return _finish(fig)


def render_question_images(
    category: str,
    series_list: list[TimeSeries],
    width_px: int = 1200,
    height_px: int = 400,
) -> list[bytes]:
    """All images for one question: one PNG for single-series tiers,
    three (stacked, series 1, series 2) for paired tiers."""
    if len(series_list) == 1:
        s = series_list[0]
        spec = PlotSpec(
            width_px=width_px,
            height_px=height_px,
            legend=legend_enabled(category, s.n_channels),
        )
        return [render_single(s, spec)]
    if len(series_list) != 2:
        raise ConfigError("a question renders one or two series")
    s1, s2 = series_list
    stacked = render_paired(s1, s2, PlotSpec(width_px=width_px, height_px=height_px))
    images = [stacked]
    for s in (s1, s2):
        spec = PlotSpec(
            width_px=width_px,
            height_px=height_px,
            legend=legend_enabled(category, s.n_channels),
        )
        images.append(render_single(s, spec))
    return images
