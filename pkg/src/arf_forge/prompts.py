"""Prompt assembly for model evaluation.

The instruction block below is the canonical protocol text sent with
every question: the task framing, the eight category definitions, and
the strict JSON answer format. Evaluated models never see ground truth;
they get the instructions, the question, shuffled options, captions,
and either images or a serialized table of the series.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import SerializationError
from .questions import Question
from .rng import child_rng
from .synth import TimeSeries

MODE_VISION = "vision"
MODE_TEXT = "text"

OPTION_LETTERS = "ABCDEFGH"

# Budget heuristic: roughly four characters per token plus headroom.
TOKEN_CHARS = 4
TOKEN_MARGIN = 0.10

MAX_UNIFORM_STRIDE = 8
MIDDLE_TRUNCATION_FRACTIONS = (0.25, 0.40, 0.55, 0.70)

EVAL_INSTRUCTIONS = """## Task Description
You are an expert at analyzing time-series data
and answering questions about anomalies.
Your task is to answer the given question
about time-series anomalies by selecting the most appropriate option.
Focus on the key aspects of the anomaly being
analyzed and provide a clear explanation for your choice.

Input:
- Question: <question>
- Options: <options>
- Time-series data: {input_form}

## Question Categories
There are 8 categories of questions:
1. Anomaly Presence

The anomaly presence question is a yes/no question
that asks whether an anomaly is present in the time-series given.
An anomaly is present if the time-series has a value that
is significantly different from the counterfactual values.

2. Anomaly Identification

The anomaly identification question asks the user to identify
the channel of the anomaly in the time-series data, if an anomaly exists.
You must identify the correct channels referenced in the options,
and decide based on the meaning of the time series description as well
as the context of the other channels to decide which channel(s) is anomalous.

3. Anomaly Start

The anomaly start question asks the user to identify the start
time of the anomaly in the time-series data, if an anomaly exists.
The start time is the first time the anomaly appears in the time-series.
If there is no exact timestamp for the start time,
the correct answer is the timestamp closest to the start of the anomaly.

4. Anomaly End

The anomaly end question asks the user to identify the end time
of the anomaly in the time-series data, if an anomaly exists.
The end time is the last time the anomaly appears in the time-series.
If there is no exact timestamp for the end time,
the correct answer is the timestamp closest to the end of the anomaly.

5. Anomaly Magnitude

The anomaly magnitude question asks the user to identify the magnitude
of the anomaly in the time-series data, if an anomaly exists.
The magnitude is the maximum ratio of the anomaly values to the
counterfactual non-anomalous values.
Here, the magnitudes for the answer choices are on a logarithmic scale,
in the base that is most natural for the data.
If the counterfactual values are 0, use the absolute
deviation from the mean counterfactual values.

6. Anomaly Categorization

The anomaly categorization question asks the user to identify
the category of the anomaly in the time-series data, if an anomaly exists.
There are 6 categories:
- Level Shift. This is when the time-series has a sustained change
in mean value.
- Transient Spike. This is when the time-series has a sudden spike
in value, but the value returns to the normal range after a very
short period of time with no intervention.
- Change in Seasonality. This is when the time-series has a change
in the seasonal pattern of the data.
- Change in Variance. This is when the time-series has a major
sustained change in the variance of the data.
- Change in Trend. This is when the time-series has a major change
in the trend (long term increase or decrease).
- No Anomaly

7. Anomaly Correlation

The anomaly correlation question is a paired query question that
asks the user to identify whether the anomalies in two time-series
are correlated. Two anomalies are correlated if they have a known
causal relation, if the time series have similar trends over time, or if they
have the same underlying root causes.

8. Anomaly Indicator

The anomaly indicator question is a paired query question that asks
the user to identify whether some anomaly in the first time-series is
a leading or lagging indicator of the anomaly in the second time-series.
Use the timing of the anomalies to identify the correct answer.

## Answer Format
The answer should match one of the options exactly.
Do not include the letter of the option in the answer.
Include a detailed explanation of your reasoning for the answer.

The response MUST be a JSON in this format. Respond ONLY with the JSON.
Do not include any extraneous formatting or Markdown quotes.
Output format:
{{
    "answer": <answer>,
    "reasoning": <reasoning>
}}"""

INPUT_FORM = {
    MODE_VISION: "PNG plot(s) of the time-series, attached as images.",
    MODE_TEXT: "a table of timestamped values, included below.",
}


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / TOKEN_CHARS * (1.0 + TOKEN_MARGIN))


def shuffle_options(question: Question, seed: int) -> tuple[list[str], list[int]]:
    """Deterministic per-question option order for display.

    Returns the displayed options and a permutation where
    ``permutation[display_index] == canonical_index``.
    """
    rng = child_rng(seed, "shuffle", question.question_id)
    perm = [int(i) for i in rng.permutation(len(question.options))]
    displayed = [question.options[i] for i in perm]
    return displayed, perm


def _format_value(v: float) -> str:
    if math.isnan(v):
        return ""
    return f"{v:.6g}"


def _rows_to_text(series: TimeSeries, indices: np.ndarray, marker: str | None, split: int) -> str:
    lines = [
        f"start={series.start_time.strftime('%Y-%m-%d %H:%M:%S')} UTC "
        f"step={series.step_seconds}s rows={series.n_steps}",
        "timestamp," + ",".join(series.channel_names),
    ]
    for pos, i in enumerate(indices):
        if marker is not None and pos == split:
            lines.append(marker)
        stamp = series.timestamp_at(int(i)).strftime("%Y-%m-%d %H:%M:%S")
        vals = ",".join(_format_value(v) for v in series.values[int(i)])
        lines.append(f"{stamp},{vals}")
    return "\n".join(lines)


def serialize_series_text(series: TimeSeries, budget_tokens: int) -> str:
    """Render a series as a timestamped table within a token budget.

    Uniform strides are tried first so the whole span stays visible;
    if even the coarsest stride cannot fit, full-resolution rows are
    kept at both ends and a fraction of the middle is elided, trying
    25%, 40%, 55%, then 70%. A budget below the smallest rendering
    raises :class:`SerializationError`.
    """
    n = series.n_steps
    for stride in range(1, MAX_UNIFORM_STRIDE + 1):
        indices = np.arange(0, n, stride)
        text = _rows_to_text(series, indices, None, -1)
        if estimate_tokens(text) <= budget_tokens:
            return text
    for frac in MIDDLE_TRUNCATION_FRACTIONS:
        keep = n - int(math.floor(frac * n))
        head = math.ceil(keep / 2)
        tail = keep - head
        indices = np.concatenate([np.arange(head), np.arange(n - tail, n)])
        marker = f"... [{int(frac * 100)}% of rows elided] ..."
        text = _rows_to_text(series, indices, marker, head)
        if estimate_tokens(text) <= budget_tokens:
            return text
    raise SerializationError(
        f"series {series.series_id} does not fit in {budget_tokens} tokens "
        f"even with 70% of rows elided"
    )


def build_prompt(
    question: Question,
    mode: str,
    displayed_options: list[str],
    series_list: list[TimeSeries] | None = None,
    image_paths: list[str] | None = None,
    budget_tokens: int = 16_000,
    few_shot_block: str = "",
) -> dict:
    """Assemble the full payload for one question.

    Returns a dict with ``system``, ``user``, and ``images`` entries.
    Vision mode references the rendered images; text mode embeds each
    series as a table, splitting the budget across paired series.
    """
    if mode not in (MODE_VISION, MODE_TEXT):
        raise SerializationError(f"unknown mode {mode!r}")
    system = EVAL_INSTRUCTIONS.format(input_form=INPUT_FORM[mode])
    if few_shot_block:
        system = system + "\n\n" + few_shot_block

    parts = []
    for i, caption in enumerate(question.captions):
        label = f"Time-series {i + 1}" if len(question.captions) > 1 else "Time-series"
        parts.append(f"{label}: {caption}")
    parts.append("")
    parts.append(f"Question: {question.text}")
    parts.append("Options:")
    for i, opt in enumerate(displayed_options):
        parts.append(f"{OPTION_LETTERS[i]}. {opt}")

    images: list[str] = []
    if mode == MODE_VISION:
        images = list(image_paths or [])
        if not images:
            raise SerializationError(f"{question.question_id}: vision mode needs images")
    else:
        if not series_list:
            raise SerializationError(f"{question.question_id}: text mode needs series data")
        per_series = budget_tokens // len(series_list)
        parts.append("")
        for i, s in enumerate(series_list):
            if len(series_list) > 1:
                parts.append(f"Time-series {i + 1} data:")
            else:
                parts.append("Time-series data:")
            parts.append(serialize_series_text(s, per_series))
    return {"system": system, "user": "\n".join(parts), "images": images}
