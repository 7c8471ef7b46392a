"""Evaluation loop: ask a model (or a reference baseline) every
benchmark question and persist one record per question.

Answers flow through the same pipeline regardless of who produced
them: options are shuffled per question, the response text is parsed
for a JSON answer, the answer is matched against the displayed
options, and the matched index is mapped back to canonical order.
Records are appended to the output file as they complete, so an
interrupted run resumes by question id without re-asking anything.

Ground-truth keys stay out of this module except for one explicit
path: the answer-key oracle baseline. Model runs never see key files.
"""

from __future__ import annotations

import dataclasses
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from .baselines import (
    BASELINE_NAMES,
    FrequentChoice,
    OracleBaseline,
    ZScoreBaseline,
    predict_random,
)
from .clients import (
    EvalRecord,
    HttpChatClient,
    HttpClientConfig,
    match_option,
    parse_answer,
    write_records,
)
from .dataset import Benchmark
from .errors import ConfigError, HarnessError
from .prompts import MODE_TEXT, MODE_VISION, build_prompt, shuffle_options
from .questions import TIER_OF, Question

BASELINE_PREFIX = "baseline:"


@dataclass
class RunConfig:
    """Settings for one evaluation run."""

    model: str
    mode: str = MODE_VISION
    seed: int = 0
    endpoint: str = ""
    api_key_env: str = "ARF_FORGE_API_KEY"
    temperature: float = 0.05
    max_tokens: int = 2000
    concurrency: int = 4
    requests_per_minute: float = 60.0
    timeout_s: float = 120.0
    max_retries: int = 5
    context_budget_tokens: int = 16_000
    few_shot_block: str = ""

    def validate(self) -> None:
        if not self.model:
            raise ConfigError("model must be set")
        if self.mode not in (MODE_VISION, MODE_TEXT):
            raise ConfigError(f"mode must be {MODE_VISION!r} or {MODE_TEXT!r}")
        if self.model.startswith(BASELINE_PREFIX):
            if self.model not in BASELINE_NAMES:
                raise ConfigError(
                    f"unknown baseline {self.model!r}; expected one of {BASELINE_NAMES}"
                )
        elif not self.endpoint:
            raise ConfigError("endpoint is required for model runs")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run keys: {sorted(unknown)}")
        return cls(**d)


def read_existing_records(path: str) -> list[EvalRecord]:
    """Parse a possibly truncated records file; a malformed trailing
    line (interrupted write) is dropped, malformed interior lines are
    an error."""
    if not os.path.isfile(path):
        return []
    out = []
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    for i, line in enumerate(lines):
        if not line:
            continue
        try:
            out.append(EvalRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError):
            if i == len(lines) - 1:
                break
            raise HarnessError(f"{path}: corrupt record on line {i + 1}")
    return out


def _n_images(question: Question) -> int:
    return 3 if TIER_OF[question.category] == 3 else 1


class _BaselineAnswerer:
    """Adapts the reference baselines to the common answer pipeline."""

    def __init__(self, name: str, benchmark: Benchmark, seed: int):
        self.name = name
        self.benchmark = benchmark
        self.seed = seed
        if name == "baseline:frequent":
            self._frequent = FrequentChoice(benchmark.questions())
        elif name == "baseline:oracle":
            # The single sanctioned read of answer-key files.
            series_by_id = {sid: benchmark.series(sid) for sid in benchmark.series_ids()}
            records_by_id = {sid: benchmark.key(sid) for sid in benchmark.series_ids()}
            self._oracle = OracleBaseline(series_by_id, records_by_id)
        elif name == "baseline:zscore":
            self._zscore = ZScoreBaseline()

    def canonical_answer(self, question: Question) -> int:
        if self.name == "baseline:random":
            return predict_random(question, self.seed)
        if self.name == "baseline:frequent":
            return self._frequent.predict(question)
        if self.name == "baseline:oracle":
            return self._oracle.predict(question)
        if self.name == "baseline:zscore":
            series_list = [self.benchmark.series(sid) for sid in question.series_ids]
            return self._zscore.predict(question, series_list)
        raise ConfigError(f"unknown baseline {self.name!r}")


def _make_client(run: RunConfig):
    return HttpChatClient(
        HttpClientConfig(
            endpoint=run.endpoint,
            model=run.model,
            api_key_env=run.api_key_env,
            temperature=run.temperature,
            max_tokens=run.max_tokens,
            timeout_s=run.timeout_s,
            max_retries=run.max_retries,
            requests_per_minute=run.requests_per_minute,
        )
    )


def _answer_one(
    question: Question,
    run: RunConfig,
    benchmark: Benchmark,
    baseline: _BaselineAnswerer | None,
    client,
) -> EvalRecord:
    displayed, perm = shuffle_options(question, run.seed)
    started = time.monotonic()
    prompt_tokens = completion_tokens = None
    error = None
    if baseline is not None:
        canonical = baseline.canonical_answer(question)
        raw = json.dumps(
            {"answer": question.options[canonical], "reasoning": f"{run.model} reference answer"}
        )
    else:
        series_list = None
        image_paths = None
        if run.mode == MODE_VISION:
            image_paths = benchmark.image_paths(question.question_id, _n_images(question))
            missing = [p for p in image_paths if not os.path.isfile(p)]
            if missing:
                raise HarnessError(
                    f"{question.question_id}: missing rendered image {missing[0]}; "
                    "run the render step first"
                )
        else:
            series_list = [benchmark.series(sid) for sid in question.series_ids]
        payload = build_prompt(
            question,
            run.mode,
            displayed,
            series_list=series_list,
            image_paths=image_paths,
            budget_tokens=run.context_budget_tokens,
            few_shot_block=run.few_shot_block,
        )
        try:
            result = client.complete(payload)
            raw = result.text
            prompt_tokens = result.prompt_tokens
            completion_tokens = result.completion_tokens
        except HarnessError as exc:
            raw = ""
            error = str(exc)
    parsed = parse_answer(raw)
    display_idx = match_option(parsed, displayed)
    matched = perm[display_idx] if display_idx is not None else None
    return EvalRecord(
        question_id=question.question_id,
        model=run.model,
        mode=run.mode,
        permutation=perm,
        raw_response=raw,
        parsed_answer=parsed,
        valid=matched is not None,
        matched_index=matched,
        latency_s=time.monotonic() - started,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        error=error,
    )


def run_evaluation(
    benchmark: Benchmark,
    run: RunConfig,
    out_path: str,
    resume: bool = True,
    client=None,
) -> list[EvalRecord]:
    """Answer every question, appending records to ``out_path``.

    With ``resume`` (default) questions already present in the output
    file are skipped. The file is rewritten in canonical sorted order
    once the run completes. Per-question transport failures are
    recorded (and scored incorrect), not raised; configuration
    problems raise immediately.
    """
    run.validate()
    questions = sorted(benchmark.questions(), key=lambda q: q.question_id)
    existing = read_existing_records(out_path) if resume else []
    done = {r.question_id for r in existing}
    pending = [q for q in questions if q.question_id not in done]

    baseline = None
    if run.model.startswith(BASELINE_PREFIX):
        baseline = _BaselineAnswerer(run.model, benchmark, run.seed)
    elif client is None:
        client = _make_client(run)

    records = list(existing)
    if pending:
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        lock = threading.Lock()
        with open(out_path, "a" if resume else "w") as sink:

            def work(question: Question) -> EvalRecord:
                record = _answer_one(question, run, benchmark, baseline, client)
                with lock:
                    sink.write(
                        json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":"))
                    )
                    sink.write("\n")
                    sink.flush()
                return record

            if baseline is not None or run.concurrency == 1:
                for q in pending:
                    records.append(work(q))
            else:
                with ThreadPoolExecutor(max_workers=run.concurrency) as pool:
                    records.extend(pool.map(work, pending))

    write_records(out_path, records)
    return sorted(records, key=lambda r: r.question_id)
