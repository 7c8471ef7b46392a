"""Model transport and response parsing.

A client turns a prompt payload into completion text. The HTTP client
speaks the common chat-completions JSON shape with retry, backoff, and
a shared rate limiter; tests and baselines use :class:`CallableClient`.
Responses are parsed leniently: the first JSON object carrying an
"answer" key wins, with or without code fences or surrounding prose.
"""

from __future__ import annotations

import base64
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field

import requests

from .errors import ConfigError, HarnessError

RECORDS_SCHEMA_VERSION = 1

_LETTER_PREFIX = re.compile(r"^\(?([A-H])[\).:]\s+")


@dataclass
class CompletionResult:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


@dataclass
class EvalRecord:
    """Outcome of asking one model one question."""

    question_id: str
    model: str
    mode: str
    permutation: list[int]
    raw_response: str
    parsed_answer: str | None
    valid: bool
    matched_index: int | None  # canonical option index
    latency_s: float = 0.0
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "model": self.model,
            "mode": self.mode,
            "permutation": list(self.permutation),
            "raw_response": self.raw_response,
            "parsed_answer": self.parsed_answer,
            "valid": self.valid,
            "matched_index": self.matched_index,
            "latency_s": self.latency_s,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        return cls(
            question_id=d["question_id"],
            model=d["model"],
            mode=d["mode"],
            permutation=[int(i) for i in d["permutation"]],
            raw_response=d.get("raw_response", ""),
            parsed_answer=d.get("parsed_answer"),
            valid=bool(d.get("valid", False)),
            matched_index=d.get("matched_index"),
            latency_s=float(d.get("latency_s", 0.0)),
            prompt_tokens=d.get("prompt_tokens"),
            completion_tokens=d.get("completion_tokens"),
            error=d.get("error"),
        )


def write_records(path: str, records: list[EvalRecord]) -> None:
    records = sorted(records, key=lambda r: r.question_id)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_records(path: str) -> list[EvalRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(EvalRecord.from_dict(json.loads(line)))
    return out


def _json_candidates(raw: str):
    # Yield balanced {...} substrings left to right, outermost first.
    depth = 0
    start = None
    in_str = False
    escape = False
    for i, ch in enumerate(raw):
        if in_str:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0 and start is not None:
                    yield raw[start : i + 1]


def parse_answer(raw: str) -> str | None:
    """Extract the answer string from a model response, or None."""
    if not raw:
        return None
    for candidate in _json_candidates(raw):
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and "answer" in obj:
            answer = obj["answer"]
            if answer is None:
                return None
            if isinstance(answer, (int, float)):
                answer = f"{answer:g}"
            return str(answer)
    return None


def _normalize(text: str) -> str:
    text = _LETTER_PREFIX.sub("", text.strip())
    text = re.sub(r"\s+", " ", text)
    return text.rstrip(".").casefold()


def match_option(answer: str | None, displayed_options: list[str]) -> int | None:
    """Map an answer string onto a displayed option index.

    Tries exact match, then normalized text, then numeric equality (so
    "25.0" hits "25"), then a bare option letter despite instructions.
    """
    if answer is None:
        return None
    if answer in displayed_options:
        return displayed_options.index(answer)
    norm = _normalize(answer)
    norm_options = [_normalize(o) for o in displayed_options]
    if norm in norm_options:
        return norm_options.index(norm)
    try:
        value = float(answer)
        for i, opt in enumerate(displayed_options):
            try:
                if float(opt) == value:
                    return i
            except ValueError:
                continue
    except ValueError:
        pass
    stripped = answer.strip().rstrip(".").upper()
    if len(stripped) == 1 and stripped.isalpha():
        idx = ord(stripped) - ord("A")
        if 0 <= idx < len(displayed_options):
            return idx
    return None


class RateLimiter:
    """Token-bucket limiter shared across worker threads."""

    def __init__(self, requests_per_minute: float):
        if requests_per_minute <= 0:
            raise ConfigError("requests_per_minute must be positive")
        self._interval = 60.0 / requests_per_minute
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_at - now
            self._next_at = max(self._next_at, now) + self._interval
        if wait > 0:
            time.sleep(wait)


class ModelClient:
    """Interface: turn one prompt payload into completion text."""

    def complete(self, payload: dict) -> CompletionResult:
        raise NotImplementedError


class CallableClient(ModelClient):
    """Wraps a plain function; used by tests and local baselines."""

    def __init__(self, fn):
        self._fn = fn

    def complete(self, payload: dict) -> CompletionResult:
        out = self._fn(payload)
        if isinstance(out, CompletionResult):
            return out
        return CompletionResult(text=str(out))


@dataclass
class HttpClientConfig:
    endpoint: str
    model: str
    api_key_env: str = "ARF_FORGE_API_KEY"
    temperature: float = 0.05
    max_tokens: int = 2000
    timeout_s: float = 120.0
    max_retries: int = 5
    backoff_base_s: float = 1.0
    backoff_cap_s: float = 30.0
    requests_per_minute: float = 60.0
    extra_headers: dict = field(default_factory=dict)


class HttpChatClient(ModelClient):
    """Chat-completions client over HTTP with retry and rate limiting."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(self, config: HttpClientConfig, session: requests.Session | None = None):
        self.config = config
        self._session = session or requests.Session()
        self._limiter = RateLimiter(config.requests_per_minute)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        headers.update(self.config.extra_headers)
        return headers

    def _messages(self, payload: dict) -> list[dict]:
        messages = [{"role": "system", "content": payload["system"]}]
        images = payload.get("images") or []
        if images:
            content: list[dict] = [{"type": "text", "text": payload["user"]}]
            for path in images:
                with open(path, "rb") as fh:
                    data = base64.b64encode(fh.read()).decode("ascii")
                content.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/png;base64,{data}"},
                    }
                )
            messages.append({"role": "user", "content": content})
        else:
            messages.append({"role": "user", "content": payload["user"]})
        return messages

    def complete(self, payload: dict) -> CompletionResult:
        body = {
            "model": self.config.model,
            "messages": self._messages(payload),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        last_error = "unknown"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = min(
                    self.config.backoff_base_s * (2 ** (attempt - 1)),
                    self.config.backoff_cap_s,
                )
                time.sleep(delay)
            self._limiter.acquire()
            try:
                resp = self._session.post(
                    self.config.endpoint,
                    json=body,
                    headers=self._headers(),
                    timeout=self.config.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = f"transport: {exc}"
                continue
            if resp.status_code in self.RETRY_STATUS:
                last_error = f"http {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise HarnessError(f"endpoint returned {resp.status_code}: {resp.text[:500]}")
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise HarnessError(f"malformed completion payload: {exc}") from exc
            usage = data.get("usage") or {}
            return CompletionResult(
                text=text if isinstance(text, str) else json.dumps(text),
                prompt_tokens=usage.get("prompt_tokens"),
                completion_tokens=usage.get("completion_tokens"),
            )
        raise HarnessError(f"exhausted retries: {last_error}")
