"""Response parsing, option matching, record IO, and HTTP transport."""

import json
import time

import pytest
import requests

from arf_forge.clients import (
    CallableClient,
    CompletionResult,
    EvalRecord,
    HttpChatClient,
    HttpClientConfig,
    RateLimiter,
    match_option,
    parse_answer,
    read_records,
    write_records,
)
from arf_forge.errors import ConfigError, HarnessError


# ---------------------------------------------------------------- parsing


def test_parse_answer_plain_json():
    raw = '{"answer": "Yes", "reasoning": "a level shift is visible"}'
    assert parse_answer(raw) == "Yes"


def test_parse_answer_code_fence_and_prose():
    raw = (
        "Sure, here is my final answer:\n"
        "```json\n"
        '{"answer": "No Anomaly", "reasoning": "flat throughout"}\n'
        "```\n"
        "Hope that helps."
    )
    assert parse_answer(raw) == "No Anomaly"


def test_parse_answer_braces_inside_strings():
    raw = '{"reasoning": "set {a, b} shifted", "answer": "host:h2"}'
    assert parse_answer(raw) == "host:h2"


def test_parse_answer_escaped_quotes():
    raw = '{"answer": "Yes", "reasoning": "the \\"spike\\" at {t=3}"}'
    assert parse_answer(raw) == "Yes"


def test_parse_answer_skips_objects_without_answer_key():
    raw = '{"thought": "hmm"} then finally {"answer": "Late"}'
    assert parse_answer(raw) == "Late"


def test_parse_answer_skips_invalid_json():
    raw = "{not json at all} {\"answer\": \"Early\"}"
    assert parse_answer(raw) == "Early"


def test_parse_answer_numeric_values_use_shortest_form():
    assert parse_answer('{"answer": 25}') == "25"
    assert parse_answer('{"answer": 25.0}') == "25"
    assert parse_answer('{"answer": 0.5}') == "0.5"


def test_parse_answer_null_and_garbage():
    assert parse_answer('{"answer": null}') is None
    assert parse_answer("no json here") is None
    assert parse_answer("") is None


def test_match_option_exact_and_normalized():
    options = ["Level Shift", "Transient Spike", "No Anomaly"]
    assert match_option("Transient Spike", options) == 1
    assert match_option("  level shift.", options) == 0
    assert match_option("B. Transient Spike", options) == 1
    assert match_option("no   anomaly", options) == 2


def test_match_option_numeric_equivalence():
    options = ["1", "5", "25", "125"]
    assert match_option("25.0", options) == 2
    assert match_option("5e0", options) == 1


def test_match_option_bare_letter():
    options = ["Yes", "No"]
    assert match_option("A", options) == 0
    assert match_option("b.", options) == 1
    assert match_option("C", options) is None  # out of range


def test_match_option_failures():
    options = ["Yes", "No"]
    assert match_option(None, options) is None
    assert match_option("maybe", options) is None


# ---------------------------------------------------------------- records


def _record(qid, matched=0):
    return EvalRecord(
        question_id=qid,
        model="m",
        mode="text",
        permutation=[1, 0],
        raw_response='{"answer": "Yes"}',
        parsed_answer="Yes",
        valid=True,
        matched_index=matched,
        latency_s=0.25,
        prompt_tokens=100,
        completion_tokens=20,
    )


def test_eval_record_dict_round_trip():
    rec = _record("q00003")
    clone = EvalRecord.from_dict(rec.to_dict())
    assert clone == rec


def test_records_file_round_trip_sorted_and_compact(tmp_path):
    path = str(tmp_path / "records.jsonl")
    records = [_record("q00002"), _record("q00000"), _record("q00001")]
    write_records(path, records)
    lines = open(path).read().splitlines()
    assert len(lines) == 3
    for line in lines:
        d = json.loads(line)
        assert line == json.dumps(d, sort_keys=True, separators=(",", ":"))
    loaded = read_records(path)
    assert [r.question_id for r in loaded] == ["q00000", "q00001", "q00002"]
    assert loaded[1] == records[2]


# ---------------------------------------------------------------- clients


def test_callable_client_wraps_plain_text():
    client = CallableClient(lambda payload: "hello")
    out = client.complete({"system": "s", "user": "u", "images": []})
    assert isinstance(out, CompletionResult)
    assert out.text == "hello"


def test_callable_client_passes_completion_result_through():
    result = CompletionResult(text="t", prompt_tokens=7, completion_tokens=3)
    client = CallableClient(lambda payload: result)
    assert client.complete({}) is result


def test_rate_limiter_rejects_nonpositive_rate():
    with pytest.raises(ConfigError):
        RateLimiter(0)


def test_rate_limiter_spaces_calls():
    limiter = RateLimiter(requests_per_minute=1200)  # 50 ms interval
    limiter.acquire()
    t0 = time.monotonic()
    limiter.acquire()
    assert time.monotonic() - t0 >= 0.03


class _FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class _FakeSession:
    """Scripted stand-in for requests.Session."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _ok_response(text="done"):
    return _FakeResponse(
        200,
        {
            "choices": [{"message": {"content": text}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 4},
        },
    )


def _config(**kw):
    base = dict(
        endpoint="http://localhost:9/v1/chat/completions",
        model="test-model",
        max_retries=5,
        backoff_base_s=0.001,
        backoff_cap_s=0.002,
        requests_per_minute=1e9,
    )
    base.update(kw)
    return HttpClientConfig(**base)


def test_http_client_returns_completion_and_usage():
    session = _FakeSession([_ok_response('{"answer": "Yes"}')])
    client = HttpChatClient(_config(), session=session)
    out = client.complete({"system": "sys", "user": "usr", "images": []})
    assert out.text == '{"answer": "Yes"}'
    assert out.prompt_tokens == 11
    assert out.completion_tokens == 4
    body = session.calls[0]["json"]
    assert body["model"] == "test-model"
    assert body["messages"][0] == {"role": "system", "content": "sys"}
    assert body["messages"][1] == {"role": "user", "content": "usr"}


def test_http_client_retries_on_5xx_then_succeeds():
    session = _FakeSession(
        [_FakeResponse(500, text="boom"), _FakeResponse(503), _ok_response("ok")]
    )
    client = HttpChatClient(_config(), session=session)
    out = client.complete({"system": "s", "user": "u", "images": []})
    assert out.text == "ok"
    assert len(session.calls) == 3


def test_http_client_retries_transport_errors():
    session = _FakeSession(
        [requests.ConnectionError("refused"), _ok_response("ok")]
    )
    client = HttpChatClient(_config(), session=session)
    assert client.complete({"system": "s", "user": "u"}).text == "ok"
    assert len(session.calls) == 2


def test_http_client_exhausts_retries():
    session = _FakeSession([_FakeResponse(429)] * 3)
    client = HttpChatClient(_config(max_retries=2), session=session)
    with pytest.raises(HarnessError, match="exhausted retries"):
        client.complete({"system": "s", "user": "u"})
    assert len(session.calls) == 3


def test_http_client_fails_fast_on_non_retryable_status():
    session = _FakeSession([_FakeResponse(404, text="nope")])
    client = HttpChatClient(_config(), session=session)
    with pytest.raises(HarnessError, match="404"):
        client.complete({"system": "s", "user": "u"})
    assert len(session.calls) == 1


def test_http_client_rejects_malformed_payload():
    session = _FakeSession([_FakeResponse(200, {"choices": []})])
    client = HttpChatClient(_config(), session=session)
    with pytest.raises(HarnessError, match="malformed"):
        client.complete({"system": "s", "user": "u"})


def test_http_client_sends_api_key_and_images(tmp_path, monkeypatch):
    png = tmp_path / "img.png"
    png.write_bytes(b"\x89PNG\r\n\x1a\nfake")
    monkeypatch.setenv("ARF_FORGE_API_KEY", "sekrit")
    session = _FakeSession([_ok_response()])
    client = HttpChatClient(_config(), session=session)
    client.complete({"system": "s", "user": "u", "images": [str(png)]})
    call = session.calls[0]
    assert call["headers"]["Authorization"] == "Bearer sekrit"
    content = call["json"]["messages"][1]["content"]
    assert content[0] == {"type": "text", "text": "u"}
    assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")
