from __future__ import annotations

import json

import httpx
import pytest

from covjudge.judge import VerdictError, parse_verdict
from covjudge.prompt import build_prompt_pair
from covjudge.provider import (
    ChatRequest,
    ChatResponse,
    HttpProvider,
    Message,
    MockProvider,
    MockSettings,
    ModelConfig,
    ModelFamily,
    ProviderAuthError,
    ProviderError,
    ProviderErrorKind,
    ReasoningEffort,
    Role,
    check_auth,
    derive_seed,
    make_mock,
    provider_for,
)
from conftest import MINIMAL_FEATURE, make_ticket


def make_request() -> ChatRequest:
    pair = build_prompt_pair(make_ticket(), MINIMAL_FEATURE)
    return ChatRequest(messages=(
        Message(Role.SYSTEM, pair.system_text),
        Message(Role.USER, pair.user_text),
    ))


MOCK_CONFIG = ModelConfig(id="m", family=ModelFamily.MOCK, model_name="m",
                          prompt_rate=1.0, completion_rate=2.0)


# --- config and request invariants ---------------------------------------------

def test_negative_rates_rejected():
    with pytest.raises(ValueError):
        ModelConfig(id="x", family=ModelFamily.MOCK, model_name="x", prompt_rate=-1.0)


def test_reasoning_effort_required_for_reasoning_families():
    with pytest.raises(ValueError):
        ModelConfig(id="x", family=ModelFamily.GPT5, model_name="gpt-5")
    ModelConfig(id="x", family=ModelFamily.GPT5, model_name="gpt-5",
                reasoning_effort=ReasoningEffort.HIGH)
    ModelConfig(id="x", family=ModelFamily.GPT4, model_name="gpt-4o")  # none is fine


def test_chat_request_message_shape_enforced():
    user = Message(Role.USER, "hi")
    system = Message(Role.SYSTEM, "sys")
    with pytest.raises(ValueError):
        ChatRequest(messages=(user,))
    with pytest.raises(ValueError):
        ChatRequest(messages=(system, system, user))
    ChatRequest(messages=(system, user))


def test_mock_settings_range():
    with pytest.raises(ValueError):
        MockSettings(failure_rate=1.5)


# --- mock provider --------------------------------------------------------------

def test_scripted_fixed_verdict_and_usage():
    fixed = ChatResponse(content='{"coverage_percentage": 70, "covered": [], "gaps": [],'
                                 ' "recommendations": [], "rubric_flags": {}}',
                         prompt_tokens=1200, completion_tokens=350, latency=0.5)
    mock = make_mock(script=[fixed])
    response = mock.complete(MOCK_CONFIG, make_request())
    assert response is fixed
    assert (response.prompt_tokens, response.completion_tokens) == (1200, 350)


def test_scripted_timeout_then_success():
    mock = make_mock(script=["timeout", "success"])
    with pytest.raises(ProviderError) as excinfo:
        mock.complete(MOCK_CONFIG, make_request())
    assert excinfo.value.kind is ProviderErrorKind.TIMEOUT
    response = mock.complete(MOCK_CONFIG, make_request())
    assert parse_verdict(response.content).coverage_percentage >= 0


def test_failure_rate_zero_never_fails():
    mock = make_mock(failure_rate=0.0, seed=5)
    request = make_request()
    for _ in range(200):
        parse_verdict(mock.complete(MOCK_CONFIG, request).content)


def test_failure_rate_one_always_fails():
    mock = make_mock(failure_rate=1.0, seed=5)
    request = make_request()
    failures = 0
    for _ in range(100):
        try:
            response = mock.complete(MOCK_CONFIG, request)
        except ProviderError:
            failures += 1
        else:
            with pytest.raises(VerdictError):
                parse_verdict(response.content)
            failures += 1
    assert failures == 100


def _outcome_trace(mock: MockProvider, request: ChatRequest, calls: int) -> list[str]:
    trace = []
    for _ in range(calls):
        try:
            response = mock.complete(MOCK_CONFIG, request)
            trace.append(response.content)
        except ProviderError as exc:
            trace.append(f"error:{exc.kind.value}")
    return trace


def test_mock_determinism_same_seed_same_sequence():
    request = make_request()
    first = _outcome_trace(make_mock(failure_rate=0.3, seed=11), request, 300)
    second = _outcome_trace(make_mock(failure_rate=0.3, seed=11), request, 300)
    assert first == second
    different = _outcome_trace(make_mock(failure_rate=0.3, seed=12), request, 300)
    assert first != different


def test_verdict_salt_decorrelates_streams():
    request = make_request()
    a = make_mock(verdict_salt="a").complete(MOCK_CONFIG, request)
    b = make_mock(verdict_salt="b").complete(MOCK_CONFIG, request)
    same_a = make_mock(verdict_salt="a").complete(MOCK_CONFIG, request)
    assert a.content == same_a.content
    assert a.content != b.content


def test_mock_usage_reported_for_content_failures():
    mock = make_mock(script=["malformed_json"])
    response = mock.complete(MOCK_CONFIG, make_request())
    assert response.prompt_tokens > 0
    assert response.completion_tokens > 0
    with pytest.raises(VerdictError):
        parse_verdict(response.content)


def test_provider_for_builds_mock_with_settings():
    config = ModelConfig(id="m", family=ModelFamily.MOCK, model_name="m",
                         mock=MockSettings(failure_rate=0.25, seed=9))
    provider = provider_for(config)
    assert isinstance(provider, MockProvider)
    assert provider.failure_rate == 0.25


def test_derive_seed_is_stable():
    assert derive_seed(42, "a") == derive_seed(42, "a")
    assert derive_seed(42, "a") != derive_seed(42, "b")
    assert derive_seed(1, "a") != derive_seed(2, "a")


# --- auth precondition -----------------------------------------------------------

LIVE_CONFIG = ModelConfig(
    id="live", family=ModelFamily.GPT4, model_name="gpt-4o-mini",
    prompt_rate=0.15, completion_rate=0.6,
    endpoint="https://example.invalid/v1", auth_env_var="COVJUDGE_TEST_KEY",
)


def test_check_auth_missing_variable(monkeypatch):
    monkeypatch.delenv("COVJUDGE_TEST_KEY", raising=False)
    with pytest.raises(ProviderAuthError, match="COVJUDGE_TEST_KEY"):
        check_auth(LIVE_CONFIG)


def test_check_auth_present(monkeypatch):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")
    check_auth(LIVE_CONFIG)


def test_complete_fails_before_network_without_auth(monkeypatch):
    monkeypatch.delenv("COVJUDGE_TEST_KEY", raising=False)

    def explode(request):
        raise AssertionError("network must not be touched")

    provider = HttpProvider(transport=httpx.MockTransport(explode))
    with pytest.raises(ProviderAuthError):
        provider.complete(LIVE_CONFIG, make_request())


# --- HTTP wire behavior -----------------------------------------------------------

def _http_provider(handler) -> HttpProvider:
    return HttpProvider(transport=httpx.MockTransport(handler))


def _envelope(content="ok", prompt_tokens=10, completion_tokens=5) -> dict:
    return {
        "choices": [{"message": {"content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


def test_http_payload_shape_gpt4(monkeypatch):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["Authorization"]
        seen["payload"] = json.loads(request.content)
        return httpx.Response(200, json=_envelope("hello", 111, 22))

    response = _http_provider(handler).complete(LIVE_CONFIG, make_request())
    assert seen["url"] == "https://example.invalid/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    payload = seen["payload"]
    assert payload["model"] == "gpt-4o-mini"
    assert [m["role"] for m in payload["messages"]] == ["system", "user"]
    assert payload["temperature"] == 0.0
    assert "reasoning_effort" not in payload
    assert "response_format" not in payload
    assert response == ChatResponse("hello", 111, 22, response.latency)


def test_http_payload_reasoning_family(monkeypatch):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")
    config = ModelConfig(
        id="r", family=ModelFamily.OPEN_WEIGHT, model_name="oss-20b",
        reasoning_effort=ReasoningEffort.HIGH,
        endpoint="https://example.invalid/v1", auth_env_var="COVJUDGE_TEST_KEY",
        structured_output=True,
    )
    pair = build_prompt_pair(make_ticket(), MINIMAL_FEATURE)
    from covjudge.judge import build_request
    request = build_request(config, pair)
    seen = {}

    def handler(http_request):
        seen["payload"] = json.loads(http_request.content)
        return httpx.Response(200, json=_envelope())

    _http_provider(handler).complete(config, request)
    assert seen["payload"]["reasoning_effort"] == "high"
    assert "temperature" not in seen["payload"]
    assert seen["payload"]["response_format"] == {"type": "json_object"}


@pytest.mark.parametrize("status,kind", [
    (500, ProviderErrorKind.SERVER),
    (503, ProviderErrorKind.SERVER),
    (400, ProviderErrorKind.TRANSPORT),
    (401, ProviderErrorKind.TRANSPORT),
])
def test_http_status_mapping(monkeypatch, status, kind):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")
    provider = _http_provider(lambda request: httpx.Response(status, text="boom"))
    with pytest.raises(ProviderError) as excinfo:
        provider.complete(LIVE_CONFIG, make_request())
    assert excinfo.value.kind is kind


def test_http_rate_limit_carries_retry_after(monkeypatch):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")
    provider = _http_provider(
        lambda request: httpx.Response(429, text="slow down", headers={"Retry-After": "7"})
    )
    with pytest.raises(ProviderError) as excinfo:
        provider.complete(LIVE_CONFIG, make_request())
    assert excinfo.value.kind is ProviderErrorKind.RATE_LIMITED
    assert excinfo.value.retry_after == 7.0


def test_http_timeout_maps_to_timeout(monkeypatch):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")

    def handler(request):
        raise httpx.ReadTimeout("deadline")

    with pytest.raises(ProviderError) as excinfo:
        _http_provider(handler).complete(LIVE_CONFIG, make_request())
    assert excinfo.value.kind is ProviderErrorKind.TIMEOUT


def test_http_transport_error_mapped(monkeypatch):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")

    def handler(request):
        raise httpx.ConnectError("refused")

    with pytest.raises(ProviderError) as excinfo:
        _http_provider(handler).complete(LIVE_CONFIG, make_request())
    assert excinfo.value.kind is ProviderErrorKind.TRANSPORT


@pytest.mark.parametrize("body", [
    {"choices": [], "usage": {"prompt_tokens": 1, "completion_tokens": 1}},
    {"choices": [{"message": {"content": ""}}],
     "usage": {"prompt_tokens": 1, "completion_tokens": 1}},
    {"choices": [{"message": {"content": "x"}}]},
    {"choices": [{"message": {"content": "x"}}],
     "usage": {"prompt_tokens": -1, "completion_tokens": 1}},
])
def test_http_malformed_envelopes(monkeypatch, body):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")
    provider = _http_provider(lambda request: httpx.Response(200, json=body))
    with pytest.raises(ProviderError) as excinfo:
        provider.complete(LIVE_CONFIG, make_request())
    assert excinfo.value.kind is ProviderErrorKind.MALFORMED_ENVELOPE


def test_http_usage_passthrough_exact(monkeypatch):
    monkeypatch.setenv("COVJUDGE_TEST_KEY", "secret")
    provider = _http_provider(
        lambda request: httpx.Response(200, json=_envelope("body", 12345, 678))
    )
    response = provider.complete(LIVE_CONFIG, make_request())
    assert (response.prompt_tokens, response.completion_tokens) == (12345, 678)
