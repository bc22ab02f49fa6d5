import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from branchforge.errors import (NoObjectFound, ParseError, ProviderRefusal,
                                RetriesExhausted, SchemaViolation)
from branchforge.gateway import (FAIL, ChatParams, HttpChatProvider,
                                 HttpImageProvider, MockChatProvider,
                                 MockImageProvider, count_tokens,
                                 extract_structured, generate_validated)
from branchforge.models import ConversationHistory, Message, Violation
from branchforge.prompts import PromptKind, PromptKit, RenderedPrompt

from .conftest import make_cfg


def user_history(text="hello"):
    return ConversationHistory((Message("user", text),))


# --- extract_structured ----------------------------------------------------

def test_extract_fenced_block():
    text = ('Here you go:\n```\n{"score": 7}\n```\nanything after')
    assert extract_structured(text, "judge_score") == {"score": 7}


def test_extract_fenced_block_with_language_tag():
    text = '```json\n{"score": 3.5}\n```'
    assert extract_structured(text, "judge_score") == {"score": 3.5}


def test_extract_brace_fallback():
    text = 'Sure: {"score": 2} hope that helps'
    assert extract_structured(text, "judge_score") == {"score": 2}


def test_extract_prose_only_raises_no_object():
    with pytest.raises(NoObjectFound):
        extract_structured("there is no object here", "judge_score")


def test_extract_truncated_object_raises_parse_error():
    with pytest.raises(ParseError):
        extract_structured('{"score": 7', "judge_score")


def test_extract_schema_violation():
    with pytest.raises(SchemaViolation):
        extract_structured('{"rating": 7}', "judge_score")


def test_extract_is_pure():
    text = '```\n{"score": 7}\n```'
    assert (extract_structured(text, "judge_score")
            == extract_structured(text, "judge_score"))


def test_extract_braces_inside_strings():
    text = '{"score": 1, "note": "a } inside"}'
    obj = extract_structured(text, "judge_score")
    assert obj["note"] == "a } inside"


# --- token counting --------------------------------------------------------

def test_count_tokens_empty():
    assert count_tokens(ConversationHistory()) == 0


def test_count_tokens_heuristic():
    h = ConversationHistory((Message("user", "x" * 400),))
    assert count_tokens(h) == 100


def test_count_tokens_additive():
    h1 = ConversationHistory((Message("user", "abcde"),))
    h2 = ConversationHistory((Message("assistant", "xyz"),))
    assert count_tokens(h1.extend(h2)) == count_tokens(h1) + count_tokens(h2)


# --- generate_validated ----------------------------------------------------

def plot_script(*entries):
    return [{"match": "PLOT", "respond": e} for e in entries]


def test_retry_succeeds_after_failures():
    cfg = make_cfg()
    good = '```\n' + json.dumps(
        MockChatProvider(cfg)._plot_payload()) + '\n```'
    provider = MockChatProvider(cfg, script=plot_script(FAIL, FAIL, good))
    kit = PromptKit()
    history = user_history(kit.render_plot_prompt(cfg).text)
    obj, _, report = generate_validated(
        provider, history, ChatParams(), "story_data", None, max_retries=3)
    assert obj["title"]
    assert len(report.attempts) == 2
    assert {a.failure_kind for a in report.attempts} == {"malformed_output"}


def test_retries_exhausted_records_all_attempts():
    cfg = make_cfg()
    provider = MockChatProvider(cfg, script=plot_script(FAIL, FAIL, FAIL))
    history = user_history(PromptKit().render_plot_prompt(cfg).text)
    with pytest.raises(RetriesExhausted) as exc:
        generate_validated(provider, history, ChatParams(), "story_data",
                           None, max_retries=3)
    assert len(exc.value.report.attempts) == 3


def test_first_try_success_leaves_empty_report():
    cfg = make_cfg()
    provider = MockChatProvider(cfg)
    history = user_history(PromptKit().render_plot_prompt(cfg).text)
    obj, _, report = generate_validated(
        provider, history, ChatParams(), "story_data", None, max_retries=3)
    assert report.attempts == ()
    assert obj["genre"] == cfg.game_genre


def test_validator_failures_are_retried_and_revalidated():
    cfg = make_cfg()
    calls = []

    def validator(obj):
        calls.append(obj)
        if len(calls) < 2:
            return [Violation("title", "rejected by test")]
        return []

    provider = MockChatProvider(cfg)
    history = user_history(PromptKit().render_plot_prompt(cfg).text)
    obj, _, report = generate_validated(
        provider, history, ChatParams(), "story_data", validator,
        max_retries=5)
    assert len(report.attempts) == 1
    assert report.attempts[0].failure_kind == "validation"
    assert validator(obj) == []  # the returned object passes the validator


def test_transport_failures_count_as_attempts():
    cfg = make_cfg()
    script = [{"match": "PLOT", "fail": "transport", "detail": "boom"}]
    provider = MockChatProvider(cfg, script=script)
    history = user_history(PromptKit().render_plot_prompt(cfg).text)
    obj, _, report = generate_validated(
        provider, history, ChatParams(), "story_data", None, max_retries=2)
    assert report.attempts[0].failure_kind == "transport"
    assert obj["title"]


# --- mock providers --------------------------------------------------------

def test_mock_requires_user_tail():
    cfg = make_cfg()
    provider = MockChatProvider(cfg)
    history = ConversationHistory((Message("user", "q"),
                                   Message("assistant", "a")))
    with pytest.raises(ValueError):
        provider.complete(history, ChatParams())


def test_mock_is_deterministic_across_instances():
    cfg = make_cfg()
    kit = PromptKit()
    history = user_history(kit.render_plot_prompt(cfg).text)
    r1 = MockChatProvider(cfg).complete(history, ChatParams())
    r2 = MockChatProvider(cfg).complete(history, ChatParams())
    assert r1.text == r2.text


def test_mock_chunk_choice_count_follows_setting():
    cfg = make_cfg()
    kit = PromptKit()
    from .test_models import _story
    sd = _story(cfg)
    prompt = kit.render_chunk_prompt(PromptKind.CHUNK_UNTIL_CHOICE, sd, 1, cfg)
    response = MockChatProvider(cfg, choices_per_opportunity=3).complete(
        user_history(prompt.text), ChatParams())
    obj = extract_structured(response.text, "story_chunk")
    assert len(obj["choices"]) == 3


def test_mock_image_provider_deterministic_placeholder():
    provider = MockImageProvider()
    prompt = RenderedPrompt(PromptKind.CHARACTER_IMAGE, "a character")
    first = provider.generate(prompt)
    second = provider.generate(prompt)
    assert first == second
    assert first[:8] == b"\x89PNG\r\n\x1a\n"
    other = provider.generate(
        RenderedPrompt(PromptKind.CHARACTER_IMAGE, "another"))
    assert other != first


def test_rate_limiter_burst_within_capacity_is_fast():
    import time

    from branchforge.gateway import RateLimiter

    limiter = RateLimiter(600)
    start = time.monotonic()
    for _ in range(5):
        limiter.acquire()
    assert time.monotonic() - start < 0.5
    RateLimiter(None).acquire()  # unlimited: always a no-op


# --- live-wire integration against a local stub ----------------------------

class _StubHandler(BaseHTTPRequestHandler):
    status = 401
    body = b'{"error": "no key"}'

    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(self.body)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()


def test_http_chat_provider_refusal_carries_status(stub_server):
    _StubHandler.status = 401
    provider = HttpChatProvider(
        base_url=f"http://127.0.0.1:{stub_server.server_port}",
        api_key="bad")
    with pytest.raises(ProviderRefusal) as exc:
        provider.complete(user_history(), ChatParams())
    assert exc.value.status == 401
    assert not exc.value.retryable


def test_http_image_provider_429_is_retryable(stub_server):
    _StubHandler.status = 429
    provider = HttpImageProvider(
        base_url=f"http://127.0.0.1:{stub_server.server_port}")
    with pytest.raises(ProviderRefusal) as exc:
        provider.generate(RenderedPrompt(PromptKind.SCENE_IMAGE, "a pier"))
    assert exc.value.status == 429
    assert exc.value.retryable


def test_http_chat_provider_happy_path(stub_server):
    _StubHandler.status = 200
    _StubHandler.body = json.dumps({
        "choices": [{"message": {"content": "hi there"}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3},
    }).encode()
    provider = HttpChatProvider(
        base_url=f"http://127.0.0.1:{stub_server.server_port}",
        api_key="ok")
    response = provider.complete(user_history(), ChatParams())
    assert response.text == "hi there"
    assert response.input_tokens == 12
    _StubHandler.status = 401
    _StubHandler.body = b'{"error": "no key"}'
