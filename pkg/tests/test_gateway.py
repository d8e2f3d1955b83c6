"""Chat-model gateway: request shape, mock behaviors, latency models, HTTP wire."""

from __future__ import annotations

import json
import math
import random
import time

import pytest
import requests

from pmfr import prompts
from pmfr.clock import VirtualClock
from pmfr.errors import ConfigError, ModelBackendFailure
from pmfr.gateway import (
    ChatRequest,
    Completion,
    ConstantLatency,
    HTTPChatModel,
    LognormalLatency,
    MockChatModel,
    ModelProfile,
    complete,
    prompt_hash,
    script_from_prompts,
)

from .conftest import mock_model


class TestChatRequest:
    def test_rejects_empty_messages(self):
        with pytest.raises(ValueError):
            ChatRequest(messages=())

    def test_rejects_unknown_role(self):
        with pytest.raises(ValueError):
            ChatRequest(messages=(("narrator", "hello"),))

    def test_last_user_and_system_accessors(self):
        req = ChatRequest(messages=(
            ("system", "be terse"),
            ("user", "first"),
            ("assistant", "reply"),
            ("user", "second"),
        ))
        assert req.last_user() == "second"
        assert req.system() == "be terse"

    def test_defaults_are_deterministic_decoding(self):
        req = ChatRequest(messages=(("user", "hi"),))
        assert req.temperature == 0.0


class TestLatencyModels:
    def test_constant_sample(self):
        assert ConstantLatency(1090).sample() == 1090.0

    def test_constant_rejects_negative(self):
        with pytest.raises(ConfigError):
            ConstantLatency(-1)

    def test_lognormal_seeded_sequences_are_reproducible(self):
        a = LognormalLatency(7.0, 0.3, seed=42)
        b = LognormalLatency(7.0, 0.3, seed=42)
        assert [a.sample() for _ in range(20)] == [b.sample() for _ in range(20)]

    def test_lognormal_different_seeds_differ(self):
        a = LognormalLatency(7.0, 0.3, seed=1)
        b = LognormalLatency(7.0, 0.3, seed=2)
        assert [a.sample() for _ in range(5)] != [b.sample() for _ in range(5)]

    def test_lognormal_matches_stdlib_generator(self):
        lat = LognormalLatency(6.5, 0.4, seed=7)
        rng = random.Random(7)
        assert [lat.sample() for _ in range(10)] == \
            [rng.lognormvariate(6.5, 0.4) for _ in range(10)]

    def test_fit_reproduces_mean_and_p95_analytically(self):
        z95 = 1.6448536269514722
        for mean, p95 in ((1090.0, 1810.0), (23375.0, 49443.0)):
            lat = LognormalLatency.from_mean_p95(mean, p95, seed=0)
            assert math.exp(lat.mu + lat.sigma**2 / 2) == pytest.approx(mean, rel=1e-12)
            assert math.exp(lat.mu + z95 * lat.sigma) == pytest.approx(p95, rel=1e-12)

    def test_fit_takes_smaller_sigma_root(self):
        lat = LognormalLatency.from_mean_p95(1090.0, 1810.0, seed=0)
        z95 = 1.6448536269514722
        disc = math.sqrt(z95**2 - 2 * math.log(1810.0 / 1090.0))
        assert lat.sigma == pytest.approx(z95 - disc, rel=1e-12)

    def test_fit_rejects_impossible_pairs(self):
        with pytest.raises(ConfigError):
            LognormalLatency.from_mean_p95(100.0, 90.0, seed=0)  # p95 ≤ mean
        with pytest.raises(ConfigError):
            LognormalLatency.from_mean_p95(100.0, 100_000.0, seed=0)  # tail too heavy


class TestMockBehaviors:
    def test_echo_ping_zero_latency(self):
        model = mock_model(behavior="echo", ms=0.0)
        got = model.complete(ChatRequest(messages=(("user", "ping"),)))
        assert (got.text, got.latency_ms) == ("ping", 0.0)

    def test_constant_1090_reports_1090_under_virtual_clock(self):
        clock = VirtualClock()
        model = mock_model(behavior="echo", ms=1090.0, clock=clock)
        got = model.complete(ChatRequest(messages=(("user", "q"),)))
        assert got.latency_ms == 1090.0
        assert clock.now_ms() == 1090.0

    def test_mock_latency_consumes_no_wall_clock(self):
        model = mock_model(behavior="echo", ms=60_000.0, clock=VirtualClock())
        start = time.monotonic()
        model.complete(ChatRequest(messages=(("user", "q"),)))
        assert time.monotonic() - start < 1.0

    def test_template_formats_prompt_fields(self):
        model = mock_model(behavior="template", template="ANSWER[{top_synopsis}]")
        req = ChatRequest(messages=(
            ("user", "QUESTION: q\nKNOWLEDGE:\n- paris is the capital of france\n- second"),
        ))
        assert model.complete(req).text == "ANSWER[paris is the capital of france]"

    def test_template_query_and_knowledge_fields(self):
        model = mock_model(behavior="template", template="{query} | {knowledge}")
        req = ChatRequest(messages=(("user", "QUESTION: the q\n- a\n- b"),))
        assert model.complete(req).text == "the q | a; b"

    def test_template_behavior_requires_template(self):
        with pytest.raises(ConfigError):
            ModelProfile(name="m", latency=ConstantLatency(0), behavior="template")

    def test_scripted_hit_and_echo_miss(self):
        script = script_from_prompts({"the exact prompt": "the scripted reply"})
        model = mock_model(behavior="scripted", script=script)
        hit = model.complete(ChatRequest(messages=(("user", "the exact prompt"),)))
        assert hit.text == "the scripted reply"
        miss = model.complete(ChatRequest(messages=(("user", "something else"),)))
        assert miss.text == "something else"

    def test_prompt_hash_covers_all_message_contents(self):
        a = prompt_hash((("system", "s"), ("user", "u")))
        b = prompt_hash((("system", "s"), ("user", "u2")))
        c = prompt_hash((("system", "s2"), ("user", "u")))
        assert len({a, b, c}) == 3

    def test_dialogue_transition_uses_template(self):
        model = mock_model(
            behavior="dialogue",
            template="Let me look into {query} — meanwhile, could you tell me more about what you need?",
        )
        req = ChatRequest(messages=(
            ("system", prompts.TRANSITION_SYSTEM),
            ("user", "QUESTION: height of Mount Everest"),
        ))
        assert model.complete(req).text == (
            "Let me look into height of Mount Everest — meanwhile, "
            "could you tell me more about what you need?"
        )

    def test_dialogue_direct_returns_top_synopsis(self):
        model = mock_model(behavior="dialogue")
        req = ChatRequest(messages=(
            ("system", prompts.DIRECT_SYSTEM),
            ("user", "QUESTION: q\nKNOWLEDGE:\n- the prepared synopsis"),
        ))
        assert model.complete(req).text == "the prepared synopsis"

    def test_dialogue_reason_joins_evidence(self):
        model = mock_model(behavior="dialogue")
        req = ChatRequest(messages=(
            ("system", prompts.REASON_SYSTEM),
            ("user", "QUESTION: consolidate the evidence\nEVIDENCE:\n- fact a\n- fact b"),
        ))
        assert model.complete(req).text == "fact a; fact b"

    def test_dialogue_without_knowledge_uses_stock_line(self):
        model = mock_model(behavior="dialogue")
        req = ChatRequest(messages=(
            ("system", prompts.DIRECT_SYSTEM),
            ("user", "QUESTION: the mystery topic"),
        ))
        assert model.complete(req).text == "I don't have specifics on the mystery topic yet."

    def test_unknown_behavior_rejected(self):
        with pytest.raises(ConfigError):
            ModelProfile(name="m", latency=ConstantLatency(0), behavior="improv")

    def test_injected_failure_raises_after_latency(self):
        clock = VirtualClock()
        model = mock_model(behavior="echo", ms=250.0, clock=clock, fail=True)
        with pytest.raises(ModelBackendFailure):
            model.complete(ChatRequest(messages=(("user", "q"),)))
        assert clock.now_ms() == 250.0

    def test_reply_latency_sequence_is_pure_function_of_seed(self):
        def run():
            clock = VirtualClock()
            profile = ModelProfile(
                name="m", latency=LognormalLatency(6.0, 0.5, seed=11), behavior="echo")
            model = MockChatModel(profile, clock)
            out = []
            for i in range(10):
                got = model.complete(ChatRequest(messages=(("user", f"q{i}"),)))
                out.append((got.text, got.latency_ms))
            return out

        assert run() == run()


def test_script_from_prompts_rejects_collisions(monkeypatch):
    import hashlib

    import pmfr.gateway as gw

    real_sha1 = hashlib.sha1
    monkeypatch.setattr(gw.hashlib, "sha1", lambda b: real_sha1(b"fixed"))
    with pytest.raises(ConfigError):
        script_from_prompts({"prompt one": "a", "prompt two": "b"})


def test_complete_facade_returns_text_and_latency():
    model = mock_model(behavior="echo", ms=5.0)
    text, latency = complete(ChatRequest(messages=(("user", "hi"),)), model)
    assert (text, latency) == ("hi", 5.0)


class _FakeHTTPSession:
    """Stands in for requests.Session; records the payload, returns a canned
    chat-completions body."""

    def __init__(self, reply_text="the reply", fail=None, body=None):
        self.reply_text = reply_text
        self.fail = fail
        self.body = body
        self.seen = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.seen.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        if self.fail is not None:
            raise self.fail

        class _Resp:
            def __init__(self, body):
                self._body = body

            def raise_for_status(self):
                return None

            def json(self):
                return self._body

        body = self.body if self.body is not None else {
            "choices": [{"message": {"role": "assistant", "content": self.reply_text}}]
        }
        return _Resp(body)


class TestHTTPBackend:
    def test_payload_matches_wire_shape_golden(self):
        model = HTTPChatModel("http://example.test/v1/chat", "fast-4b")
        req = ChatRequest(messages=(("system", "s"), ("user", "u")), max_tokens=128)
        golden = {
            "model": "fast-4b",
            "messages": [
                {"role": "system", "content": "s"},
                {"role": "user", "content": "u"},
            ],
            "temperature": 0.0,
            "max_tokens": 128,
            "stream": False,
        }
        assert model.build_payload(req) == golden
        # and it is JSON-serializable bit-stably
        assert json.loads(json.dumps(golden)) == golden

    def test_complete_parses_choices_content(self):
        session = _FakeHTTPSession(reply_text="pong")
        model = HTTPChatModel("http://example.test/v1/chat", "m", session=session)
        got = model.complete(ChatRequest(messages=(("user", "ping"),)))
        assert isinstance(got, Completion)
        assert got.text == "pong"
        assert session.seen[0]["url"] == "http://example.test/v1/chat"
        assert session.seen[0]["json"]["messages"][0]["content"] == "ping"

    def test_api_key_header(self):
        session = _FakeHTTPSession()
        model = HTTPChatModel("http://example.test", "m", api_key="sk-test", session=session)
        model.complete(ChatRequest(messages=(("user", "q"),)))
        assert session.seen[0]["headers"]["Authorization"] == "Bearer sk-test"

    def test_timeout_passed_in_seconds(self):
        session = _FakeHTTPSession()
        model = HTTPChatModel("http://example.test", "m", timeout_ms=2500, session=session)
        model.complete(ChatRequest(messages=(("user", "q"),)))
        assert session.seen[0]["timeout"] == 2.5

    def test_connection_error_maps_to_backend_failure(self):
        session = _FakeHTTPSession(fail=requests.ConnectionError("refused"))
        model = HTTPChatModel("http://example.test", "m", session=session)
        with pytest.raises(ModelBackendFailure):
            model.complete(ChatRequest(messages=(("user", "q"),)))

    def test_malformed_body_maps_to_backend_failure(self):
        session = _FakeHTTPSession(body={"unexpected": True})
        model = HTTPChatModel("http://example.test", "m", session=session)
        with pytest.raises(ModelBackendFailure):
            model.complete(ChatRequest(messages=(("user", "q"),)))
