"""Chat-model gateway: one call shape, two backends.

The mock backend is fully deterministic (seeded latency, reply computed
from the request) so replays are byte-identical; the HTTP backend speaks
the common open chat-completions wire shape.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field

import requests

from . import prompts
from .clock import Clock, RealClock
from .errors import ConfigError, ModelBackendFailure

_ROLES = ("system", "user", "assistant")

# One-sided 95% point of the standard normal, used to fit lognormal
# parameters from a published (mean, p95) pair.
_Z95 = 1.6448536269514722


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")
        for role, _content in self.messages:
            if role not in _ROLES:
                raise ValueError(f"unknown role: {role!r}")
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))

    def last_user(self) -> str:
        for role, content in reversed(self.messages):
            if role == "user":
                return content
        return ""

    def system(self) -> str:
        for role, content in self.messages:
            if role == "system":
                return content
        return ""


@dataclass(frozen=True)
class Completion:
    text: str
    latency_ms: float
    model_name: str


def prompt_hash(messages: tuple[tuple[str, str], ...]) -> str:
    joined = "\x1e".join(content for _role, content in messages)
    return hashlib.sha1(joined.encode("utf-8")).hexdigest()[:12]


# --- latency models ---------------------------------------------------------


class ConstantLatency:
    def __init__(self, ms: float):
        if ms < 0:
            raise ConfigError(f"latency must be ≥ 0, got {ms}")
        self.ms = float(ms)

    def sample(self) -> float:
        return self.ms

    def describe(self) -> str:
        return f"constant({self.ms:g} ms)"


class LognormalLatency:
    """Seeded lognormal sampler; sampling is serialized so the sequence is
    a pure function of seed and call order even under concurrent callers."""

    def __init__(self, mu: float, sigma: float, seed: int):
        if sigma < 0:
            raise ConfigError(f"sigma must be ≥ 0, got {sigma}")
        self.mu = mu
        self.sigma = sigma
        self.seed = seed
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    @classmethod
    def from_mean_p95(cls, mean_ms: float, p95_ms: float, seed: int) -> "LognormalLatency":
        """Fit (μ, σ) so the distribution has the given mean and 95th
        percentile. Takes the smaller σ root: the published tails are
        moderate, and the larger root implies absurd dispersion."""
        if not (0 < mean_ms < p95_ms):
            raise ConfigError(f"need 0 < mean < p95, got mean={mean_ms}, p95={p95_ms}")
        # mean = exp(μ + σ²/2), p95 = exp(μ + z·σ)  ⇒  σ² − 2zσ + 2ln(p95/mean) = 0
        disc = _Z95 * _Z95 - 2.0 * math.log(p95_ms / mean_ms)
        if disc < 0:
            raise ConfigError(
                f"no lognormal has mean={mean_ms} and p95={p95_ms} (ratio too large)"
            )
        sigma = _Z95 - math.sqrt(disc)
        mu = math.log(mean_ms) - sigma * sigma / 2.0
        return cls(mu, sigma, seed)

    def sample(self) -> float:
        with self._lock:
            return self._rng.lognormvariate(self.mu, self.sigma)

    def describe(self) -> str:
        return f"lognormal(mu={self.mu:.4f}, sigma={self.sigma:.4f}, seed={self.seed})"


# --- mock behaviors ---------------------------------------------------------

_QUESTION_LINE = re.compile(r"^QUESTION: (.*)$", re.MULTILINE)
_KNOWLEDGE_ITEM = re.compile(r"^- (.*)$", re.MULTILINE)


def _prompt_fields(request: ChatRequest) -> dict[str, str]:
    """Fields a template reply may reference, parsed from the last user
    message's tagged lines."""
    body = request.last_user()
    q = _QUESTION_LINE.search(body)
    items = _KNOWLEDGE_ITEM.findall(body)
    return {
        "query": q.group(1) if q else "",
        "top_synopsis": items[0] if items else "",
        "knowledge": "; ".join(items),
        "prompt": body,
    }


@dataclass(frozen=True)
class ModelProfile:
    """Mock configuration: what to say and how long to take.

    behavior:
      echo            reply with the last user message verbatim
      template        reply with ``template`` formatted from prompt fields
      scripted        reply from ``script`` (prompt-hash to text), else echo
      dialogue        transition calls get the transition template, direct
                      calls get the top prepared synopsis (or a stock line)
    """

    name: str
    latency: ConstantLatency | LognormalLatency
    behavior: str = "echo"
    template: str = ""
    script: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.behavior not in ("echo", "template", "scripted", "dialogue"):
            raise ConfigError(f"unknown mock behavior: {self.behavior!r}")
        if self.behavior == "template" and not self.template:
            raise ConfigError("template behavior requires a template string")


def script_from_prompts(pairs: dict[str, str]) -> dict[str, str]:
    """Hash plain prompt texts into a scripted-reply map, rejecting
    hash collisions up front."""
    out: dict[str, str] = {}
    seen: dict[str, str] = {}
    for prompt, reply in pairs.items():
        h = hashlib.sha1(prompt.encode("utf-8")).hexdigest()[:12]
        if h in seen and seen[h] != prompt:
            raise ConfigError(f"prompt hash collision: {prompt!r} vs {seen[h]!r}")
        seen[h] = prompt
        out[h] = reply
    return out


_TRANSITION_FALLBACK = (
    "Let me look into {query} — meanwhile, could you tell me more about what you need?"
)
_DIRECT_FALLBACK = "I don't have specifics on {query} yet."


class MockChatModel:
    """Deterministic stand-in: sleeps a sampled latency on the given clock
    (zero real time under the virtual clock) and replies per behavior."""

    mock_reasoning = True  # downstream stages may use their deterministic path

    def __init__(self, profile: ModelProfile, clock: Clock | None = None,
                 fail: bool = False):
        self.profile = profile
        self.clock = clock or RealClock()
        self.fail = fail  # fault injection for fallback-path tests

    @property
    def name(self) -> str:
        return self.profile.name

    def complete(self, request: ChatRequest) -> Completion:
        latency = self.profile.latency.sample()
        self.clock.sleep(latency)
        if self.fail:
            raise ModelBackendFailure(f"{self.profile.name}: injected failure")
        return Completion(self._reply(request), latency, self.profile.name)

    def _reply(self, request: ChatRequest) -> str:
        b = self.profile.behavior
        if b == "echo":
            return request.last_user()
        if b == "template":
            return self.profile.template.format(**_prompt_fields(request))
        if b == "scripted":
            hit = self.profile.script.get(prompt_hash(request.messages))
            return hit if hit is not None else request.last_user()
        # dialogue: pick a reply shape from the kind of call being served
        fields = _prompt_fields(request)
        if request.system() == prompts.TRANSITION_SYSTEM:
            return (self.profile.template or _TRANSITION_FALLBACK).format(**fields)
        if request.system() == prompts.REASON_SYSTEM:
            return fields["knowledge"]
        if fields["top_synopsis"]:
            return fields["top_synopsis"]
        return _DIRECT_FALLBACK.format(**fields)


class HTTPChatModel:
    """Minimal client for the common chat-completions wire shape."""

    mock_reasoning = False

    def __init__(self, endpoint: str, model_name: str, timeout_ms: float = 30_000,
                 api_key: str | None = None, session: requests.Session | None = None):
        self.endpoint = endpoint
        self.model_name = model_name
        self.timeout_ms = timeout_ms
        self.api_key = api_key
        self._http = session or requests.Session()

    @property
    def name(self) -> str:
        return self.model_name

    def build_payload(self, request: ChatRequest) -> dict:
        return {
            "model": self.model_name,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stream": False,
        }

    def complete(self, request: ChatRequest) -> Completion:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        started = time.monotonic()
        try:
            resp = self._http.post(
                self.endpoint,
                json=self.build_payload(request),
                headers=headers,
                timeout=self.timeout_ms / 1000.0,
            )
            resp.raise_for_status()
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise ModelBackendFailure(f"{self.model_name}: {exc}") from exc
        latency = (time.monotonic() - started) * 1000.0
        return Completion(text, latency, self.model_name)


ChatModel = MockChatModel | HTTPChatModel


def complete(request: ChatRequest, backend: ChatModel) -> tuple[str, float]:
    """Functional facade over ``backend.complete``."""
    result = backend.complete(request)
    return result.text, result.latency_ms
