"""Lightweight response generator: the user-visible reply, every turn.

Two shapes: DIRECT answers grounded on prepared KB entries, and TRANSITION
holding replies for turns whose knowledge is still being refined in the
background. Both return in one fast-model call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import prompts
from .gateway import ChatModel, ChatRequest
from .kb import KnowledgeEntry

DEFAULT_TRANSITION_TEMPLATE = (
    "Let me look into {query} — meanwhile, could you tell me more about what you need?"
)


class ResponseMode(enum.Enum):
    DIRECT = "DIRECT"
    TRANSITION = "TRANSITION"


@dataclass(frozen=True)
class FastResponse:
    text: str
    mode: ResponseMode
    grounded_on: tuple[str, ...]  # entry_ids in rank order; empty in TRANSITION
    model_latency_ms: float

    def __post_init__(self):
        if self.mode is ResponseMode.TRANSITION and self.grounded_on:
            raise ValueError("transition responses carry no grounding")
        if not self.text:
            raise ValueError("response text is empty")
        object.__setattr__(self, "grounded_on", tuple(self.grounded_on))


@dataclass
class FastlineConfig:
    context_budget_tokens: int = 1024  # whitespace tokens across hit synopses
    transition_template: str = DEFAULT_TRANSITION_TEMPLATE
    top_k: int = 3  # KB hits requested per direct turn

    def __post_init__(self):
        if self.context_budget_tokens < 1:
            raise ValueError("context budget must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be positive")


def _history_block(history: list[tuple[str, str]]) -> list[str]:
    lines = []
    if history:
        lines.append("HISTORY:")
        for q, r in history:
            lines.append(f"Q: {q}")
            lines.append(f"A: {r}")
    return lines


def _fit_hits(hits: list[tuple[KnowledgeEntry, float]], budget: int
              ) -> list[KnowledgeEntry]:
    """Rank-order prefix of hits whose synopses fit the token budget.

    The top hit is always included: an oversized best answer beats an
    ungrounded one.
    """
    included: list[KnowledgeEntry] = []
    used = 0
    for entry, _score in hits:
        cost = len(entry.synopsis.split())
        if included and used + cost > budget:
            break
        included.append(entry)
        used += cost
    return included


def respond_direct(query: str, history: list[tuple[str, str]],
                   hits: list[tuple[KnowledgeEntry, float]], model: ChatModel,
                   config: FastlineConfig | None = None) -> FastResponse:
    """Answer from prepared knowledge. Raises ModelBackendFailure upward;
    the session engine owns the apology fallback."""
    if not hits:
        raise ValueError("respond_direct requires at least one hit")
    cfg = config or FastlineConfig()
    included = _fit_hits(hits, cfg.context_budget_tokens)
    lines = [f"QUESTION: {query}"]
    lines += _history_block(history)
    lines.append("KNOWLEDGE:")
    lines += [f"- {e.synopsis}" for e in included]
    request = ChatRequest(messages=(
        ("system", prompts.DIRECT_SYSTEM),
        ("user", "\n".join(lines)),
    ))
    completion = model.complete(request)
    return FastResponse(
        text=completion.text,
        mode=ResponseMode.DIRECT,
        grounded_on=tuple(e.entry_id for e in included),
        model_latency_ms=completion.latency_ms,
    )


def respond_transition(query: str, history: list[tuple[str, str]],
                       reformulated: str, model: ChatModel,
                       config: FastlineConfig | None = None) -> FastResponse:
    """Hold the floor while refinement runs: acknowledge, restate intent,
    invite elaboration. Never grounded on KB content."""
    lines = [f"QUESTION: {reformulated}"]
    lines += _history_block(history)
    request = ChatRequest(messages=(
        ("system", prompts.TRANSITION_SYSTEM),
        ("user", "\n".join(lines)),
    ))
    completion = model.complete(request)
    return FastResponse(
        text=completion.text,
        mode=ResponseMode.TRANSITION,
        grounded_on=(),
        model_latency_ms=completion.latency_ms,
    )
