"""Binary adequacy gate: decide whether prepared knowledge suffices.

Runs on the response path, so it must be cheap. The default backend is a
pure heuristic (pronoun-resolving reformulation + overlap score against the
snapshot); a model backend is available when the budget allows.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

from .errors import EvaluatorBackendFailure, ModelBackendFailure
from .kb import KBSnapshot, kb_query
from .scoring import DEFAULT_SCORER, OverlapScorer

# Deictic forms that usually point back at an earlier entity. "that one" is
# two words; replace it before the single-word forms so "one" survives alone.
_PRONOUNS = ("that one", "it", "he", "she", "they", "there")

# A run of capitalized words counts as one candidate entity mention.
_CAP_RUN = re.compile(r"[A-Z][\w'’-]*(?:\s+[A-Z][\w'’-]*)*")

# Closed-class words that are capitalized only because they open a sentence
# or question ("Let me look into ...", "What is ..."). A single-word run of
# one of these is never an entity; a multi-word run may still begin with one
# ("The Hague").
_NON_ENTITY_SINGLES = frozenset(
    "a an the i i'm i'll i'd i've it he she they there this that these those "
    "here you we what which who whom whose when where why how "
    "is are was were am do does did can could will would should shall may "
    "let please tell give show find explain describe define compare list "
    "yes no ok okay sure sorry thanks hello hi hey".split())

_PRONOUN_RES = {p: re.compile(rf"\b{re.escape(p)}\b", re.IGNORECASE) for p in _PRONOUNS}


def _entity_runs(text: str) -> list[str]:
    """Candidate entity mentions: capitalized runs, excluding lone
    sentence-openers and question words ("Let", "What", "It")."""
    return [run for run in _CAP_RUN.findall(text)
            if " " in run or run.lower() not in _NON_ENTITY_SINGLES]


def _load_chitchat_patterns() -> tuple[str, ...]:
    text = resources.files("pmfr.data").joinpath("chitchat.txt").read_text(encoding="utf-8")
    return tuple(
        line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


class HistoryWindow:
    """Bounded recent-turn memory: (query, response) pairs, most recent
    last; appending past ``max_turns`` drops the oldest pair."""

    def __init__(self, max_turns: int = 5, pairs: Iterable[tuple[str, str]] = ()):
        if max_turns < 0:
            raise ValueError("max_turns must be ≥ 0")
        self.max_turns = max_turns
        self._pairs: list[tuple[str, str]] = []
        for pair in pairs:
            self.append(pair)

    def append(self, pair: tuple[str, str]) -> None:
        self._pairs.append((pair[0], pair[1]))
        while len(self._pairs) > self.max_turns:
            del self._pairs[0]

    def __iter__(self):
        return iter(self._pairs)

    def __len__(self) -> int:
        return len(self._pairs)

    def __getitem__(self, index):
        return self._pairs[index]

    def __repr__(self) -> str:
        return f"HistoryWindow(max_turns={self.max_turns}, pairs={self._pairs!r})"


def _latest_entity(history: Sequence[tuple[str, str]]) -> str | None:
    """Most recent candidate entity in history, newest turn first.

    Within a turn the response is fresher than the query. The longest run in
    the first text that has any candidates wins; ties go to the rightmost
    occurrence.
    """
    for query, response in reversed(history):
        for text in (response, query):
            runs = _entity_runs(text)
            if runs:
                best_len = max(len(r) for r in runs)
                return [r for r in runs if len(r) == best_len][-1]
    return None


def reformulate(query: str, history: Sequence[tuple[str, str]]) -> str:
    """Resolve bare pronouns against the most recent named entity.

    Returns the query unchanged when it has no pronoun to resolve or the
    history names nothing to resolve it to.
    """
    if not any(rx.search(query) for rx in _PRONOUN_RES.values()):
        return query
    entity = _latest_entity(list(history))
    if entity is None:
        return query
    out = query
    for pronoun in _PRONOUNS:
        out = _PRONOUN_RES[pronoun].sub(entity, out)
    return out


@dataclass(frozen=True)
class AdequacySignal:
    insufficient: bool
    top_score: float
    reformulated_query: str
    rationale: str = ""

    def __post_init__(self):
        if not self.reformulated_query:
            raise ValueError("reformulated query is empty")


@dataclass
class EvaluatorConfig:
    backend: str = "heuristic"  # "heuristic" | "model"
    threshold: float = 0.5
    history_window: int = 5  # turns of history kept for reformulation
    chitchat_patterns: tuple[str, ...] = field(default_factory=_load_chitchat_patterns)


class Evaluator:
    """Stateless per-call gate; safe to share across sessions."""

    def __init__(self, config: EvaluatorConfig | None = None, model=None,
                 scorer: OverlapScorer = DEFAULT_SCORER):
        self.config = config or EvaluatorConfig()
        self.model = model
        self.scorer = scorer
        self._chitchat = [re.compile(p, re.IGNORECASE) for p in self.config.chitchat_patterns]
        if self.config.backend not in ("heuristic", "model"):
            raise ValueError(f"unknown evaluator backend: {self.config.backend!r}")
        if self.config.backend == "model" and model is None:
            raise ValueError("model backend requires a chat model")

    def is_chitchat(self, query: str) -> bool:
        return any(rx.search(query) for rx in self._chitchat)

    def assess(self, query: str, history: Sequence[tuple[str, str]],
               snapshot: KBSnapshot) -> AdequacySignal:
        window = list(history)[-self.config.history_window:] if self.config.history_window else []
        reformulated = reformulate(query, window)
        hits = kb_query(snapshot, reformulated, 1, scorer=self.scorer)
        top_score = hits[0][1] if hits else 0.0
        if self.is_chitchat(query):
            # Social moves never need preparation, whatever the KB holds.
            return AdequacySignal(False, top_score, reformulated, "chit-chat")
        if self.config.backend == "model":
            insufficient = self._model_judgment(reformulated, hits)
            rationale = "model judged " + ("insufficient" if insufficient else "sufficient")
        else:
            insufficient = top_score < self.config.threshold
            op = "<" if insufficient else "≥"
            rationale = f"top score {top_score:.3f} {op} threshold {self.config.threshold:.3f}"
        return AdequacySignal(insufficient, top_score, reformulated, rationale)

    def _model_judgment(self, reformulated: str,
                        hits: list[tuple]) -> bool:
        from .gateway import ChatRequest

        context = hits[0][0].synopsis if hits else "(no prepared knowledge)"
        prompt = (
            "Answer YES if the knowledge below fully answers the question, NO otherwise.\n"
            f"QUESTION: {reformulated}\n"
            f"KNOWLEDGE: {context}\n"
            "ANSWER:"
        )
        try:
            reply = self.model.complete(ChatRequest(messages=(("user", prompt),)))
        except ModelBackendFailure as exc:
            raise EvaluatorBackendFailure(str(exc)) from exc
        return "YES" not in reply.text.upper()
