"""Background knowledge refinement: acquire → reason → synopsize.

Runs off the response path. Each task drives a small state machine and, on
success, hands a commit payload to the session engine; it never writes the
KB itself. Timeouts are checked at stage boundaries, not mid-stage.
"""

from __future__ import annotations

import enum
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import prompts
from .clock import Clock
from .errors import AllToolsFailed, EmptyFacts, IllegalTransition, ModelBackendFailure
from .gateway import ChatModel, ChatRequest
from .kb import KnowledgeEntry, Provenance, normalize_topic, topic_hash
from .scoring import DEFAULT_SCORER, OverlapScorer

log = logging.getLogger(__name__)

DEFAULT_MAX_EVIDENCE = 8
DEFAULT_DEADLINE_MS = 60_000

# Facts conflict when they mostly overlap but disagree on a number.
CONFLICT_SHARE = 0.6

_NUMERIC = re.compile(r"^[0-9]+$")


class TaskState(enum.Enum):
    PENDING = "PENDING"
    SEARCHING = "SEARCHING"
    REASONING = "REASONING"
    SUMMARIZING = "SUMMARIZING"
    COMMITTED = "COMMITTED"
    FAILED = "FAILED"
    TIMED_OUT = "TIMED_OUT"


_TERMINAL = {TaskState.COMMITTED, TaskState.FAILED, TaskState.TIMED_OUT}

_ALLOWED: dict[TaskState, set[TaskState]] = {
    TaskState.PENDING: {TaskState.SEARCHING, TaskState.FAILED, TaskState.TIMED_OUT},
    TaskState.SEARCHING: {TaskState.REASONING, TaskState.FAILED, TaskState.TIMED_OUT},
    TaskState.REASONING: {TaskState.SUMMARIZING, TaskState.FAILED, TaskState.TIMED_OUT},
    TaskState.SUMMARIZING: {TaskState.COMMITTED, TaskState.FAILED, TaskState.TIMED_OUT},
    TaskState.COMMITTED: set(),
    TaskState.FAILED: set(),
    TaskState.TIMED_OUT: set(),
}


@dataclass
class RefinementTask:
    task_id: str
    session_id: str
    reformulated_query: str
    topic_key: str = ""
    state: TaskState = TaskState.PENDING
    created_at: float = 0.0  # ms on the session clock
    finished_at: float | None = None
    deadline_ms: float = DEFAULT_DEADLINE_MS
    error: str | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if not self.topic_key:
            self.topic_key = normalize_topic(self.reformulated_query)

    @property
    def terminal(self) -> bool:
        with self._lock:
            return self.state in _TERMINAL

    def transition(self, new_state: TaskState, now_ms: float) -> None:
        with self._lock:
            if new_state not in _ALLOWED[self.state]:
                raise IllegalTransition(f"{self.state.value} → {new_state.value}")
            self.state = new_state
            if new_state in _TERMINAL:
                self.finished_at = now_ms

    def to_record(self) -> dict:
        with self._lock:
            return {
                "task_id": self.task_id,
                "session_id": self.session_id,
                "topic_key": self.topic_key,
                "reformulated_query": self.reformulated_query,
                "state": self.state.value,
                "created_at": self.created_at,
                "finished_at": self.finished_at,
                "deadline_ms": self.deadline_ms,
                "error": self.error,
            }


@dataclass(frozen=True)
class Evidence:
    text: str
    provenance: Provenance
    relevance: float

    def __post_init__(self):
        if not self.text:
            raise ValueError("evidence text is empty")
        if not (0.0 <= self.relevance <= 1.0):
            raise ValueError(f"relevance out of range: {self.relevance}")


@dataclass(frozen=True)
class Fact:
    statement: str
    support: tuple[int, ...]  # indices into the evidence list
    confidence: float


@dataclass(frozen=True)
class ConsolidatedFacts:
    """Surviving facts plus the evidence they index into.

    ``conflicts`` pairs are (winner, loser) indices into the pre-resolution
    candidate order; the loser is absent from ``facts``.
    """

    facts: tuple[Fact, ...]
    conflicts: tuple[tuple[int, int], ...]
    evidence: tuple[Evidence, ...]

    def __post_init__(self):
        for f in self.facts:
            if not (0.0 <= f.confidence <= 1.0):
                raise ValueError(f"fact confidence out of range: {f.confidence}")
            for idx in f.support:
                if not (0 <= idx < len(self.evidence)):
                    raise ValueError(f"support index {idx} out of range")


# --- tools -------------------------------------------------------------------


class CorpusTool:
    """Search over a directory of text documents (first line title, rest
    body). Desk-scale stand-in for web/document search; anything exposing
    the same ``search`` shape can replace it."""

    def __init__(self, path: str | Path, name: str = "corpus",
                 scorer: OverlapScorer = DEFAULT_SCORER):
        self.path = Path(path)
        self.name = name
        self.scorer = scorer
        self._docs: list[tuple[str, str, str]] = []  # (title, body, uri)
        for doc_path in sorted(self.path.glob("*.txt")):
            text = doc_path.read_text(encoding="utf-8")
            title, _, body = text.partition("\n")
            self._docs.append((title.strip(), body.strip(), f"corpus:{doc_path.name}"))

    def search(self, query: str, limit: int) -> list[tuple[str, str, str]]:
        scored = []
        for title, body, uri in self._docs:
            passage = f"{title}: {body}" if body else title
            s = self.scorer.score(query, passage)
            if s > 0.0:
                scored.append((s, passage, uri, title))
        scored.sort(key=lambda t: -t[0])
        return [(passage, uri, title) for _s, passage, uri, title in scored[:limit]]


class FailingTool:
    """Always raises; exercises per-tool failure isolation."""

    def __init__(self, name: str = "failing"):
        self.name = name

    def search(self, query: str, limit: int) -> list[tuple[str, str, str]]:
        raise RuntimeError(f"{self.name}: tool unavailable")


# --- pipeline stages ---------------------------------------------------------


def acquire(reformulated_query: str, tools: Sequence, *,
            scorer: OverlapScorer = DEFAULT_SCORER,
            max_evidence: int = DEFAULT_MAX_EVIDENCE,
            clock: Clock | None = None,
            failures: list[str] | None = None) -> list[Evidence]:
    """Query every tool in registration order; keep the top passages by
    overlap with the query. Tool failures are skipped (and recorded when a
    sink is given); only a total wipeout raises."""
    if not tools:
        raise ValueError("tool registry is empty")
    collected: list[Evidence] = []
    errors = 0
    now = clock.now_ms() if clock else 0.0
    for tool in tools:
        try:
            rows = tool.search(reformulated_query, max_evidence)
        except Exception as exc:
            errors += 1
            msg = f"{getattr(tool, 'name', tool.__class__.__name__)}: {exc}"
            log.warning("tool failed: %s", msg)
            if failures is not None:
                failures.append(msg)
            continue
        for text, source_uri, attribution in rows:
            collected.append(Evidence(
                text=text,
                provenance=Provenance(source_uri, now, attribution),
                relevance=scorer.score(reformulated_query, text),
            ))
    if errors == len(tools):
        raise AllToolsFailed(f"all {errors} tools failed")
    # Stable sort: ties stay in (tool order, passage order).
    collected.sort(key=lambda e: -e.relevance)
    return collected[:max_evidence]


def _duplicate_collapse(evidence: Sequence[Evidence]) -> list[Fact]:
    by_text: dict[str, Fact] = {}
    for idx, ev in enumerate(evidence):
        prior = by_text.get(ev.text)
        if prior is None:
            by_text[ev.text] = Fact(ev.text, (idx,), ev.relevance)
        else:
            by_text[ev.text] = Fact(
                prior.statement,
                prior.support + (idx,),
                max(prior.confidence, ev.relevance),
            )
    return list(by_text.values())


def _conflicts(a: Fact, b: Fact, scorer: OverlapScorer) -> bool:
    ta, tb = scorer.tokenize(a.statement), scorer.tokenize(b.statement)
    if not ta or not tb:
        return False
    share = len(ta & tb) / max(len(ta), len(tb))
    if share < CONFLICT_SHARE:
        return False
    na = {t for t in ta if _NUMERIC.match(t)}
    nb = {t for t in tb if _NUMERIC.match(t)}
    return (na or nb) and na != nb


def _resolve(candidates: list[Fact], scorer: OverlapScorer
             ) -> tuple[list[Fact], list[tuple[int, int]]]:
    dropped: set[int] = set()
    conflicts: list[tuple[int, int]] = []
    for i in range(len(candidates)):
        if i in dropped:
            continue
        for j in range(i + 1, len(candidates)):
            if j in dropped:
                continue
            if _conflicts(candidates[i], candidates[j], scorer):
                # Higher confidence wins; a tie keeps the earlier fact.
                if candidates[j].confidence > candidates[i].confidence:
                    winner, loser = j, i
                else:
                    winner, loser = i, j
                conflicts.append((winner, loser))
                dropped.add(loser)
                if loser == i:
                    break
    survivors = [f for idx, f in enumerate(candidates) if idx not in dropped]
    return survivors, conflicts


def reason(evidence: Sequence[Evidence], model: ChatModel,
           scorer: OverlapScorer = DEFAULT_SCORER) -> ConsolidatedFacts:
    """Consolidate evidence into facts, resolving numeric contradictions.

    The model call always happens (it carries the stage's latency). With a
    mock backend the facts come from the deterministic path: one fact per
    distinct evidence text, confidence = relevance. With a live backend the
    reply's "- " lines become the statements. Either way the contradiction
    rule is applied as post-processing.
    """
    if not evidence:
        raise ValueError("reason requires evidence")
    lines = ["QUESTION: consolidate the evidence", "EVIDENCE:"]
    lines += [f"- {ev.text}" for ev in evidence]
    completion = model.complete(ChatRequest(messages=(
        ("system", prompts.REASON_SYSTEM),
        ("user", "\n".join(lines)),
    )))
    if getattr(model, "mock_reasoning", False):
        candidates = _duplicate_collapse(evidence)
    else:
        stated = [m.group(1) for m in re.finditer(r"^- (.+)$", completion.text, re.M)]
        all_support = tuple(range(len(evidence)))
        mean_rel = sum(ev.relevance for ev in evidence) / len(evidence)
        candidates = [Fact(s, all_support, mean_rel) for s in stated]
        if not candidates:
            candidates = _duplicate_collapse(evidence)
    facts, conflicts = _resolve(candidates, scorer)
    return ConsolidatedFacts(tuple(facts), tuple(conflicts), tuple(evidence))


def synopsize(facts: ConsolidatedFacts, query: str) -> list[KnowledgeEntry]:
    """Distill facts into commit-ready entries: one entry per task, synopsis
    joining the fact statements, confidence the mean, sources the union of
    supporting provenances (first-seen order)."""
    if not facts.facts:
        raise EmptyFacts("no facts to synopsize")
    topic = normalize_topic(query)
    sources: list[Provenance] = []
    seen: set[Provenance] = set()
    for fact in facts.facts:
        for idx in fact.support:
            prov = facts.evidence[idx].provenance
            if prov not in seen:
                seen.add(prov)
                sources.append(prov)
    confidence = sum(f.confidence for f in facts.facts) / len(facts.facts)
    entry = KnowledgeEntry(
        entry_id=f"{topic_hash(topic)}-0",
        topic_key=topic,
        synopsis="; ".join(f.statement for f in facts.facts),
        sources=tuple(sources),
        confidence=confidence,
    )
    return [entry]


def run_task(task: RefinementTask, tools: Sequence, model: ChatModel,
             clock: Clock, *,
             scorer: OverlapScorer = DEFAULT_SCORER,
             max_evidence: int = DEFAULT_MAX_EVIDENCE,
             on_state: Callable[[RefinementTask], None] | None = None
             ) -> list[KnowledgeEntry] | None:
    """Drive one task through the pipeline. Returns the commit payload on
    success (the engine marks COMMITTED when it applies the payload); on
    failure or timeout the task lands terminal and None is returned."""
    if task.state is not TaskState.PENDING:
        raise IllegalTransition(f"run_task needs PENDING, got {task.state.value}")

    def notify():
        if on_state is not None:
            on_state(task)

    def out_of_time() -> bool:
        if clock.now_ms() - task.created_at >= task.deadline_ms:
            task.transition(TaskState.TIMED_OUT, clock.now_ms())
            notify()
            return True
        return False

    def fail(msg: str):
        task.error = msg
        task.transition(TaskState.FAILED, clock.now_ms())
        notify()

    if out_of_time():
        return None
    task.transition(TaskState.SEARCHING, clock.now_ms())
    notify()
    try:
        evidence = acquire(task.reformulated_query, tools,
                           scorer=scorer, max_evidence=max_evidence, clock=clock)
    except (AllToolsFailed, ValueError) as exc:
        fail(str(exc))
        return None
    if not evidence:
        fail("no evidence found")
        return None

    if out_of_time():
        return None
    task.transition(TaskState.REASONING, clock.now_ms())
    notify()
    try:
        facts = reason(evidence, model, scorer=scorer)
    except ModelBackendFailure as exc:
        fail(str(exc))
        return None

    if out_of_time():
        return None
    task.transition(TaskState.SUMMARIZING, clock.now_ms())
    notify()
    try:
        payload = synopsize(facts, task.reformulated_query)
    except EmptyFacts as exc:
        fail(str(exc))
        return None

    if out_of_time():
        return None
    return payload
