"""Session engine: decouple the reply from the knowledge work behind it.

Per turn: apply finished refinements, snapshot the KB, gate on adequacy,
answer directly from prepared knowledge or hold the floor while a
background task refines it. The reply path never waits on refinement.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from . import events as ev
from . import prompts
from .clock import Clock, RealClock
from .errors import (
    DuplicateInflight,
    EmptyInput,
    EvaluatorBackendFailure,
    InvalidEntry,
    ModelBackendFailure,
    TurnInFlight,
)
from .evaluator import AdequacySignal, Evaluator, HistoryWindow
from .events import EventLog
from .fastline import (
    FastlineConfig,
    FastResponse,
    ResponseMode,
    respond_direct,
    respond_transition,
)
from .gateway import ChatModel, ConstantLatency, MockChatModel, ModelProfile
from .kb import KnowledgeBase, KnowledgeEntry, kb_commit, kb_query, kb_snapshot, normalize_topic
from .scoring import DEFAULT_SCORER, OverlapScorer
from .slowline import (
    DEFAULT_DEADLINE_MS,
    DEFAULT_MAX_EVIDENCE,
    RefinementTask,
    TaskState,
    run_task,
)

log = logging.getLogger(__name__)


def _default_model(clock: Clock) -> MockChatModel:
    return MockChatModel(
        ModelProfile("mock", ConstantLatency(0), behavior="dialogue"), clock
    )


class Session:
    """All mutable state for one conversation.

    The turn path is the only KB writer; background tasks hand payloads over
    through ``commit_queue`` (many producers, one consumer) and never touch
    the KB. ``lock`` guards the queue, the in-flight map and the task table.
    """

    def __init__(
        self,
        session_id: str,
        *,
        clock: Clock | None = None,
        kb: KnowledgeBase | None = None,
        evaluator: Evaluator | None = None,
        fast_model: ChatModel | None = None,
        heavy_model: ChatModel | None = None,
        tools: Sequence = (),
        fastline_config: FastlineConfig | None = None,
        max_evidence: int = DEFAULT_MAX_EVIDENCE,
        deadline_ms: float = DEFAULT_DEADLINE_MS,
        events: EventLog | None = None,
        scorer: OverlapScorer = DEFAULT_SCORER,
        on_commit: Callable[["Session"], None] | None = None,
    ):
        self.session_id = session_id
        self.clock = clock or RealClock()
        self.kb = kb or KnowledgeBase()
        self.evaluator = evaluator or Evaluator(scorer=scorer)
        self.fast_model = fast_model or _default_model(self.clock)
        self.heavy_model = heavy_model or _default_model(self.clock)
        self.tools = list(tools)
        self.fastline_config = fastline_config or FastlineConfig()
        self.max_evidence = max_evidence
        self.deadline_ms = deadline_ms
        self.events = events or EventLog()
        self.scorer = scorer
        self.on_commit = on_commit

        self.history = HistoryWindow(self.evaluator.config.history_window)
        self.inflight: dict[str, str] = {}
        self.tasks: dict[str, RefinementTask] = {}
        self.commit_queue: list[tuple[RefinementTask, list[KnowledgeEntry]]] = []
        self.results: list[TurnResult] = []
        self.turn_index = 0
        self.lock = threading.Lock()
        self._turn_busy = threading.Lock()
        self._task_counter = 0

    def emit(self, kind: str, **data) -> None:
        self.events.emit(kind, self.clock.now_ms(), self.session_id, **data)


@dataclass(frozen=True)
class TurnResult:
    turn_index: int
    query: str
    response: FastResponse
    adequacy: AdequacySignal
    kb_version_used: int
    spawned_task: str | None
    turn_latency_ms: float

    def __post_init__(self):
        if self.spawned_task is not None and not self.adequacy.insufficient:
            raise ValueError("a task may only be spawned on an insufficient turn")

    def to_record(self) -> dict:
        return {
            "turn_index": self.turn_index,
            "query": self.query,
            "response": {
                "text": self.response.text,
                "mode": self.response.mode.value,
                "grounded_on": list(self.response.grounded_on),
                "model_latency_ms": self.response.model_latency_ms,
            },
            "adequacy": {
                "insufficient": self.adequacy.insufficient,
                "top_score": self.adequacy.top_score,
                "reformulated_query": self.adequacy.reformulated_query,
            },
            "kb_version_used": self.kb_version_used,
            "spawned_task": self.spawned_task,
            "turn_latency_ms": self.turn_latency_ms,
        }


def drain_commits(session: Session) -> int:
    """Apply queued payloads in completion order, one atomic commit each.

    Entries that no longer validate are dropped (logged); a payload losing
    every entry is not applied and its task fails instead of committing.
    """
    with session.lock:
        pending = list(session.commit_queue)
        session.commit_queue.clear()
    applied = 0
    for task, payload in pending:
        valid: list[KnowledgeEntry] = []
        for entry in payload:
            try:
                replace(entry)  # re-runs invariant checks
                valid.append(entry)
            except (InvalidEntry, TypeError, ValueError) as exc:
                log.warning("dropping invalid entry from %s: %s", task.task_id, exc)
        now = session.clock.now_ms()
        if not valid:
            task.error = "payload invalid at commit time"
            task.transition(TaskState.FAILED, now)
            session.emit(ev.TASK_STATE_CHANGED, task_id=task.task_id, state=task.state.value)
        else:
            version = kb_commit(session.kb, valid)
            task.transition(TaskState.COMMITTED, now)
            applied += 1
            session.emit(ev.TASK_STATE_CHANGED, task_id=task.task_id, state=task.state.value)
            session.emit(ev.KB_COMMITTED, version=version, n_entries=len(valid))
        with session.lock:
            if session.inflight.get(task.topic_key) == task.task_id:
                del session.inflight[task.topic_key]
        if valid and session.on_commit is not None:
            session.on_commit(session)
    return applied


def spawn_refinement(session: Session, adequacy: AdequacySignal,
                     clock: Clock | None = None) -> str:
    """Start a background refinement for the turn's topic; returns at once."""
    if not adequacy.insufficient:
        raise ValueError("refinement is only spawned for insufficient turns")
    clock = clock or session.clock
    topic = normalize_topic(adequacy.reformulated_query)
    with session.lock:
        if topic in session.inflight:
            raise DuplicateInflight(topic)
        session._task_counter += 1
        task_id = f"{session.session_id}/t{session._task_counter:03d}"
        task = RefinementTask(
            task_id=task_id,
            session_id=session.session_id,
            reformulated_query=adequacy.reformulated_query,
            topic_key=topic,
            created_at=clock.now_ms(),
            deadline_ms=session.deadline_ms,
        )
        session.inflight[topic] = task_id
        session.tasks[task_id] = task
    session.emit(ev.TASK_SPAWNED, task_id=task_id, topic_key=topic)

    def notify(t: RefinementTask) -> None:
        session.emit(ev.TASK_STATE_CHANGED, task_id=t.task_id, state=t.state.value)

    def runner() -> None:
        payload = run_task(
            task, session.tools, session.heavy_model, clock,
            scorer=session.scorer, max_evidence=session.max_evidence,
            on_state=notify,
        )
        with session.lock:
            if payload is None:
                # Terminal failure: free the topic so a later turn may retry.
                if session.inflight.get(topic) == task_id:
                    del session.inflight[topic]
            else:
                session.commit_queue.append((task, payload))

    clock.spawn(runner, name=task_id)
    return task_id


def handle_turn(session: Session, query: str, clock: Clock | None = None) -> TurnResult:
    """One dialogue turn. Returns as soon as the fast model replies; any
    refinement it spawns becomes visible at the next turn's drain."""
    clock = clock or session.clock
    if not query or not query.strip():
        raise EmptyInput("empty query")
    if not session._turn_busy.acquire(blocking=False):
        raise TurnInFlight(session.session_id)
    try:
        started = clock.now_ms()
        turn_index = session.turn_index
        session.emit(ev.TURN_STARTED, turn_index=turn_index, query=query)
        drain_commits(session)
        snapshot = kb_snapshot(session.kb)
        try:
            adequacy = session.evaluator.assess(query, session.history, snapshot)
        except EvaluatorBackendFailure as exc:
            log.warning("evaluator backend failed, failing open: %s", exc)
            adequacy = AdequacySignal(False, 0.0, query,
                                      "fail-open: evaluator backend unreachable")
        session.emit(ev.ADEQUACY_ASSESSED,
                     insufficient=adequacy.insufficient, top_score=adequacy.top_score)

        spawned: str | None = None
        try:
            if adequacy.insufficient:
                response = respond_transition(query, session.history, adequacy.reformulated_query,
                                              session.fast_model, session.fastline_config)
            else:
                hits = kb_query(snapshot, adequacy.reformulated_query,
                                session.fastline_config.top_k, scorer=session.scorer)
                if hits:
                    response = respond_direct(query, session.history, hits,
                                              session.fast_model, session.fastline_config)
                else:
                    # Sufficient but nothing retrievable (fail-open or
                    # small-talk on an empty KB): hold the floor instead.
                    response = respond_transition(query, session.history,
                                                  adequacy.reformulated_query,
                                                  session.fast_model, session.fastline_config)
        except ModelBackendFailure as exc:
            log.warning("fast model failed, apologizing: %s", exc)
            response = FastResponse(prompts.APOLOGY_TEXT, ResponseMode.TRANSITION, (), 0.0)
            session.emit(ev.MODE_CHOSEN, mode=response.mode.value)
        else:
            session.emit(ev.MODE_CHOSEN, mode=response.mode.value)
            if adequacy.insufficient:
                try:
                    spawned = spawn_refinement(session, adequacy, clock)
                except DuplicateInflight:
                    spawned = None

        session.history.append((query, response.text))
        session.turn_index += 1
        latency = clock.now_ms() - started
        session.emit(ev.TURN_COMPLETED, latency_ms=latency)
        result = TurnResult(
            turn_index=turn_index,
            query=query,
            response=response,
            adequacy=adequacy,
            kb_version_used=snapshot.version,
            spawned_task=spawned,
            turn_latency_ms=latency,
        )
        session.results.append(result)
        return result
    finally:
        session._turn_busy.release()
