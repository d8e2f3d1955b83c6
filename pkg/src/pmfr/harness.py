"""Replay and benchmark engine.

Runs scripted sessions under a fixed submission protocol (default: 10 s of
simulated thinking time between turns) against three system shapes:

  DIRECT      one fast-model call per turn, no KB, no background work
  SYNC_AGENT  the full refinement pipeline runs inline before every reply
  PMFR        the decoupled engine (fast reply now, refinement in background)

and reports per-turn latency, mean, and nearest-rank P95.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import events as ev
from . import prompts
from .clock import Clock, VirtualClock
from .config import AppConfig, build_session
from .errors import EmptyInput, ModelBackendFailure, ScriptParseError
from .evaluator import reformulate
from .events import Event
from .fastline import FastResponse, ResponseMode, respond_direct
from .gateway import ChatRequest
from .kb import kb_commit, kb_query, kb_snapshot
from .orchestrator import Session, handle_turn
from .slowline import RefinementTask, TaskState, run_task


@dataclass(frozen=True)
class ScriptTurn:
    query: str
    reference: str | None = None
    topic: str | None = None


@dataclass(frozen=True)
class SessionScript:
    session_id: str
    turns: tuple[ScriptTurn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ScriptParseError(f"script {self.session_id} has no turns")
        for i, turn in enumerate(self.turns):
            if not turn.query or not turn.query.strip():
                raise ScriptParseError(f"script {self.session_id} turn {i}: empty query")
        object.__setattr__(self, "turns", tuple(self.turns))


@dataclass(frozen=True)
class LatencyReport:
    per_turn_ms: tuple[float, ...]
    mean_ms: float
    p95_ms: float
    config_name: str

    def to_record(self) -> dict:
        return {
            "config_name": self.config_name,
            "n_turns": len(self.per_turn_ms),
            "mean_ms": self.mean_ms,
            "p95_ms": self.p95_ms,
            "per_turn_ms": list(self.per_turn_ms),
        }


@dataclass(frozen=True)
class ObjectiveWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be ≥ 0")


def metrics(per_turn_ms: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and nearest-rank P95 (1-based index ceil(0.95·n) of
    the ascending sort, computed in integer arithmetic; float ceil is off
    by one for n = 40, 80, ...)."""
    if not per_turn_ms:
        raise EmptyInput("metrics over an empty latency list")
    n = len(per_turn_ms)
    mean = math.fsum(per_turn_ms) / n
    rank = (95 * n + 99) // 100
    p95 = sorted(per_turn_ms)[rank - 1]
    return mean, p95


def objective(Q: float, L_ms: float, C: float, w: ObjectiveWeights) -> float:
    """Deployment trade-off score: lower is better. Latency enters in
    seconds; quality is rewarded, latency and cost penalized."""
    return -w.alpha * Q + w.beta * (L_ms / 1000.0) + w.gamma * C


# --- quality hooks -----------------------------------------------------------


def _norm_tokens(text: str) -> list[str]:
    return text.lower().split()


def exact_match(query: str, reference: str, response: str) -> float:
    return 1.0 if _norm_tokens(reference) == _norm_tokens(response) else 0.0


def token_f1(query: str, reference: str, response: str) -> float:
    ref = Counter(_norm_tokens(reference))
    got = Counter(_norm_tokens(response))
    overlap = sum((ref & got).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(got.values())
    recall = overlap / sum(ref.values())
    return 2 * precision * recall / (precision + recall)


QUALITY_HOOKS: dict[str, Callable[[str, str, str], float]] = {
    "exact_match": exact_match,
    "token_f1": token_f1,
}


# --- script IO ---------------------------------------------------------------


def _script_from_rows(session_id: str, rows: list[dict]) -> SessionScript:
    rows.sort(key=lambda r: r.get("turn", 0))
    turns = [ScriptTurn(r.get("query", ""), r.get("reference"), r.get("topic"))
             for r in rows]
    return SessionScript(session_id, tuple(turns))


def parse_script_lines(lines: Sequence[str], origin: str = "<memory>") -> list[SessionScript]:
    by_session: dict[str, list[dict]] = {}
    order: list[str] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScriptParseError(f"{origin}:{lineno}: {exc}")
        if not isinstance(rec, dict) or "session_id" not in rec or "query" not in rec:
            raise ScriptParseError(f"{origin}:{lineno}: need session_id and query fields")
        sid = str(rec["session_id"])
        if sid not in by_session:
            by_session[sid] = []
            order.append(sid)
        by_session[sid].append(rec)
    if not order:
        raise ScriptParseError(f"{origin}: no turn records")
    return [_script_from_rows(sid, by_session[sid]) for sid in order]


def load_scripts(path: str | Path) -> list[SessionScript]:
    """Load scripts from one newline-delimited file or every *.ndjson /
    *.jsonl file in a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.suffix in (".ndjson", ".jsonl") and p.is_file())
        if not files:
            raise ScriptParseError(f"{path}: no .ndjson/.jsonl script files")
        scripts: list[SessionScript] = []
        for f in files:
            scripts.extend(load_scripts(f))
        return scripts
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScriptParseError(f"{path}: {exc}")
    return parse_script_lines(text.splitlines(), origin=str(path))


def save_script(script: SessionScript, path: str | Path) -> None:
    rows = []
    for i, turn in enumerate(script.turns):
        rec: dict = {"session_id": script.session_id, "turn": i, "query": turn.query}
        if turn.reference is not None:
            rec["reference"] = turn.reference
        if turn.topic is not None:
            rec["topic"] = turn.topic
        rows.append(json.dumps(rec, separators=(",", ":"), ensure_ascii=False))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def convert_topiocqa(src: str | Path, dst: str | Path) -> int:
    """Convert TopiOCQA-shaped records (Conversation_no / Turn_no /
    Question / Answer / Topic, JSON array or JSONL) into the script format.
    Returns the number of turn records written."""
    src = Path(src)
    try:
        text = src.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScriptParseError(f"{src}: {exc}")
    stripped = text.lstrip()
    try:
        if stripped.startswith("["):
            records = json.loads(text)
        else:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise ScriptParseError(f"{src}: {exc}")
    out_lines = []
    for rec in records:
        if not isinstance(rec, dict):
            raise ScriptParseError(f"{src}: expected objects, got {type(rec).__name__}")
        convo = rec.get("Conversation_no", rec.get("conversation_no"))
        turn = rec.get("Turn_no", rec.get("turn_no"))
        query = rec.get("Question", rec.get("question"))
        if convo is None or query is None:
            raise ScriptParseError(f"{src}: record missing Conversation_no/Question")
        out: dict = {
            "session_id": f"topiocqa-{convo}",
            "turn": int(turn) if turn is not None else len(out_lines),
            "query": str(query),
        }
        answer = rec.get("Answer", rec.get("answer"))
        if answer is not None:
            out["reference"] = str(answer)
        topic = rec.get("Topic", rec.get("topic"))
        if topic is not None:
            out["topic"] = str(topic)
        out_lines.append(json.dumps(out, separators=(",", ":"), ensure_ascii=False))
    Path(dst).write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    return len(out_lines)


# --- per-mode turn runners ---------------------------------------------------


def _bare_direct(session: Session, query: str, clock: Clock) -> FastResponse:
    """One fast-model answer with no KB content (baseline and fallback)."""
    lines = [f"QUESTION: {query}"]
    if session.history:
        lines.append("HISTORY:")
        for q, r in session.history:
            lines.append(f"Q: {q}")
            lines.append(f"A: {r}")
    completion = session.fast_model.complete(ChatRequest(messages=(
        ("system", prompts.DIRECT_SYSTEM),
        ("user", "\n".join(lines)),
    )))
    return FastResponse(completion.text, ResponseMode.DIRECT, (), completion.latency_ms)


def _finish_turn(session: Session, query: str, response: FastResponse,
                 started: float, clock: Clock, kb_version_used: int = 0,
                 task: str | None = None) -> dict:
    session.history.append((query, response.text))
    turn_index = session.turn_index
    session.turn_index += 1
    latency = clock.now_ms() - started
    session.emit(ev.TURN_COMPLETED, latency_ms=latency)
    record = {
        "turn_index": turn_index,
        "query": query,
        "response": {
            "text": response.text,
            "mode": response.mode.value,
            "grounded_on": list(response.grounded_on),
            "model_latency_ms": response.model_latency_ms,
        },
        "kb_version_used": kb_version_used,
        "turn_latency_ms": latency,
    }
    if task is not None:
        record["task"] = task
    return record


def _direct_turn(session: Session, query: str, clock: Clock) -> dict:
    started = clock.now_ms()
    session.emit(ev.TURN_STARTED, turn_index=session.turn_index, query=query)
    try:
        response = _bare_direct(session, query, clock)
    except ModelBackendFailure:
        response = FastResponse(prompts.APOLOGY_TEXT, ResponseMode.TRANSITION, (), 0.0)
    session.emit(ev.MODE_CHOSEN, mode=response.mode.value)
    return _finish_turn(session, query, response, started, clock)


def _sync_turn(session: Session, query: str, clock: Clock) -> dict:
    """Blocking baseline: refine first, answer after. The whole pipeline
    sits inside the user's wait."""
    started = clock.now_ms()
    session.emit(ev.TURN_STARTED, turn_index=session.turn_index, query=query)
    window = session.history[-session.evaluator.config.history_window:]
    reformulated = reformulate(query, window)
    with session.lock:
        session._task_counter += 1
        task_id = f"{session.session_id}/t{session._task_counter:03d}"
    task = RefinementTask(
        task_id=task_id,
        session_id=session.session_id,
        reformulated_query=reformulated,
        created_at=clock.now_ms(),
        deadline_ms=session.deadline_ms,
    )
    session.tasks[task_id] = task
    session.emit(ev.TASK_SPAWNED, task_id=task_id, topic_key=task.topic_key)

    def notify(t: RefinementTask) -> None:
        session.emit(ev.TASK_STATE_CHANGED, task_id=t.task_id, state=t.state.value)

    payload = run_task(task, session.tools, session.heavy_model, clock,
                       scorer=session.scorer, max_evidence=session.max_evidence,
                       on_state=notify)
    if payload is not None:
        version = kb_commit(session.kb, payload)
        task.transition(TaskState.COMMITTED, clock.now_ms())
        session.emit(ev.TASK_STATE_CHANGED, task_id=task.task_id, state=task.state.value)
        session.emit(ev.KB_COMMITTED, version=version, n_entries=len(payload))

    snapshot = kb_snapshot(session.kb)
    try:
        hits = kb_query(snapshot, reformulated, session.fastline_config.top_k,
                        scorer=session.scorer)
        if hits:
            response = respond_direct(query, session.history, hits,
                                      session.fast_model, session.fastline_config)
        else:
            response = _bare_direct(session, query, clock)
    except ModelBackendFailure:
        response = FastResponse(prompts.APOLOGY_TEXT, ResponseMode.TRANSITION, (), 0.0)
    session.emit(ev.MODE_CHOSEN, mode=response.mode.value)
    return _finish_turn(session, query, response, started, clock,
                        kb_version_used=snapshot.version, task=task_id)


def _pmfr_turn(session: Session, query: str, clock: Clock) -> dict:
    return handle_turn(session, query, clock).to_record()


_TURN_RUNNERS = {
    "DIRECT": _direct_turn,
    "SYNC_AGENT": _sync_turn,
    "PMFR": _pmfr_turn,
}


def replay(script: SessionScript, cfg: AppConfig, clock: Clock | None = None,
           config_name: str | None = None,
           session: Session | None = None) -> tuple[list[dict], LatencyReport, list[Event]]:
    """Run one scripted session under the configured mode. Returns the
    transcript (one record per turn), the latency report, and the event log."""
    clock = clock or VirtualClock()
    runner = _TURN_RUNNERS[cfg.run.mode]
    if session is None:
        session = build_session(cfg, script.session_id, clock)
    transcript = []
    for i, turn in enumerate(script.turns):
        if i > 0:
            clock.sleep(cfg.run.inter_turn_ms)
        transcript.append(runner(session, turn.query, clock))
    per_turn = tuple(t["turn_latency_ms"] for t in transcript)
    mean, p95 = metrics(per_turn)
    report = LatencyReport(per_turn, mean, p95, config_name or cfg.run.mode)
    return transcript, report, session.events.records


# --- comparison --------------------------------------------------------------


def _cost_per_turn(events: list[Event], n_turns: int) -> float:
    """Model calls per turn: one fast call per turn plus one heavy call per
    task that reached its reasoning stage."""
    heavy = sum(1 for e in events
                if e.kind == ev.TASK_STATE_CHANGED and e.data.get("state") == "REASONING")
    return (n_turns + heavy) / n_turns


def compare(scripts: Sequence[SessionScript], configs: Sequence[tuple[str, AppConfig]],
            clock_factory: Callable[[], Clock] = VirtualClock) -> dict:
    """Replay every script under every config (fresh clock per session) and
    tabulate mean/p95 plus pairwise mean-latency reductions."""
    if not scripts:
        raise ScriptParseError("no scripts to compare")
    if len(configs) < 2:
        raise ValueError("compare needs at least two configs")
    rows = []
    for name, cfg in configs:
        per_turn: list[float] = []
        qualities: list[float] = []
        costs: list[float] = []
        hook = QUALITY_HOOKS.get(cfg.harness.quality)
        for script in scripts:
            transcript, report, events = replay(script, cfg, clock_factory(), config_name=name)
            per_turn.extend(report.per_turn_ms)
            if hook is not None:
                costs.append(_cost_per_turn(events, len(transcript)))
                for turn, rec in zip(script.turns, transcript):
                    if turn.reference is not None:
                        qualities.append(hook(turn.query, turn.reference, rec["response"]["text"]))
        mean, p95 = metrics(per_turn)
        row = {"name": name, "mode": cfg.run.mode, "n_turns": len(per_turn),
               "mean_ms": mean, "p95_ms": p95}
        if hook is not None and qualities:
            w = ObjectiveWeights(cfg.harness.alpha, cfg.harness.beta, cfg.harness.gamma)
            row["quality"] = sum(qualities) / len(qualities)
            row["cost_per_turn"] = sum(costs) / len(costs)
            row["objective"] = objective(row["quality"], mean, row["cost_per_turn"], w)
        rows.append(row)
    reductions = []
    for a in rows:
        for b in rows:
            if a is b:
                continue
            reductions.append({
                "from": a["name"],
                "to": b["name"],
                "reduction_pct": 100.0 * (a["mean_ms"] - b["mean_ms"]) / a["mean_ms"],
            })
    return {"configs": rows, "reductions": reductions}


def render_comparison(report: dict) -> str:
    lines = [f"{'config':<16} {'mode':<11} {'turns':>6} {'mean_ms':>12} {'p95_ms':>12}"]
    for row in report["configs"]:
        lines.append(f"{row['name']:<16} {row['mode']:<11} {row['n_turns']:>6} "
                     f"{row['mean_ms']:>12.1f} {row['p95_ms']:>12.1f}")
        if "objective" in row:
            lines.append(f"{'':<16} quality={row['quality']:.3f} "
                         f"cost/turn={row['cost_per_turn']:.2f} objective={row['objective']:.3f}")
    lines.append("")
    for red in report["reductions"]:
        lines.append(f"mean latency {red['from']} → {red['to']}: "
                     f"{red['reduction_pct']:+.2f}% reduction")
    return "\n".join(lines) + "\n"
