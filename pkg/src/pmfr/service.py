"""HTTP boundary: sessions, turns, KB state, task state, live events.

The turn endpoint is synchronous (the reply body carries the full turn
result) while refinement progress is observable on the event stream. With
a persistence directory configured, each session's KB and turn log are
flushed as they change and restored on startup.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .clock import Clock, RealClock
from .config import AppConfig, build_session
from .errors import (
    CapacityExceeded,
    EmptyInput,
    TurnInFlight,
    UnknownSession,
)
from .kb import KnowledgeBase, kb_snapshot, load_kb, save_kb
from .orchestrator import Session, handle_turn

log = logging.getLogger(__name__)

KB_FILE = "kb.ndjson"
TURNS_FILE = "turns.ndjson"


class PmfrService:
    """Session registry plus persistence; the app's endpoints delegate here."""

    def __init__(self, cfg: AppConfig, clock: Clock | None = None):
        self.cfg = cfg
        self.clock = clock or RealClock()
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()
        self.persist_root: Path | None = (
            cfg.resolve(cfg.service.persist_dir) if cfg.service.persist_dir else None
        )
        if self.persist_root is not None:
            self.persist_root.mkdir(parents=True, exist_ok=True)
            self._restore()

    # -- persistence --

    def _session_dir(self, session_id: str) -> Path | None:
        return self.persist_root / session_id if self.persist_root else None

    def _persist_kb(self, session: Session) -> None:
        d = self._session_dir(session.session_id)
        if d is not None:
            save_kb(session.kb, d / KB_FILE)

    def _append_turn(self, session: Session, record: dict) -> None:
        d = self._session_dir(session.session_id)
        if d is not None:
            with open(d / TURNS_FILE, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, separators=(",", ":"), ensure_ascii=False) + "\n")

    def _restore(self) -> None:
        for d in sorted(self.persist_root.iterdir()):
            kb_path = d / KB_FILE
            if not (d.is_dir() and kb_path.exists()):
                continue
            session = self._build(d.name, kb=load_kb(kb_path))
            turns_path = d / TURNS_FILE
            if turns_path.exists():
                for line in turns_path.read_text(encoding="utf-8").splitlines():
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    session.history.append((rec["query"], rec["response"]["text"]))
                    session.turn_index = rec["turn_index"] + 1
            self.sessions[d.name] = session
            log.info("restored session %s (kb v%d, %d turns)",
                     d.name, session.kb.version, session.turn_index)

    # -- session ops --

    def _build(self, session_id: str, kb: KnowledgeBase | None = None) -> Session:
        return build_session(self.cfg, session_id, self.clock, kb=kb,
                             on_commit=self._persist_kb)

    def create_session(self) -> str:
        with self.lock:
            if len(self.sessions) >= self.cfg.service.max_sessions:
                raise CapacityExceeded(f"at capacity ({self.cfg.service.max_sessions})")
            session_id = uuid.uuid4().hex[:12]
            self.sessions[session_id] = self._build(session_id)
        d = self._session_dir(session_id)
        if d is not None:
            d.mkdir(parents=True, exist_ok=True)
            self._persist_kb(self.sessions[session_id])
        return session_id

    def get(self, session_id: str) -> Session:
        with self.lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        return session

    def post_turn(self, session_id: str, query: str) -> dict:
        session = self.get(session_id)
        result = handle_turn(session, query)
        record = result.to_record()
        self._append_turn(session, record)
        return record

    def stream_events(self, session_id: str, limit: int | None = None):
        """Yield NDJSON event lines; with a limit, close after that many events."""
        session = self.get(session_id)
        q = session.events.subscribe()
        emitted = 0
        try:
            while limit is None or emitted < limit:
                try:
                    event = q.get(timeout=1.0)
                except queue.Empty:
                    yield "\n"  # keepalive; clients skip blank lines
                    continue
                yield event.to_json() + "\n"
                emitted += 1
        finally:
            session.events.unsubscribe(q)


class TurnIn(BaseModel):
    query: str


def create_app(cfg: AppConfig, clock: Clock | None = None) -> FastAPI:
    service = PmfrService(cfg, clock)
    app = FastAPI(title="pmfr")
    app.state.service = service
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def _get(session_id: str) -> Session:
        try:
            return service.get(session_id)
        except UnknownSession:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")

    @app.post("/sessions", status_code=201)
    def create_session():
        try:
            return {"session_id": service.create_session()}
        except CapacityExceeded as exc:
            raise HTTPException(status_code=429, detail=str(exc))

    @app.post("/sessions/{session_id}/turns")
    def post_turn(session_id: str, body: TurnIn):
        _get(session_id)
        try:
            return service.post_turn(session_id, body.query)
        except TurnInFlight:
            raise HTTPException(status_code=409, detail="a turn is already in flight")
        except EmptyInput:
            raise HTTPException(status_code=422, detail="query must be non-empty")

    @app.get("/sessions/{session_id}/events")
    def stream_events(session_id: str, limit: int | None = None):
        _get(session_id)
        return StreamingResponse(service.stream_events(session_id, limit),
                                 media_type="application/x-ndjson")

    @app.get("/sessions/{session_id}/kb", response_class=PlainTextResponse)
    def get_kb(session_id: str):
        session = _get(session_id)
        snap = kb_snapshot(session.kb)
        lines = [json.dumps({"version": snap.version}, separators=(",", ":"))]
        lines += [json.dumps(e.to_record(), separators=(",", ":"), ensure_ascii=False)
                  for e in snap.entries.values()]
        return "\n".join(lines) + "\n"

    @app.get("/sessions/{session_id}/tasks")
    def get_tasks(session_id: str):
        session = _get(session_id)
        with session.lock:
            tasks = [t.to_record() for t in session.tasks.values()]
        tasks.sort(key=lambda t: t["task_id"])
        return {"tasks": tasks}

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(service.sessions)}

    return app


def serve(cfg: AppConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(cfg), host=cfg.service.host, port=cfg.service.port,
                log_level="warning")
