"""Orchestrator event stream.

Per-session ordered records consumed by tests, the HTTP service and the web
console. Wire format is one JSON object per line with a fixed key order so
two identical replays serialize byte-identically.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable

TURN_STARTED = "TurnStarted"
ADEQUACY_ASSESSED = "AdequacyAssessed"
MODE_CHOSEN = "ModeChosen"
TASK_SPAWNED = "TaskSpawned"
TASK_STATE_CHANGED = "TaskStateChanged"
KB_COMMITTED = "KBCommitted"
TURN_COMPLETED = "TurnCompleted"


@dataclass(frozen=True)
class Event:
    kind: str
    ts_ms: float
    session_id: str
    data: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"kind": self.kind, "ts_ms": self.ts_ms, "session_id": self.session_id}
        for key in sorted(self.data):
            rec[key] = self.data[key]
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"), ensure_ascii=False)


def parse_event(line: str) -> Event:
    rec = json.loads(line)
    kind = rec.pop("kind")
    ts = rec.pop("ts_ms")
    session_id = rec.pop("session_id")
    return Event(kind=kind, ts_ms=ts, session_id=session_id, data=rec)


class EventLog:
    """Append-only event sink with a replay ring buffer and live subscribers.

    ``append`` is safe from any thread. Subscribers receive the last
    ``buffer_size`` events already emitted, then the live tail through a
    queue. Emission order equals append order.
    """

    def __init__(self, buffer_size: int = 256):
        self._lock = threading.Lock()
        self._records: list[Event] = []
        self._buffer_size = buffer_size
        self._subscribers: list[queue.SimpleQueue] = []

    def append(self, event: Event) -> None:
        with self._lock:
            self._records.append(event)
            subs = list(self._subscribers)
        for q in subs:
            q.put(event)

    def emit(self, kind: str, ts_ms: float, session_id: str, **data: Any) -> Event:
        event = Event(kind=kind, ts_ms=ts_ms, session_id=session_id, data=data)
        self.append(event)
        return event

    @property
    def records(self) -> list[Event]:
        with self._lock:
            return list(self._records)

    def subscribe(self) -> "queue.SimpleQueue[Event]":
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._lock:
            for event in self._records[-self._buffer_size :]:
                q.put(event)
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: "queue.SimpleQueue[Event]") -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def to_ndjson(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.records)


def dump_events(events: Iterable[Event]) -> str:
    return "".join(e.to_json() + "\n" for e in events)
