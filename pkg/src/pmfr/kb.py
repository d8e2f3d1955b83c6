"""Versioned, snapshot-isolated knowledge base.

The response path reads immutable snapshots; the orchestrator is the single
writer and commits atomically via copy-on-write, so a concurrent reader
observes either none or all of a commit's entries, never a subset.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import types
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

from .errors import InvalidEntry
from .scoring import DEFAULT_SCORER, OverlapScorer


def normalize_topic(text: str) -> str:
    """Lowercase and collapse runs of whitespace. Idempotent."""
    return " ".join(text.split()).lower()


def topic_hash(topic_key: str) -> str:
    return hashlib.sha1(topic_key.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class Provenance:
    source_uri: str
    retrieved_at: float  # ms since epoch (simulated-clock origin under replay)
    attribution: str

    def __post_init__(self):
        if not self.source_uri:
            raise InvalidEntry("provenance source_uri is empty")
        # Stamps come from the session clock; simulated time is far behind
        # the wall, so "not in the future" (within scheduling slack) holds
        # for both clocks.
        if self.retrieved_at > time.time() * 1000.0 + 1000.0:
            raise InvalidEntry(f"retrieved_at {self.retrieved_at} is in the future")

    def to_record(self) -> dict:
        return {
            "source_uri": self.source_uri,
            "retrieved_at": self.retrieved_at,
            "attribution": self.attribution,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Provenance":
        return cls(rec["source_uri"], rec["retrieved_at"], rec["attribution"])


@dataclass(frozen=True)
class KnowledgeEntry:
    """A distilled synopsis with provenance and confidence.

    ``entry_id`` and ``created_at_version`` are stamped by ``kb_commit``;
    entries built upstream carry provisional values (version 0).
    """

    entry_id: str
    topic_key: str
    synopsis: str
    sources: tuple[Provenance, ...]
    confidence: float
    created_at_version: int = 0

    def __post_init__(self):
        if not self.entry_id:
            raise InvalidEntry("entry_id is empty")
        if not self.topic_key:
            raise InvalidEntry("topic_key is empty")
        if normalize_topic(self.topic_key) != self.topic_key:
            raise InvalidEntry(f"topic_key not normalized: {self.topic_key!r}")
        if not self.sources:
            raise InvalidEntry("entry has no sources")
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidEntry(f"confidence out of range: {self.confidence}")
        object.__setattr__(self, "sources", tuple(self.sources))

    def to_record(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "topic_key": self.topic_key,
            "synopsis": self.synopsis,
            "sources": [s.to_record() for s in self.sources],
            "confidence": self.confidence,
            "created_at_version": self.created_at_version,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "KnowledgeEntry":
        return cls(
            entry_id=rec["entry_id"],
            topic_key=rec["topic_key"],
            synopsis=rec["synopsis"],
            sources=tuple(Provenance.from_record(s) for s in rec["sources"]),
            confidence=rec["confidence"],
            created_at_version=rec["created_at_version"],
        )


@dataclass(frozen=True)
class KBSnapshot:
    """Immutable view of the KB at one version."""

    version: int
    entries: Mapping[str, KnowledgeEntry]


class KnowledgeBase:
    """Single-writer, many-reader store. Commits are serialized upstream.

    Entry maps are copy-on-write: a committed dict is never mutated again,
    so handing a read-only view of it to a snapshot is safe and O(1).
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._version = 0
        self._entries: dict[str, KnowledgeEntry] = {}

    @property
    def version(self) -> int:
        with self._lock:
            return self._version

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def kb_snapshot(kb: KnowledgeBase) -> KBSnapshot:
    with kb._lock:
        return KBSnapshot(version=kb._version, entries=types.MappingProxyType(kb._entries))


def kb_commit(kb: KnowledgeBase, new_entries: Iterable[KnowledgeEntry]) -> int:
    """Apply one atomic commit; returns the new version.

    Stamps each entry's id and created_at_version with the new version. An
    incoming entry replaces every existing entry sharing its topic_key whose
    confidence is ≤ the incoming one; higher-confidence entries coexist.
    Raises InvalidEntry (nothing committed) if any entry is invalid.
    """
    staged = list(new_entries)
    for e in staged:
        if not isinstance(e, KnowledgeEntry):
            raise InvalidEntry(f"not a KnowledgeEntry: {e!r}")
    with kb._lock:
        new_version = kb._version + 1
        entries = dict(kb._entries)
        for i, incoming in enumerate(staged):
            suffix = "" if i == 0 else f"-{i}"
            stamped = replace(
                incoming,
                entry_id=f"{topic_hash(incoming.topic_key)}-{new_version}{suffix}",
                created_at_version=new_version,
            )
            for eid, existing in list(entries.items()):
                if existing.topic_key == stamped.topic_key and existing.confidence <= stamped.confidence:
                    del entries[eid]
            entries[stamped.entry_id] = stamped
        kb._entries = entries
        kb._version = new_version
        return new_version


def kb_query(
    snapshot: KBSnapshot,
    query: str,
    k: int,
    scorer: OverlapScorer = DEFAULT_SCORER,
) -> list[tuple[KnowledgeEntry, float]]:
    """Top-k entries by overlap score against ``topic_key + synopsis``.

    Sorted by score descending, ties broken by lower entry_id; zero-score
    entries are omitted.
    """
    if k < 1:
        raise ValueError("k must be ≥ 1")
    entries = list(snapshot.entries.values())
    docs = [f"{e.topic_key} {e.synopsis}" for e in entries]
    scores = scorer.score_batch(query, docs)
    hits = [(e, s) for e, s in zip(entries, scores) if s > 0.0]
    hits.sort(key=lambda pair: (-pair[1], pair[0].entry_id))
    return hits[:k]


# persistence: header line {"version": N}, then one entry record per line


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    snap = kb_snapshot(kb)
    lines = [json.dumps({"version": snap.version}, separators=(",", ":"))]
    lines += [
        json.dumps(e.to_record(), separators=(",", ":"), ensure_ascii=False)
        for e in snap.entries.values()
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_kb(path: str | Path) -> KnowledgeBase:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidEntry(f"KB file {path} is empty")
    header = json.loads(lines[0])
    kb = KnowledgeBase()
    kb._version = int(header["version"])
    for ln in lines[1:]:
        entry = KnowledgeEntry.from_record(json.loads(ln))
        kb._entries[entry.entry_id] = entry
    return kb
