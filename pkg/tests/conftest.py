"""Shared fixtures: corpus builders, config factories, mock-model helpers."""

from __future__ import annotations

from pathlib import Path

import pytest

from pmfr.clock import VirtualClock
from pmfr.config import AppConfig, parse_config
from pmfr.gateway import ConstantLatency, MockChatModel, ModelProfile
from pmfr.kb import KnowledgeBase, KnowledgeEntry, Provenance, kb_commit

CORPUS_DOCS = {
    "everest-height.txt": (
        "height of mount everest",
        "Mount Everest rises 8848 m above sea level.",
    ),
    "paris-capital.txt": (
        "capital of france",
        "Paris is the capital of France and its largest city.",
    ),
    "seine-river.txt": (
        "river through paris",
        "The Seine flows through Paris toward the English Channel.",
    ),
    "tungsten-melting.txt": (
        "melting point of tungsten",
        "Tungsten melts at 3422 degrees Celsius.",
    ),
}


def write_corpus(root: Path, docs: dict[str, tuple[str, str]] = CORPUS_DOCS) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for name, (title, body) in docs.items():
        (root / name).write_text(f"{title}\n{body}\n", encoding="utf-8")
    return root


@pytest.fixture
def corpus_dir(tmp_path: Path) -> Path:
    return write_corpus(tmp_path / "corpus")


def make_provenance(uri: str = "test:fixture", at: float = 0.0,
                    attribution: str = "fixture") -> Provenance:
    return Provenance(uri, at, attribution)


def make_entry(topic: str, synopsis: str | None = None, confidence: float = 0.8,
               entry_id: str = "prov-0") -> KnowledgeEntry:
    return KnowledgeEntry(
        entry_id=entry_id,
        topic_key=topic,
        synopsis=synopsis if synopsis is not None else topic,
        sources=(make_provenance(),),
        confidence=confidence,
    )


def seeded_kb(*entries: KnowledgeEntry) -> KnowledgeBase:
    """A KB with each entry applied in its own commit."""
    kb = KnowledgeBase()
    for entry in entries:
        kb_commit(kb, [entry])
    return kb


def _merge(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def base_raw_config(corpus_dir: Path, mode: str = "PMFR",
                    fast_ms: float = 1090.0, heavy_ms: float = 5000.0) -> dict:
    return {
        "run": {"mode": mode, "inter_turn_ms": 10000, "seed": 42},
        "slowline": {"tools": [{"kind": "corpus", "path": str(corpus_dir)}]},
        "models": {
            "fast": {"behavior": "dialogue", "latency": "constant", "ms": fast_ms},
            "heavy": {"behavior": "dialogue", "latency": "constant", "ms": heavy_ms},
        },
    }


def make_config(corpus_dir: Path, mode: str = "PMFR", fast_ms: float = 1090.0,
                heavy_ms: float = 5000.0, overrides: dict | None = None) -> AppConfig:
    raw = base_raw_config(corpus_dir, mode, fast_ms, heavy_ms)
    if overrides:
        _merge(raw, overrides)
    return parse_config(raw)


@pytest.fixture
def pmfr_config(corpus_dir: Path) -> AppConfig:
    return make_config(corpus_dir)


def mock_model(behavior: str = "echo", ms: float = 0.0, clock=None,
               template: str = "", script: dict[str, str] | None = None,
               fail: bool = False, name: str = "mock") -> MockChatModel:
    profile = ModelProfile(
        name=name,
        latency=ConstantLatency(ms),
        behavior=behavior,
        template=template,
        script=script or {},
    )
    return MockChatModel(profile, clock or VirtualClock(), fail=fail)
