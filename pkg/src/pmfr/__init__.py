"""pmfr: a temporally decoupled dialogue runtime.

Fast, user-visible replies come from a lightweight response path reading a
versioned knowledge base; a background refinement pipeline keeps that base
current, gated by a per-turn adequacy signal. A virtual clock makes whole
benchmark protocols replayable deterministically in seconds.
"""

__version__ = "0.1.0"

from .clock import RealClock, VirtualClock
from .errors import PmfrError
from .evaluator import AdequacySignal, Evaluator, EvaluatorConfig, reformulate
from .fastline import FastlineConfig, FastResponse, ResponseMode
from .gateway import ChatRequest, HTTPChatModel, MockChatModel, ModelProfile
from .harness import LatencyReport, ObjectiveWeights, SessionScript, metrics, objective, replay
from .kb import (
    KBSnapshot,
    KnowledgeBase,
    KnowledgeEntry,
    Provenance,
    kb_commit,
    kb_query,
    kb_snapshot,
    load_kb,
    save_kb,
)
from .orchestrator import Session, TurnResult, drain_commits, handle_turn, spawn_refinement
from .slowline import ConsolidatedFacts, Evidence, RefinementTask, TaskState, run_task

__all__ = [
    "__version__",
    "AdequacySignal",
    "ChatRequest",
    "ConsolidatedFacts",
    "Evaluator",
    "EvaluatorConfig",
    "Evidence",
    "FastResponse",
    "FastlineConfig",
    "HTTPChatModel",
    "KBSnapshot",
    "KnowledgeBase",
    "KnowledgeEntry",
    "LatencyReport",
    "MockChatModel",
    "ModelProfile",
    "ObjectiveWeights",
    "PmfrError",
    "Provenance",
    "RealClock",
    "RefinementTask",
    "ResponseMode",
    "Session",
    "SessionScript",
    "TaskState",
    "TurnResult",
    "VirtualClock",
    "drain_commits",
    "handle_turn",
    "kb_commit",
    "kb_query",
    "kb_snapshot",
    "load_kb",
    "metrics",
    "objective",
    "reformulate",
    "replay",
    "run_task",
    "save_kb",
    "spawn_refinement",
]
