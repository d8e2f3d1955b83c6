"""TOML configuration: parsing, validation, and wiring into live objects.

Validation is strict: unknown keys and out-of-range values abort with the
offending key named, because silent config drift is how "deterministic"
replays stop being deterministic.
"""

from __future__ import annotations

import hashlib
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .clock import Clock
from .errors import ConfigError
from .evaluator import Evaluator, EvaluatorConfig, _load_chitchat_patterns
from .events import EventLog
from .fastline import FastlineConfig
from .gateway import (
    ConstantLatency,
    HTTPChatModel,
    LognormalLatency,
    MockChatModel,
    ModelProfile,
    script_from_prompts,
)
from .kb import KnowledgeBase, load_kb
from .orchestrator import Session
from .slowline import DEFAULT_DEADLINE_MS, DEFAULT_MAX_EVIDENCE, CorpusTool, FailingTool

MODES = ("DIRECT", "SYNC_AGENT", "PMFR")


@dataclass
class RunConfig:
    mode: str = "PMFR"
    inter_turn_ms: float = 10_000.0
    seed: int = 42
    kb_policy: str = "empty"  # "empty" or a path to a KB file


@dataclass
class ToolSpec:
    kind: str
    path: str = ""
    name: str = ""


@dataclass
class SlowlineConfig:
    max_evidence: int = DEFAULT_MAX_EVIDENCE
    deadline_ms: float = DEFAULT_DEADLINE_MS
    tools: list[ToolSpec] = field(default_factory=list)


@dataclass
class ModelConfig:
    name: str = "mock"
    backend: str = "mock"  # "mock" | "http"
    behavior: str = "dialogue"
    template: str = ""
    script: dict[str, str] = field(default_factory=dict)
    latency: str = "constant"  # "constant" | "lognormal"
    ms: float = 0.0
    mean_ms: float | None = None
    p95_ms: float | None = None
    mu: float | None = None
    sigma: float | None = None


@dataclass
class GatewayConfig:
    endpoint: str = ""
    timeout_ms: float = 30_000.0
    api_key_env: str = ""


@dataclass
class HarnessConfig:
    quality: str = "none"  # "none" | "exact_match" | "token_f1"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8750
    persist_dir: str = ""
    event_buffer: int = 256
    max_sessions: int = 64


@dataclass
class AppConfig:
    run: RunConfig = field(default_factory=RunConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    fastline: FastlineConfig = field(default_factory=FastlineConfig)
    slowline: SlowlineConfig = field(default_factory=SlowlineConfig)
    fast: ModelConfig = field(default_factory=lambda: ModelConfig(name="fast"))
    heavy: ModelConfig = field(default_factory=lambda: ModelConfig(name="heavy"))
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    base_dir: Path = field(default_factory=Path.cwd)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _take(section: dict, where: str, key: str, kind, default):
    if key not in section:
        return default
    value = section.pop(key)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"[{where}] {key}: expected {kind.__name__}, got {value!r}")
    return value


def _reject_unknown(section: dict, where: str) -> None:
    if section:
        raise ConfigError(f"[{where}] unknown key: {sorted(section)[0]}")


def _parse_run(raw: dict) -> RunConfig:
    cfg = RunConfig(
        mode=_take(raw, "run", "mode", str, "PMFR"),
        inter_turn_ms=_take(raw, "run", "inter_turn_ms", float, 10_000.0),
        seed=_take(raw, "run", "seed", int, 42),
        kb_policy=_take(raw, "run", "kb_policy", str, "empty"),
    )
    _reject_unknown(raw, "run")
    if cfg.mode not in MODES:
        raise ConfigError(f"[run] mode: must be one of {MODES}, got {cfg.mode!r}")
    if cfg.inter_turn_ms < 0:
        raise ConfigError("[run] inter_turn_ms: must be ≥ 0")
    return cfg


def _parse_evaluator(raw: dict, base_dir: Path) -> EvaluatorConfig:
    patterns = raw.pop("chitchat_patterns", None)
    if isinstance(patterns, str):
        # A path: one regex per line, #-comments skipped.
        path = Path(patterns) if Path(patterns).is_absolute() else base_dir / patterns
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"[evaluator] chitchat_patterns: {exc}")
        patterns = [ln.strip() for ln in text.splitlines()
                    if ln.strip() and not ln.startswith("#")]
    elif patterns is not None and not (
        isinstance(patterns, list) and all(isinstance(p, str) for p in patterns)
    ):
        raise ConfigError("[evaluator] chitchat_patterns: expected a file path or list of strings")
    cfg = EvaluatorConfig(
        backend=_take(raw, "evaluator", "backend", str, "heuristic"),
        threshold=_take(raw, "evaluator", "threshold", float, 0.5),
        history_window=_take(raw, "evaluator", "history_window", int, 5),
        chitchat_patterns=tuple(patterns) if patterns is not None else _load_chitchat_patterns(),
    )
    _reject_unknown(raw, "evaluator")
    if cfg.backend not in ("heuristic", "model"):
        raise ConfigError(f"[evaluator] backend: unknown value {cfg.backend!r}")
    if not (0.0 <= cfg.threshold <= 1.0):
        raise ConfigError("[evaluator] threshold: must be in [0, 1]")
    if cfg.history_window < 0:
        raise ConfigError("[evaluator] history_window: must be ≥ 0")
    return cfg


def _parse_fastline(raw: dict) -> FastlineConfig:
    cfg = FastlineConfig(
        context_budget_tokens=_take(raw, "fastline", "context_budget_tokens", int, 1024),
        transition_template=_take(raw, "fastline", "transition_template", str,
                                  FastlineConfig().transition_template),
        top_k=_take(raw, "fastline", "top_k", int, 3),
    )
    _reject_unknown(raw, "fastline")
    return cfg


def _parse_tools(rows: Any) -> list[ToolSpec]:
    if not isinstance(rows, list):
        raise ConfigError("[slowline.tools] expected an array of tables")
    specs = []
    for i, row in enumerate(rows):
        where = f"slowline.tools[{i}]"
        if not isinstance(row, dict):
            raise ConfigError(f"[{where}] expected a table")
        kind = _take(row, where, "kind", str, "")
        spec = ToolSpec(
            kind=kind,
            path=_take(row, where, "path", str, ""),
            name=_take(row, where, "name", str, kind or "tool"),
        )
        _reject_unknown(row, where)
        if spec.kind not in ("corpus", "failing"):
            raise ConfigError(f"[{where}] kind: unknown tool kind {spec.kind!r}")
        if spec.kind == "corpus" and not spec.path:
            raise ConfigError(f"[{where}] path: corpus tool needs a path")
        specs.append(spec)
    return specs


def _parse_slowline(raw: dict) -> SlowlineConfig:
    tools = _parse_tools(raw.pop("tools", []))
    cfg = SlowlineConfig(
        max_evidence=_take(raw, "slowline", "max_evidence", int, DEFAULT_MAX_EVIDENCE),
        deadline_ms=_take(raw, "slowline", "deadline_ms", float, DEFAULT_DEADLINE_MS),
        tools=tools,
    )
    _reject_unknown(raw, "slowline")
    if cfg.max_evidence < 1:
        raise ConfigError("[slowline] max_evidence: must be ≥ 1")
    if cfg.deadline_ms < 0:
        raise ConfigError("[slowline] deadline_ms: must be ≥ 0")
    return cfg


def _parse_model(raw: dict, where: str, default_name: str) -> ModelConfig:
    script = raw.pop("script", {})
    if not (isinstance(script, dict) and all(
            isinstance(k, str) and isinstance(v, str) for k, v in script.items())):
        raise ConfigError(f"[{where}] script: expected a table of prompt → reply strings")
    temperature = _take(raw, where, "temperature", float, 0.0)
    if temperature != 0.0:
        raise ConfigError(f"[{where}] temperature: must be 0 (deterministic decoding)")
    cfg = ModelConfig(
        name=_take(raw, where, "name", str, default_name),
        backend=_take(raw, where, "backend", str, "mock"),
        behavior=_take(raw, where, "behavior", str, "dialogue"),
        template=_take(raw, where, "template", str, ""),
        script=dict(script),
        latency=_take(raw, where, "latency", str, "constant"),
        ms=_take(raw, where, "ms", float, 0.0),
        mean_ms=_take(raw, where, "mean_ms", float, None),
        p95_ms=_take(raw, where, "p95_ms", float, None),
        mu=_take(raw, where, "mu", float, None),
        sigma=_take(raw, where, "sigma", float, None),
    )
    _reject_unknown(raw, where)
    if cfg.backend not in ("mock", "http"):
        raise ConfigError(f"[{where}] backend: unknown value {cfg.backend!r}")
    if cfg.behavior not in ("echo", "template", "scripted", "dialogue"):
        raise ConfigError(f"[{where}] behavior: unknown value {cfg.behavior!r}")
    if cfg.latency not in ("constant", "lognormal"):
        raise ConfigError(f"[{where}] latency: unknown value {cfg.latency!r}")
    if cfg.latency == "constant" and cfg.ms < 0:
        raise ConfigError(f"[{where}] ms: must be ≥ 0")
    if cfg.latency == "lognormal":
        has_fit = cfg.mean_ms is not None and cfg.p95_ms is not None
        has_params = cfg.mu is not None and cfg.sigma is not None
        if not (has_fit or has_params):
            raise ConfigError(f"[{where}] lognormal latency needs mean_ms+p95_ms or mu+sigma")
    return cfg


def _parse_gateway(raw: dict) -> GatewayConfig:
    cfg = GatewayConfig(
        endpoint=_take(raw, "gateway", "endpoint", str, ""),
        timeout_ms=_take(raw, "gateway", "timeout_ms", float, 30_000.0),
        api_key_env=_take(raw, "gateway", "api_key_env", str, ""),
    )
    _reject_unknown(raw, "gateway")
    if cfg.timeout_ms <= 0:
        raise ConfigError("[gateway] timeout_ms: must be > 0")
    return cfg


def _parse_harness(raw: dict) -> HarnessConfig:
    cfg = HarnessConfig(
        quality=_take(raw, "harness", "quality", str, "none"),
        alpha=_take(raw, "harness", "alpha", float, 1.0),
        beta=_take(raw, "harness", "beta", float, 1.0),
        gamma=_take(raw, "harness", "gamma", float, 1.0),
    )
    _reject_unknown(raw, "harness")
    if cfg.quality not in ("none", "exact_match", "token_f1"):
        raise ConfigError(f"[harness] quality: unknown value {cfg.quality!r}")
    for key in ("alpha", "beta", "gamma"):
        if getattr(cfg, key) < 0:
            raise ConfigError(f"[harness] {key}: must be ≥ 0")
    return cfg


def _parse_service(raw: dict) -> ServiceConfig:
    cfg = ServiceConfig(
        host=_take(raw, "service", "host", str, "127.0.0.1"),
        port=_take(raw, "service", "port", int, 8750),
        persist_dir=_take(raw, "service", "persist_dir", str, ""),
        event_buffer=_take(raw, "service", "event_buffer", int, 256),
        max_sessions=_take(raw, "service", "max_sessions", int, 64),
    )
    _reject_unknown(raw, "service")
    if not (0 < cfg.port < 65_536):
        raise ConfigError("[service] port: must be in (0, 65536)")
    if cfg.event_buffer < 1:
        raise ConfigError("[service] event_buffer: must be ≥ 1")
    if cfg.max_sessions < 1:
        raise ConfigError("[service] max_sessions: must be ≥ 1")
    return cfg


def parse_config(raw: dict, base_dir: Path | None = None) -> AppConfig:
    raw = dict(raw)
    models = raw.pop("models", {})
    if not isinstance(models, dict):
        raise ConfigError("[models] expected a table")
    models = dict(models)
    base = base_dir or Path.cwd()
    cfg = AppConfig(
        run=_parse_run(dict(raw.pop("run", {}))),
        evaluator=_parse_evaluator(dict(raw.pop("evaluator", {})), base),
        fastline=_parse_fastline(dict(raw.pop("fastline", {}))),
        slowline=_parse_slowline(dict(raw.pop("slowline", {}))),
        fast=_parse_model(dict(models.pop("fast", {})), "models.fast", "fast"),
        heavy=_parse_model(dict(models.pop("heavy", {})), "models.heavy", "heavy"),
        gateway=_parse_gateway(dict(raw.pop("gateway", {}))),
        harness=_parse_harness(dict(raw.pop("harness", {}))),
        service=_parse_service(dict(raw.pop("service", {}))),
        base_dir=base,
    )
    _reject_unknown(models, "models")
    _reject_unknown(raw, "(top level)")
    return cfg


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    return parse_config(raw, base_dir=path.resolve().parent)


def session_seed(seed: int, session_id: str, salt: str) -> int:
    """Stable per-session, per-role RNG seed (``hash()`` is salted per
    process, so it cannot be used here)."""
    digest = hashlib.sha256(f"{seed}:{session_id}:{salt}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def build_latency(mc: ModelConfig, seed: int):
    if mc.latency == "constant":
        return ConstantLatency(mc.ms)
    if mc.mu is not None and mc.sigma is not None:
        return LognormalLatency(mc.mu, mc.sigma, seed)
    return LognormalLatency.from_mean_p95(mc.mean_ms, mc.p95_ms, seed)


def build_model(mc: ModelConfig, cfg: AppConfig, clock: Clock, seed: int):
    if mc.backend == "http":
        if not cfg.gateway.endpoint:
            raise ConfigError("[gateway] endpoint: required for an http model backend")
        api_key = os.environ.get(cfg.gateway.api_key_env) if cfg.gateway.api_key_env else None
        return HTTPChatModel(cfg.gateway.endpoint, mc.name,
                             timeout_ms=cfg.gateway.timeout_ms, api_key=api_key)
    template = mc.template
    if mc.behavior in ("template", "dialogue") and not template:
        template = cfg.fastline.transition_template
    profile = ModelProfile(
        name=mc.name,
        latency=build_latency(mc, seed),
        behavior=mc.behavior,
        template=template,
        script=script_from_prompts(mc.script) if mc.script else {},
    )
    return MockChatModel(profile, clock)


def build_tools(cfg: AppConfig) -> list:
    tools = []
    for spec in cfg.slowline.tools:
        if spec.kind == "corpus":
            tools.append(CorpusTool(cfg.resolve(spec.path), name=spec.name))
        elif spec.kind == "failing":
            tools.append(FailingTool(name=spec.name))
    return tools


def build_session(cfg: AppConfig, session_id: str, clock: Clock, *,
                  events: EventLog | None = None, kb: KnowledgeBase | None = None,
                  on_commit=None) -> Session:
    """Assemble a live session from config: per-session seeded models, the
    adequacy gate, the tool registry and (optionally) a preloaded KB."""
    fast = build_model(cfg.fast, cfg, clock, session_seed(cfg.run.seed, session_id, "fast"))
    heavy = build_model(cfg.heavy, cfg, clock, session_seed(cfg.run.seed, session_id, "heavy"))
    evaluator = Evaluator(cfg.evaluator, model=fast if cfg.evaluator.backend == "model" else None)
    if kb is None:
        if cfg.run.kb_policy == "empty":
            kb = KnowledgeBase()
        else:
            kb = load_kb(cfg.resolve(cfg.run.kb_policy))
    return Session(
        session_id,
        clock=clock,
        kb=kb,
        evaluator=evaluator,
        fast_model=fast,
        heavy_model=heavy,
        tools=build_tools(cfg),
        fastline_config=cfg.fastline,
        max_evidence=cfg.slowline.max_evidence,
        deadline_ms=cfg.slowline.deadline_ms,
        events=events or EventLog(buffer_size=cfg.service.event_buffer),
        on_commit=on_commit,
    )
