"""End-to-end acceptance suite.

One test per headline property of the runtime, each standing alone:
latency reduction from decoupling, tail stability under lognormal latency,
turn-latency independence from refinement duration, exact spawn gating,
the knowledge round-trip against a component-composed oracle, brute-force
oracle equivalences, objective arithmetic, and persistence round-trips.
Everything runs on mock backends under the virtual clock.
"""

from __future__ import annotations

import json
import math
import random
import re
import threading
import time
from fractions import Fraction
from pathlib import Path

from pmfr.clock import VirtualClock
from pmfr.config import build_session, parse_config
from pmfr.fastline import respond_direct, respond_transition
from pmfr.harness import (
    LatencyReport,
    ObjectiveWeights,
    ScriptTurn,
    SessionScript,
    load_scripts,
    metrics,
    objective,
    replay,
    save_script,
)
from pmfr.kb import (
    KnowledgeBase,
    KnowledgeEntry,
    Provenance,
    kb_commit,
    kb_query,
    kb_snapshot,
    load_kb,
    normalize_topic,
    save_kb,
    topic_hash,
)
from pmfr.orchestrator import TurnResult, handle_turn
from pmfr.slowline import RefinementTask, acquire, reason, run_task, synopsize

from .conftest import base_raw_config

FIXTURE_CORPUS = Path(__file__).resolve().parent.parent / "fixtures" / "corpus"

# One query per fixture document; every query shares tokens with its passage
# so the acquisition stage always finds evidence for it.
CORPUS_QUERIES = [
    "What is the height of Mount Everest?",
    "What is the melting point of tungsten?",
    "What is the capital of France?",
    "Which river flows through Paris?",
    "What is the depth of the Mariana Trench?",
    "What is the origin of coffee?",
    "What is the length of a marathon?",
    "When was Python first released?",
]


def fixture_config(mode: str, fast_ms: float = 1090.0, heavy_ms: float = 23375.0):
    raw = base_raw_config(FIXTURE_CORPUS, mode, fast_ms, heavy_ms)
    # leave room for the slowest profile in the sweep (default is 60 s)
    raw["slowline"]["deadline_ms"] = 120_000.0
    return parse_config(raw)


def lognormal_config(mode: str):
    raw = base_raw_config(FIXTURE_CORPUS, mode)
    raw["models"]["fast"] = {"behavior": "dialogue", "latency": "lognormal",
                             "mean_ms": 1090.0, "p95_ms": 1810.0}
    raw["models"]["heavy"] = {"behavior": "dialogue", "latency": "lognormal",
                              "mean_ms": 23375.0, "p95_ms": 49443.0}
    return parse_config(raw)


def rotation_scripts(prefix: str, n_sessions: int, n_turns: int) -> list[SessionScript]:
    """Sessions cycling through the corpus topics; turns past the first full
    cycle revisit topics whose refinements have long since committed, so each
    session mixes KB-miss and KB-hit turns."""
    scripts = []
    for i in range(n_sessions):
        turns = tuple(ScriptTurn(CORPUS_QUERIES[(i + j) % len(CORPUS_QUERIES)])
                      for j in range(n_turns))
        scripts.append(SessionScript(session_id=f"{prefix}-{i:02d}", turns=turns))
    return scripts


def pooled_replay(scripts, cfg) -> tuple[list[dict], list[float], list[dict]]:
    transcripts, per_turn, reports = [], [], []
    for script in scripts:
        transcript, report, _ = replay(script, cfg, VirtualClock())
        transcripts.extend(transcript)
        per_turn.extend(report.per_turn_ms)
        reports.append(report.to_record())
    return transcripts, per_turn, reports


def test_decoupling_cuts_mean_turn_latency_by_at_least_95_percent():
    started = time.monotonic()
    scripts = rotation_scripts("mix", 20, 10)

    pmfr_rows, pmfr_turns, _ = pooled_replay(scripts, fixture_config("PMFR"))
    sync_rows, sync_turns, _ = pooled_replay(scripts, fixture_config("SYNC_AGENT"))

    assert len(pmfr_turns) == len(sync_turns) == 200
    # the sessions genuinely mix hits and misses
    modes = {r["response"]["mode"] for r in pmfr_rows}
    assert modes == {"TRANSITION", "DIRECT"}

    pmfr_mean, _ = metrics(pmfr_turns)
    sync_mean, _ = metrics(sync_turns)
    assert abs(pmfr_mean - 1090.0) <= 60.0
    # every coupled turn waits on the full refinement pipeline
    assert min(sync_turns) >= 23375.0
    assert sync_mean >= 23375.0

    reduction = 100.0 * (sync_mean - pmfr_mean) / sync_mean
    assert reduction >= 95.0
    assert time.monotonic() - started < 10.0


def test_seeded_tail_ratios_match_the_fitted_latency_profiles():
    scripts = rotation_scripts("tail", 50, 10)

    def run(mode: str) -> tuple[float, bytes]:
        _, per_turn, reports = pooled_replay(scripts, lognormal_config(mode))
        assert len(per_turn) == 500
        mean, p95 = metrics(per_turn)
        return p95 / mean, json.dumps(reports, sort_keys=True).encode()

    pmfr_ratio, pmfr_bytes = run("PMFR")
    sync_ratio, sync_bytes = run("SYNC_AGENT")
    assert 1.5 <= pmfr_ratio <= 1.9
    assert 1.9 <= sync_ratio <= 2.3

    # same seed, second pass: byte-identical reports
    pmfr_ratio_2, pmfr_bytes_2 = run("PMFR")
    sync_ratio_2, sync_bytes_2 = run("SYNC_AGENT")
    assert (pmfr_ratio_2, sync_ratio_2) == (pmfr_ratio, sync_ratio)
    assert pmfr_bytes_2 == pmfr_bytes
    assert sync_bytes_2 == sync_bytes


def test_turn_latency_is_independent_of_refinement_duration():
    # one refinement topic up front, small talk after: exactly one task whose
    # commit turn depends only on how long the heavy stage takes
    turns = (ScriptTurn("What is the height of Mount Everest?"),) + tuple(
        ScriptTurn("hello!") for _ in range(7))
    script = SessionScript(session_id="sweep", turns=turns)

    latency_lists = []
    commit_turns = []
    for heavy_ms in (5000.0, 20000.0, 60000.0):
        cfg = fixture_config("PMFR", heavy_ms=heavy_ms)
        _, report, events = replay(script, cfg, VirtualClock())
        latency_lists.append(list(report.per_turn_ms))
        turns_started = 0
        committed_at = None
        for event in events:
            if event.kind == "TurnStarted":
                turns_started += 1
            elif event.kind == "KBCommitted":
                committed_at = turns_started
        commit_turns.append(committed_at)

    assert latency_lists[0] == latency_lists[1] == latency_lists[2]
    # 5 s lands in the first gap; 20 s spans one extra turn; 60 s spans five
    assert commit_turns == [2, 3, 7]


def test_tasks_spawn_exactly_on_insufficient_turns_minus_inflight_duplicates():
    rng = random.Random(20240815)
    pool = CORPUS_QUERIES + [
        "hello!", "hello there!", "hello again!",
        "How tall is it?", "How deep is it?",
        "zzqx glorp wibble?", "What about the quark flux capacitor?",
    ]
    script = SessionScript(
        session_id="fuzz-1",
        turns=tuple(ScriptTurn(rng.choice(pool)) for _ in range(200)),
    )
    # heavy stage spans ~2.3 inter-turn gaps, so close same-topic repeats
    # must be suppressed while the first task is still in flight
    cfg = fixture_config("PMFR", heavy_ms=25000.0)
    transcript, _, events = replay(script, cfg, VirtualClock())

    by_index = {rec["turn_index"]: rec for rec in transcript}
    live: dict[str, str] = {}
    topic_of: dict[str, str] = {}
    expected_spawn_turns: list[int] = []
    actual_spawn_turns: list[int] = []
    suppressed_turns: list[int] = []
    current = -1
    for event in events:
        if event.kind == "TurnStarted":
            current = event.data["turn_index"]
        elif event.kind == "AdequacyAssessed" and event.data["insufficient"]:
            topic = normalize_topic(by_index[current]["adequacy"]["reformulated_query"])
            if topic in live:
                suppressed_turns.append(current)
            else:
                expected_spawn_turns.append(current)
        elif event.kind == "TaskSpawned":
            actual_spawn_turns.append(current)
            live[event.data["topic_key"]] = event.data["task_id"]
            topic_of[event.data["task_id"]] = event.data["topic_key"]
        elif event.kind == "TaskStateChanged" and event.data["state"] in (
                "COMMITTED", "FAILED", "TIMED_OUT"):
            topic = topic_of.get(event.data["task_id"])
            if topic is not None and live.get(topic) == event.data["task_id"]:
                del live[topic]

    assert actual_spawn_turns == expected_spawn_turns
    # record-level agreement: a task id on exactly the spawning turns
    recorded = [rec["turn_index"] for rec in transcript if rec["spawned_task"]]
    assert recorded == expected_spawn_turns
    for turn_index in suppressed_turns:
        assert by_index[turn_index]["adequacy"]["insufficient"] is True
        assert by_index[turn_index]["spawned_task"] is None
    # the fuzz actually exercised every branch
    assert suppressed_turns
    sufficient = [r for r in transcript if not r["adequacy"]["insufficient"]]
    assert sufficient and expected_spawn_turns


def test_three_turn_round_trip_matches_a_composed_oracle(corpus_dir):
    q1 = "What is the height of Mount Everest?"
    q2 = "What is the height of Mount Everest?"
    q3 = "How tall is it?"
    cfg = parse_config(base_raw_config(corpus_dir, "PMFR", 1090.0, 5000.0))
    script = SessionScript(session_id="oracle-s",
                           turns=(ScriptTurn(q1), ScriptTurn(q2), ScriptTurn(q3)))
    transcript, _, events = replay(script, cfg, VirtualClock())

    # compose the expectation from the components, never from the engine
    oc = VirtualClock()
    oracle = build_session(cfg, "oracle-s", oc)
    history: list[tuple[str, str]] = []

    sig1 = oracle.evaluator.assess(q1, history, kb_snapshot(oracle.kb))
    resp1 = respond_transition(q1, history, sig1.reformulated_query,
                               oracle.fast_model, oracle.fastline_config)
    expected1 = TurnResult(0, q1, resp1, sig1, 0, "oracle-s/t001",
                           resp1.model_latency_ms).to_record()
    history.append((q1, resp1.text))

    topic = normalize_topic(sig1.reformulated_query)
    task = RefinementTask(task_id="oracle-s/t001", session_id="oracle-s",
                          reformulated_query=sig1.reformulated_query,
                          topic_key=topic, created_at=oc.now_ms(),
                          deadline_ms=oracle.deadline_ms)
    payload = run_task(task, oracle.tools, oracle.heavy_model, oc,
                       scorer=oracle.scorer, max_evidence=oracle.max_evidence)
    assert kb_commit(oracle.kb, payload) == 1

    snap1 = kb_snapshot(oracle.kb)
    sig2 = oracle.evaluator.assess(q2, history, snap1)
    hits2 = kb_query(snap1, sig2.reformulated_query,
                     oracle.fastline_config.top_k, scorer=oracle.scorer)
    resp2 = respond_direct(q2, history, hits2, oracle.fast_model,
                           oracle.fastline_config)
    expected2 = TurnResult(1, q2, resp2, sig2, 1, None,
                           resp2.model_latency_ms).to_record()
    history.append((q2, resp2.text))

    sig3 = oracle.evaluator.assess(q3, history, snap1)
    hits3 = kb_query(snap1, sig3.reformulated_query,
                     oracle.fastline_config.top_k, scorer=oracle.scorer)
    resp3 = respond_direct(q3, history, hits3, oracle.fast_model,
                           oracle.fastline_config)
    expected3 = TurnResult(2, q3, resp3, sig3, 1, None,
                           resp3.model_latency_ms).to_record()

    assert transcript == [expected1, expected2, expected3]
    # the second turn really grounds on the committed entry
    assert transcript[1]["response"]["mode"] == "DIRECT"
    assert transcript[1]["response"]["grounded_on"] == [f"{topic_hash(topic)}-1"]
    assert sig3.reformulated_query == "How tall is Mount Everest?"

    committed = [e for e in events if e.kind == "KBCommitted"]
    assert [(e.data["version"], e.data["n_entries"]) for e in committed] == [(1, 1)]
    turn_starts = [e.ts_ms for e in events if e.kind == "TurnStarted"]
    done = [e for e in events if e.kind == "TaskStateChanged"
            and e.data["state"] == "SUMMARIZING"]
    assert len(done) == 1
    # the task wrapped up inside the inter-turn gap, before turn 2 began
    assert turn_starts[0] + 1090.0 < done[0].ts_ms < turn_starts[1]
    assert committed[0].ts_ms == turn_starts[1]


STOPWORDS = frozenset(
    "a an and are as at be by for from has he how in is it its of on that "
    "the to was were what when where who will with".split())


def _oracle_tokens(text: str) -> set[str]:
    return {t for t in re.findall(r"[0-9A-Za-z]+", text.lower())
            if t not in STOPWORDS}


def _oracle_score(query: str, doc: str) -> float:
    q = _oracle_tokens(query)
    if not q:
        return 0.0
    return len(q & _oracle_tokens(doc)) / len(q)


def test_component_results_match_brute_force_oracles(corpus_dir):
    # retrieval ranking vs a from-scratch scorer and sort
    rng = random.Random(99)
    vocab = ("alpha bravo charlie delta echo foxtrot golf hotel india juliet "
             "kilo lima mike november oscar papa quebec romeo sierra tango "
             "the of and is what 42 1991 8848 everest paris").split()

    def words(n): return " ".join(rng.choice(vocab) for _ in range(n))

    for _ in range(1000):
        kb = KnowledgeBase()
        for _ in range(rng.randint(0, 6)):
            batch = [KnowledgeEntry(
                entry_id="provisional",
                topic_key=normalize_topic(words(rng.randint(1, 3))),
                synopsis=words(rng.randint(2, 8)),
                sources=(Provenance("test:oracle", 0.0, "oracle"),),
                confidence=rng.uniform(0.05, 1.0),
            ) for _ in range(rng.randint(1, 4))]
            kb_commit(kb, batch)
        snapshot = kb_snapshot(kb)
        query = words(rng.randint(1, 6))
        k = rng.randint(1, 5)
        ranked = sorted(
            ((e, _oracle_score(query, f"{e.topic_key} {e.synopsis}"))
             for e in snapshot.entries.values()),
            key=lambda pair: (-pair[1], pair[0].entry_id))
        expected = [(e.entry_id, s) for e, s in ranked if s > 0.0][:k]
        got = [(e.entry_id, s) for e, s in kb_query(snapshot, query, k)]
        assert got == expected

    # latency metrics vs a sort-and-index oracle
    rng = random.Random(7)
    for _ in range(1000):
        values = [rng.uniform(0.0, 1e5) for _ in range(rng.randint(1, 200))]
        mean, p95 = metrics(values)
        ordered = sorted(values)
        rank = math.ceil(Fraction(95 * len(values), 100))
        assert mean == math.fsum(values) / len(values)
        assert p95 == ordered[rank - 1]

    # the task runner vs its own stages composed by hand, over every fixture
    cfg = parse_config(base_raw_config(FIXTURE_CORPUS, "PMFR"))
    for doc in sorted(FIXTURE_CORPUS.glob("*.txt")):
        query = doc.read_text(encoding="utf-8").splitlines()[0]
        run_session = build_session(cfg, "stage-oracle", VirtualClock())
        task = RefinementTask(task_id="stage-oracle/t001", session_id="stage-oracle",
                              reformulated_query=query,
                              topic_key=normalize_topic(query),
                              created_at=0.0, deadline_ms=run_session.deadline_ms)
        via_runner = run_task(task, run_session.tools, run_session.heavy_model,
                              run_session.clock, scorer=run_session.scorer,
                              max_evidence=run_session.max_evidence)

        stage_session = build_session(cfg, "stage-oracle", VirtualClock())
        evidence = acquire(query, stage_session.tools, scorer=stage_session.scorer,
                           max_evidence=stage_session.max_evidence,
                           clock=stage_session.clock)
        facts = reason(evidence, stage_session.heavy_model,
                       scorer=stage_session.scorer)
        assert via_runner == synopsize(facts, query), doc.name

    # commit atomicity: a snapshot loop never observes a torn batch
    kb = KnowledgeBase()
    n_batches, batch_size = 200, 3
    cumulative: list[set[str]] = [set()]
    for i in range(1, n_batches + 1):
        ids = {f"{topic_hash(f'batch {i} item {j}')}-{i}" + ("" if j == 0 else f"-{j}")
               for j in range(batch_size)}
        cumulative.append(cumulative[-1] | ids)

    def writer():
        for i in range(1, n_batches + 1):
            kb_commit(kb, [KnowledgeEntry(
                entry_id="provisional",
                topic_key=f"batch {i} item {j}",
                synopsis=f"batch {i}",
                sources=(Provenance("test:atomic", 0.0, "writer"),),
                confidence=0.5,
            ) for j in range(batch_size)])
            time.sleep(0.0002)

    thread = threading.Thread(target=writer)
    versions_seen = set()
    for iteration in range(10_000):
        if iteration == 10:
            thread.start()
        snapshot = kb_snapshot(kb)
        versions_seen.add(snapshot.version)
        assert set(snapshot.entries) == cumulative[snapshot.version]
    thread.join()
    assert len(versions_seen) > 1


def test_objective_reproduces_tagged_examples_and_is_monotone():
    quality_only = ObjectiveWeights(1.0, 0.0, 0.0)
    assert objective(0.613, 500.0, 2.0, quality_only) == -0.613
    assert objective(0.0, 0.0, 0.0, ObjectiveWeights(1.0, 1.0, 1.0)) == 0.0
    assert objective(0.620, 23375.0, 1.0, ObjectiveWeights(1.0, 1.0, 1.0)) == 23.755

    rng = random.Random(1_000)
    for _ in range(1000):
        w = ObjectiveWeights(rng.uniform(0.1, 5.0), rng.uniform(0.1, 5.0),
                             rng.uniform(0.1, 5.0))
        q, latency, cost = rng.uniform(0, 1), rng.uniform(0, 60_000), rng.uniform(0, 10)
        base = objective(q, latency, cost, w)
        assert objective(q + rng.uniform(0.1, 2.0), latency, cost, w) < base
        assert objective(q, latency + rng.uniform(100.0, 5_000.0), cost, w) > base
        assert objective(q, latency, cost + rng.uniform(0.1, 5.0), w) > base


def test_saved_kb_and_script_replay_identically(corpus_dir, tmp_path):
    cfg = parse_config(base_raw_config(corpus_dir, "PMFR", 1090.0, 5000.0))
    queries = ("What is the height of Mount Everest?", "hello!",
               "How tall is it?")

    clock = VirtualClock()
    session = build_session(cfg, "persist-1", clock)
    for query in queries:
        handle_turn(session, query, clock)
        clock.sleep(10_000)

    kb_path = tmp_path / "kb.ndjson"
    save_kb(session.kb, kb_path)
    restored = load_kb(kb_path)
    assert restored.version == session.kb.version == 1
    assert dict(kb_snapshot(restored).entries) == dict(kb_snapshot(session.kb).entries)

    script = SessionScript(session_id="persist-1",
                           turns=tuple(ScriptTurn(q) for q in queries))
    script_path = tmp_path / "session.ndjson"
    save_script(script, script_path)
    loaded = load_scripts(script_path)
    assert loaded == [script]

    first_transcript, first_report, first_events = replay(script, cfg, VirtualClock())
    second_transcript, second_report, second_events = replay(loaded[0], cfg, VirtualClock())
    assert json.dumps(second_transcript) == json.dumps(first_transcript)
    assert second_report.to_record() == first_report.to_record()
    assert [e.to_json() for e in second_events] == [e.to_json() for e in first_events]
