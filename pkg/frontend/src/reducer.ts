// Event-sourced view model. Every exported function is pure: it returns a
// new state and never mutates its inputs, so replaying a recorded log
// reproduces a live session's final state exactly.

import type {
  KbEntryRecord,
  KbEntryView,
  Mode,
  RenderedTurn,
  ServiceEvent,
  TaskCard,
  TurnRecord,
  ViewState,
} from "./types.js"

export const INITIAL_VIEW_STATE: ViewState = {
  sessionId: null,
  transcript: [],
  tasks: {},
  kb: {
    committedVersion: 0,
    lastCommitEntries: 0,
    stale: false,
    snapshotVersion: 0,
    entries: [],
  },
  rawEvents: [],
  diagnostics: [],
  activeTurnIndex: null,
  eventCount: 0,
}

function withDiagnostic(state: ViewState, message: string): ViewState {
  return { ...state, diagnostics: [...state.diagnostics, message] }
}

function blankTurn(turnIndex: number): RenderedTurn {
  return {
    turnIndex,
    query: "",
    startedAtMs: null,
    badge: null,
    insufficient: null,
    topScore: null,
    latencyMs: null,
    pending: false,
    responseText: null,
    groundedOn: [],
    kbVersionUsed: null,
    clientLatencyMs: null,
  }
}

/** Patch the transcript entry with the given index; null if absent. */
function patchTurn(
  state: ViewState,
  turnIndex: number,
  patch: Partial<RenderedTurn>,
): ViewState | null {
  const at = state.transcript.findIndex(t => t.turnIndex === turnIndex)
  if (at < 0) return null
  const transcript = state.transcript.slice()
  transcript[at] = { ...state.transcript[at]!, ...patch }
  return { ...state, transcript }
}

/** Patch the turn currently in flight; a diagnostic line if there is none. */
function patchActiveTurn(
  state: ViewState,
  kind: string,
  patch: Partial<RenderedTurn>,
): ViewState {
  const active = state.activeTurnIndex
  const next = active === null ? null : patchTurn(state, active, patch)
  if (next === null) {
    return withDiagnostic(state, `orphan ${kind} event (no turn in flight)`)
  }
  return next
}

function num(value: unknown): number | null {
  return typeof value === "number" && Number.isFinite(value) ? value : null
}

function str(value: unknown): string | null {
  return typeof value === "string" ? value : null
}

/** Fold one stream event into the view. Unknown kinds are kept verbatim in
 * rawEvents; fields never get invented, only copied from the event. */
export function renderEvent(state: ViewState, event: ServiceEvent): ViewState {
  const base: ViewState = {
    ...state,
    sessionId: event.session_id,
    eventCount: state.eventCount + 1,
  }
  switch (event.kind) {
    case "TurnStarted": {
      const turnIndex = num(event["turn_index"])
      const query = str(event["query"])
      if (turnIndex === null || query === null) {
        return withDiagnostic(base, `TurnStarted with malformed fields: ${JSON.stringify(event)}`)
      }
      const patch = { query, startedAtMs: event.ts_ms, pending: true }
      const merged = patchTurn(base, turnIndex, patch)
      if (merged !== null) {
        // The turn reply arrived before the stream line; fill in the rest.
        return { ...merged, activeTurnIndex: turnIndex }
      }
      return {
        ...base,
        transcript: [...base.transcript, { ...blankTurn(turnIndex), ...patch }],
        activeTurnIndex: turnIndex,
      }
    }
    case "AdequacyAssessed": {
      return patchActiveTurn(base, event.kind, {
        insufficient: event["insufficient"] === true,
        topScore: num(event["top_score"]),
      })
    }
    case "ModeChosen": {
      const mode = str(event["mode"])
      if (mode !== "DIRECT" && mode !== "TRANSITION") {
        return withDiagnostic(base, `ModeChosen with unknown mode: ${JSON.stringify(event)}`)
      }
      return patchActiveTurn(base, event.kind, { badge: mode as Mode })
    }
    case "TaskSpawned": {
      const taskId = str(event["task_id"])
      const topicKey = str(event["topic_key"])
      if (taskId === null || topicKey === null) {
        return withDiagnostic(base, `TaskSpawned with malformed fields: ${JSON.stringify(event)}`)
      }
      const card: TaskCard = {
        taskId,
        topicKey,
        state: "PENDING",
        trail: ["PENDING"],
        spawnedAtMs: event.ts_ms,
        updatedAtMs: event.ts_ms,
        elapsedMs: 0,
      }
      return { ...base, tasks: { ...base.tasks, [taskId]: card } }
    }
    case "TaskStateChanged": {
      const taskId = str(event["task_id"])
      const taskState = str(event["state"])
      const card = taskId === null ? undefined : base.tasks[taskId]
      if (taskId === null || taskState === null || card === undefined) {
        return withDiagnostic(base, `TaskStateChanged for unknown task: ${JSON.stringify(event)}`)
      }
      const updated: TaskCard = {
        ...card,
        state: taskState,
        trail: [...card.trail, taskState],
        updatedAtMs: event.ts_ms,
        elapsedMs: event.ts_ms - card.spawnedAtMs,
      }
      return { ...base, tasks: { ...base.tasks, [taskId]: updated } }
    }
    case "KBCommitted": {
      const version = num(event["version"])
      const nEntries = num(event["n_entries"])
      if (version === null || nEntries === null) {
        return withDiagnostic(base, `KBCommitted with malformed fields: ${JSON.stringify(event)}`)
      }
      return {
        ...base,
        kb: { ...base.kb, committedVersion: version, lastCommitEntries: nEntries, stale: true },
      }
    }
    case "TurnCompleted": {
      const patched = patchActiveTurn(base, event.kind, {
        latencyMs: num(event["latency_ms"]),
        pending: false,
      })
      return { ...patched, activeTurnIndex: null }
    }
    default:
      return {
        ...base,
        rawEvents: [...base.rawEvents, { kind: event.kind, json: JSON.stringify(event) }],
      }
  }
}

/** Fold one raw stream line: blank keepalives are skipped, malformed lines
 * land in the diagnostics strip, everything else goes through renderEvent. */
export function ingestLine(state: ViewState, line: string): ViewState {
  const trimmed = line.trim()
  if (trimmed === "") return state
  let parsed: unknown
  try {
    parsed = JSON.parse(trimmed)
  } catch {
    return withDiagnostic(state, `unparseable stream line: ${trimmed}`)
  }
  if (
    typeof parsed !== "object" || parsed === null || Array.isArray(parsed) ||
    typeof (parsed as Record<string, unknown>)["kind"] !== "string" ||
    typeof (parsed as Record<string, unknown>)["ts_ms"] !== "number" ||
    typeof (parsed as Record<string, unknown>)["session_id"] !== "string"
  ) {
    return withDiagnostic(state, `stream line is not an event: ${trimmed}`)
  }
  return renderEvent(state, parsed as ServiceEvent)
}

/** Fold a turn reply (endpoint snapshot). Creates the transcript entry when
 * the reply beats its TurnStarted line; merging is idempotent either way. */
export function applyTurnRecord(
  state: ViewState,
  record: TurnRecord,
  clientLatencyMs: number | null = null,
): ViewState {
  const patch: Partial<RenderedTurn> = {
    query: record.query,
    badge: record.response.mode,
    insufficient: record.adequacy.insufficient,
    topScore: record.adequacy.top_score,
    latencyMs: record.turn_latency_ms,
    responseText: record.response.text,
    groundedOn: [...record.response.grounded_on],
    kbVersionUsed: record.kb_version_used,
    clientLatencyMs,
    pending: false,
  }
  const merged = patchTurn(state, record.turn_index, patch)
  if (merged !== null) return merged
  return {
    ...state,
    transcript: [...state.transcript, { ...blankTurn(record.turn_index), ...patch }],
  }
}

/** Fold a KB dump (endpoint snapshot): a version header line followed by one
 * entry record per line. Clears the staleness flag set by KBCommitted. */
export function applyKbDump(state: ViewState, dump: string): ViewState {
  const lines = dump.split("\n").filter(l => l.trim() !== "")
  if (lines.length === 0) {
    return withDiagnostic(state, "empty KB dump")
  }
  let version: number
  const entries: KbEntryView[] = []
  try {
    const header = JSON.parse(lines[0]!) as { version: number }
    if (typeof header.version !== "number") throw new Error("missing version")
    version = header.version
    for (const line of lines.slice(1)) {
      const rec = JSON.parse(line) as KbEntryRecord
      entries.push({
        entryId: rec.entry_id,
        topic: rec.topic_key,
        synopsis: rec.synopsis,
        confidence: rec.confidence,
        sources: rec.sources,
        createdAtVersion: rec.created_at_version,
      })
    }
  } catch (err) {
    return withDiagnostic(state, `unparseable KB dump: ${String(err)}`)
  }
  return {
    ...state,
    kb: { ...state.kb, stale: false, snapshotVersion: version, entries },
  }
}

/** Grounding ids of the most recent completed DIRECT turn, for highlighting
 * the KB entries the latest answer was built from. */
export function lastGroundedIds(state: ViewState): Set<string> {
  for (let i = state.transcript.length - 1; i >= 0; i--) {
    const turn = state.transcript[i]!
    if (turn.badge === "DIRECT" && turn.groundedOn.length > 0) {
      return new Set(turn.groundedOn)
    }
  }
  return new Set()
}

/** The composer only sends non-empty input while no turn is in flight. */
export function canSend(draft: string, turnInFlight: boolean): boolean {
  return draft.trim() !== "" && !turnInFlight
}
