// Wire formats of the PMFR service, mirrored from its documented endpoints:
// the NDJSON event stream, turn records, the KB dump and task records.

export type Mode = "DIRECT" | "TRANSITION"

/** One line of the event stream: fixed envelope keys plus kind-specific
 * payload fields flattened alongside them. */
export interface ServiceEvent {
  kind: string
  ts_ms: number
  session_id: string
  [field: string]: unknown
}

export interface TurnRecord {
  turn_index: number
  query: string
  response: {
    text: string
    mode: Mode
    grounded_on: string[]
    model_latency_ms: number
  }
  adequacy: {
    insufficient: boolean
    top_score: number
    reformulated_query: string
  }
  kb_version_used: number
  spawned_task: string | null
  turn_latency_ms: number
}

export interface ProvenanceRecord {
  source_uri: string
  retrieved_at: number
  attribution: string
}

export interface KbEntryRecord {
  entry_id: string
  topic_key: string
  synopsis: string
  sources: ProvenanceRecord[]
  confidence: number
  created_at_version: number
}

export interface TaskRecord {
  task_id: string
  session_id: string
  topic_key: string
  reformulated_query: string
  state: string
  created_at: number
  finished_at: number | null
  deadline_ms: number
  error: string | null
}

// --- View model: a pure projection of stream events plus endpoint
// snapshots (turn replies, KB dumps). Nothing here is client-invented.

export interface RenderedTurn {
  turnIndex: number
  query: string
  startedAtMs: number | null
  badge: Mode | null
  insufficient: boolean | null
  topScore: number | null
  latencyMs: number | null
  pending: boolean
  /** From the turn reply (endpoint snapshot), not from events. */
  responseText: string | null
  groundedOn: string[]
  kbVersionUsed: number | null
  clientLatencyMs: number | null
}

export interface TaskCard {
  taskId: string
  topicKey: string
  state: string
  /** Every state observed for this card, in arrival order. */
  trail: string[]
  spawnedAtMs: number
  updatedAtMs: number
  elapsedMs: number
}

export interface KbEntryView {
  entryId: string
  topic: string
  synopsis: string
  confidence: number
  sources: ProvenanceRecord[]
  createdAtVersion: number
}

export interface KbPanel {
  /** Latest commit announced on the event stream. */
  committedVersion: number
  lastCommitEntries: number
  /** True between a commit event and the next applied KB dump. */
  stale: boolean
  /** From the most recent applied KB dump. */
  snapshotVersion: number
  entries: KbEntryView[]
}

export interface RawEventView {
  kind: string
  json: string
}

export interface ViewState {
  sessionId: string | null
  transcript: RenderedTurn[]
  /** Keyed by task_id; insertion order is spawn order. */
  tasks: Record<string, TaskCard>
  kb: KbPanel
  /** Unknown event kinds, kept verbatim rather than dropped. */
  rawEvents: RawEventView[]
  /** Malformed or orphaned inputs, shown in the diagnostics strip. */
  diagnostics: string[]
  /** Turn index currently between TurnStarted and TurnCompleted. */
  activeTurnIndex: number | null
  eventCount: number
}
