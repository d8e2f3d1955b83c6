// Operator console wiring: one ServiceClient, one event-stream subscription,
// and a full re-render of the panels after every state fold. All rendered
// numbers come from events or endpoint snapshots.

import { ServiceClient, ServiceError } from "./client.js"
import {
  INITIAL_VIEW_STATE,
  applyKbDump,
  applyTurnRecord,
  canSend,
  ingestLine,
  lastGroundedIds,
} from "./reducer.js"
import type { ViewState } from "./types.js"

let state: ViewState = INITIAL_VIEW_STATE
let client: ServiceClient | null = null
let sessionId: string | null = null
let stopStream: (() => void) | null = null
let turnInFlight = false
let kbFetchInFlight = false

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (node === null) throw new Error(`missing #${id}`)
  return node as T
}

function el(tag: string, className: string, text = ""): HTMLElement {
  const node = document.createElement(tag)
  node.className = className
  if (text !== "") node.textContent = text
  return node
}

function setStatus(text: string, isError = false): void {
  const status = byId<HTMLElement>("status")
  status.textContent = text
  status.classList.toggle("error", isError)
}

function fold(next: ViewState): void {
  state = next
  if (state.kb.stale) void refetchKb()
  render()
}

async function refetchKb(): Promise<void> {
  if (client === null || sessionId === null || kbFetchInFlight) return
  kbFetchInFlight = true
  try {
    const dump = await client.fetchKbDump(sessionId)
    fold(applyKbDump(state, dump))
  } catch (err) {
    setStatus(`KB refetch failed: ${String(err)}`, true)
  } finally {
    kbFetchInFlight = false
  }
}

async function connect(): Promise<void> {
  const baseUrl = byId<HTMLInputElement>("base-url").value.trim()
  if (baseUrl === "") return
  stopStream?.()
  client = new ServiceClient(baseUrl)
  try {
    await client.health()
    sessionId = await client.createSession()
  } catch (err) {
    setStatus(`connect failed: ${String(err)}`, true)
    return
  }
  state = INITIAL_VIEW_STATE
  setStatus(`session ${sessionId}`)
  stopStream = client.streamEvents(sessionId, {
    onLine: line => fold(ingestLine(state, line)),
    onClose: () => setStatus("event stream closed", true),
    onError: err => setStatus(`event stream error: ${String(err)}`, true),
  })
  render()
}

async function send(): Promise<void> {
  const input = byId<HTMLInputElement>("composer-input")
  const query = input.value
  if (client === null || sessionId === null || !canSend(query, turnInFlight)) return
  turnInFlight = true
  render()
  const t0 = Date.now()
  try {
    const record = await client.postTurn(sessionId, query)
    input.value = ""
    fold(applyTurnRecord(state, record, Date.now() - t0))
  } catch (err) {
    if (err instanceof ServiceError) setStatus(`turn rejected: ${err.detail}`, true)
    else setStatus(`turn failed: ${String(err)}`, true)
  } finally {
    turnInFlight = false
    render()
  }
}

function renderTranscript(): void {
  const pane = byId<HTMLElement>("transcript")
  pane.replaceChildren()
  for (const turn of state.transcript) {
    const item = el("div", "turn")
    const head = el("div", "turn-head")
    head.append(el("span", "turn-index", `#${turn.turnIndex}`))
    if (turn.badge !== null) {
      head.append(el("span", `badge ${turn.badge.toLowerCase()}`, turn.badge))
    } else if (turn.pending) {
      head.append(el("span", "badge pending", "…"))
    }
    if (turn.latencyMs !== null) {
      head.append(el("span", "latency", `${turn.latencyMs.toFixed(0)} ms`))
    }
    if (turn.clientLatencyMs !== null) {
      head.append(el("span", "latency client", `client ${turn.clientLatencyMs.toFixed(0)} ms`))
    }
    item.append(head)
    item.append(el("div", "query", turn.query))
    if (turn.responseText !== null) {
      item.append(el("div", "response", turn.responseText))
    }
    if (turn.insufficient !== null) {
      const score = turn.topScore === null ? "?" : turn.topScore.toFixed(3)
      item.append(el("div", "adequacy",
        `adequacy: ${turn.insufficient ? "insufficient" : "sufficient"} (top score ${score})`))
    }
    pane.append(item)
  }
  pane.scrollTop = pane.scrollHeight
}

function renderTasks(): void {
  const pane = byId<HTMLElement>("tasks")
  pane.replaceChildren()
  for (const card of Object.values(state.tasks)) {
    const node = el("div", `task-card state-${card.state.toLowerCase()}`)
    node.append(el("div", "task-id", card.taskId))
    node.append(el("div", "task-topic", card.topicKey))
    node.append(el("div", "task-state", `${card.state} · ${(card.elapsedMs / 1000).toFixed(1)} s`))
    node.append(el("div", "task-trail", card.trail.join(" → ")))
    pane.append(node)
  }
}

function renderKb(): void {
  const pane = byId<HTMLElement>("kb")
  pane.replaceChildren()
  const stale = state.kb.stale ? " (refreshing…)" : ""
  pane.append(el("div", "kb-version",
    `version ${state.kb.snapshotVersion}${stale} · last commit v${state.kb.committedVersion} ` +
    `(${state.kb.lastCommitEntries} entries)`))
  const grounded = lastGroundedIds(state)
  for (const entry of state.kb.entries) {
    const node = el("div", grounded.has(entry.entryId) ? "kb-entry grounded" : "kb-entry")
    node.append(el("div", "kb-topic", entry.topic))
    node.append(el("div", "kb-synopsis", entry.synopsis))
    const sources = entry.sources.map(s => s.source_uri).join(", ")
    node.append(el("div", "kb-meta",
      `confidence ${entry.confidence.toFixed(2)} · v${entry.createdAtVersion} · ${sources}`))
    pane.append(node)
  }
}

function renderDiagnostics(): void {
  const pane = byId<HTMLElement>("diagnostics")
  pane.replaceChildren()
  for (const raw of state.rawEvents) {
    pane.append(el("div", "raw-event", `unknown event ${raw.kind}: ${raw.json}`))
  }
  for (const line of state.diagnostics) {
    pane.append(el("div", "diagnostic", line))
  }
}

function render(): void {
  renderTranscript()
  renderTasks()
  renderKb()
  renderDiagnostics()
  const input = byId<HTMLInputElement>("composer-input")
  byId<HTMLButtonElement>("composer-send").disabled = !canSend(input.value, turnInFlight)
}

export function main(): void {
  byId<HTMLButtonElement>("connect-btn").addEventListener("click", () => void connect())
  byId<HTMLButtonElement>("composer-send").addEventListener("click", () => void send())
  const input = byId<HTMLInputElement>("composer-input")
  input.addEventListener("input", render)
  input.addEventListener("keydown", e => {
    if (e.key === "Enter") void send()
  })
  render()
}

if (typeof document !== "undefined") main()
