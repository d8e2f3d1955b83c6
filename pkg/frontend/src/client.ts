// Thin HTTP client for the PMFR service. Talks only to the documented
// endpoints; the event stream is NDJSON consumed line by line.

import type { TaskRecord, TurnRecord } from "./types.js"

export class ServiceError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`${status}: ${detail}`)
    this.name = "ServiceError"
  }
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown }
    if (typeof body.detail === "string") return body.detail
    return JSON.stringify(body)
  } catch {
    return res.statusText
  }
}

async function expectOk(res: Response): Promise<Response> {
  if (!res.ok) throw new ServiceError(res.status, await errorDetail(res))
  return res
}

export interface StreamHandlers {
  /** Called once per non-blank stream line, in arrival order. */
  onLine: (line: string) => void
  onClose?: () => void
  onError?: (err: unknown) => void
}

export class ServiceClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/+$/, "") + path
  }

  async health(): Promise<{ status: string; sessions: number }> {
    const res = await expectOk(await fetch(this.url("/healthz")))
    return (await res.json()) as { status: string; sessions: number }
  }

  async createSession(): Promise<string> {
    const res = await expectOk(await fetch(this.url("/sessions"), { method: "POST" }))
    const body = (await res.json()) as { session_id: string }
    return body.session_id
  }

  async postTurn(sessionId: string, query: string): Promise<TurnRecord> {
    const res = await expectOk(
      await fetch(this.url(`/sessions/${sessionId}/turns`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ query }),
      }),
    )
    return (await res.json()) as TurnRecord
  }

  async fetchKbDump(sessionId: string): Promise<string> {
    const res = await expectOk(await fetch(this.url(`/sessions/${sessionId}/kb`)))
    return await res.text()
  }

  async fetchTasks(sessionId: string): Promise<TaskRecord[]> {
    const res = await expectOk(await fetch(this.url(`/sessions/${sessionId}/tasks`)))
    const body = (await res.json()) as { tasks: TaskRecord[] }
    return body.tasks
  }

  async fetchEventLog(sessionId: string, limit: number): Promise<string[]> {
    const res = await expectOk(
      await fetch(this.url(`/sessions/${sessionId}/events?limit=${limit}`)),
    )
    const text = await res.text()
    return text.split("\n").filter(l => l.trim() !== "")
  }

  /** Open the live event stream. Returns a stop function that closes it;
   * handlers.onClose fires on both deliberate stops and server EOF. */
  streamEvents(sessionId: string, handlers: StreamHandlers, limit?: number): () => void {
    const controller = new AbortController()
    const suffix = limit === undefined ? "" : `?limit=${limit}`
    const run = async () => {
      const res = await expectOk(
        await fetch(this.url(`/sessions/${sessionId}/events${suffix}`), {
          signal: controller.signal,
        }),
      )
      if (res.body === null) throw new Error("event stream has no body")
      const reader = res.body.getReader()
      const decoder = new TextDecoder()
      let buffer = ""
      for (;;) {
        const { done, value } = await reader.read()
        if (done) break
        buffer += decoder.decode(value, { stream: true })
        for (;;) {
          const nl = buffer.indexOf("\n")
          if (nl < 0) break
          const line = buffer.slice(0, nl)
          buffer = buffer.slice(nl + 1)
          if (line.trim() !== "") handlers.onLine(line)
        }
      }
      if (buffer.trim() !== "") handlers.onLine(buffer)
    }
    run()
      .then(() => handlers.onClose?.())
      .catch(err => {
        if (controller.signal.aborted) handlers.onClose?.()
        else handlers.onError?.(err)
      })
    return () => controller.abort()
  }
}
