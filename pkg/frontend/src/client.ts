/** Thin typed client for the dreamhone service. */

import { parseSSE } from "./sse.js";
import type {
  Capabilities,
  CreateSessionRequest,
  CreateSessionResponse,
  DoneEvent,
  FrameEvent,
  PatchAck,
  PatchField,
  PatchValue,
  StreamEvent,
} from "./types.js";

/** A patch the service refused (400/409); carries the server's reason. */
export class PatchRejected extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(detail);
    this.name = "PatchRejected";
  }
}

export interface DreamService {
  capabilities(): Promise<Capabilities>;
  createSession(req: CreateSessionRequest): Promise<CreateSessionResponse>;
  patchSession(
    sessionId: string,
    patch: Partial<Record<PatchField, PatchValue>>,
  ): Promise<PatchAck>;
  streamFrames(sessionId: string, since?: number): AsyncGenerator<StreamEvent>;
}

export class HttpDreamClient implements DreamService {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async capabilities(): Promise<Capabilities> {
    const resp = await this.fetchFn(this.url("/capabilities"));
    if (!resp.ok) throw new Error(`capabilities failed: HTTP ${resp.status}`);
    return (await resp.json()) as Capabilities;
  }

  async createSession(req: CreateSessionRequest): Promise<CreateSessionResponse> {
    const resp = await this.fetchFn(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!resp.ok) {
      throw new Error(`session create failed: HTTP ${resp.status} ${await detailOf(resp)}`);
    }
    return (await resp.json()) as CreateSessionResponse;
  }

  async patchSession(
    sessionId: string,
    patch: Partial<Record<PatchField, PatchValue>>,
  ): Promise<PatchAck> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}`), {
      method: "PATCH",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(patch),
    });
    if (!resp.ok) throw new PatchRejected(resp.status, await detailOf(resp));
    return (await resp.json()) as PatchAck;
  }

  async *streamFrames(sessionId: string, since = -1): AsyncGenerator<StreamEvent> {
    const resp = await this.fetchFn(
      this.url(`/sessions/${sessionId}/frames?since=${since}`),
    );
    if (!resp.ok || resp.body === null) {
      throw new Error(`frame stream failed: HTTP ${resp.status}`);
    }
    for await (const msg of parseSSE(resp.body)) {
      if (msg.event === "frame") {
        yield { kind: "frame", frame: JSON.parse(msg.data) as FrameEvent };
      } else if (msg.event === "done") {
        yield { kind: "done", done: JSON.parse(msg.data) as DoneEvent };
        return;
      } else if (msg.event === "error") {
        const payload = JSON.parse(msg.data) as { message: string };
        yield { kind: "error", message: payload.message };
        return;
      }
    }
  }
}

async function detailOf(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { detail?: string };
    return body.detail ?? `HTTP ${resp.status}`;
  } catch {
    return `HTTP ${resp.status}`;
  }
}
