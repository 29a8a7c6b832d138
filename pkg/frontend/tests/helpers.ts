/** Shared test doubles: stub service, recording view, pushable stream. */

import { PatchRejected, type DreamService } from "../src/client.js";
import type { PanelView } from "../src/panel.js";
import type {
  Capabilities,
  ConnectionStatus,
  CreateSessionRequest,
  CreateSessionResponse,
  FrameEvent,
  PatchAck,
  PatchField,
  PatchValue,
  StreamEvent,
} from "../src/types.js";

export function makeCaps(): Capabilities {
  return {
    layers: ["conv1", "relu1", "pool1", "conv2", "relu2", "pool2", "conv3", "relu3"],
    modes: ["DotMax", "DistMin"],
    patchable_fields: [
      "clamp", "guide_blend", "jitter", "layer_name",
      "mode", "patch_size", "seed", "step_size",
    ],
    ranges: {
      step_size: { type: "float", min: 0.001, max: 0.5, step: 0.001 },
      guide_blend: { type: "float", min: 0, max: 1, step: 0.01 },
      jitter: { type: "int", min: 0, max: 8, step: 1 },
      patch_size: { type: "int", min: 1, max: 8, step: 1 },
      seed: { type: "int", min: 0, max: 2147483647, step: 1 },
    },
    input_dims: [3, 64, 64],
  };
}

export function frame(iteration: number, loss: number): StreamEvent {
  return {
    kind: "frame",
    frame: { iteration, loss, phase: 0, png_b64: `png${iteration}` },
  };
}

const END = Symbol("end");

export class StubService implements DreamService {
  caps = makeCaps();
  failCapabilities = false;
  failCreate = false;
  createCalls: CreateSessionRequest[] = [];
  patchCalls: { sessionId: string; patch: Record<string, PatchValue>; at: number }[] = [];
  patchResults: (PatchAck | PatchRejected)[] = [];

  private queue: (StreamEvent | typeof END)[] = [];
  private waiters: ((ev: StreamEvent | typeof END) => void)[] = [];

  push(ev: StreamEvent): void {
    const waiter = this.waiters.shift();
    if (waiter !== undefined) waiter(ev);
    else this.queue.push(ev);
  }

  /** Close the stream without a terminal event (a dropped connection). */
  end(): void {
    const waiter = this.waiters.shift();
    if (waiter !== undefined) waiter(END);
    else this.queue.push(END);
  }

  async capabilities(): Promise<Capabilities> {
    if (this.failCapabilities) throw new Error("connect ECONNREFUSED");
    return this.caps;
  }

  async createSession(req: CreateSessionRequest): Promise<CreateSessionResponse> {
    if (this.failCreate) throw new Error("HTTP 502");
    this.createCalls.push(req);
    return { session_id: "s1", run_id: "r1", total_iterations: 8 };
  }

  async patchSession(
    sessionId: string,
    patch: Partial<Record<PatchField, PatchValue>>,
  ): Promise<PatchAck> {
    this.patchCalls.push({
      sessionId,
      patch: { ...patch } as Record<string, PatchValue>,
      at: Date.now(),
    });
    const result = this.patchResults.shift() ?? { applied_at: this.patchCalls.length };
    if (result instanceof PatchRejected) throw result;
    return result;
  }

  async *streamFrames(_sessionId: string): AsyncGenerator<StreamEvent> {
    for (;;) {
      const ev =
        this.queue.shift() ??
        (await new Promise<StreamEvent | typeof END>((resolve) =>
          this.waiters.push(resolve),
        ));
      if (ev === END) return;
      yield ev;
      if (ev.kind !== "frame") return;
    }
  }
}

export class RecordingView implements PanelView {
  statuses: ConnectionStatus[] = [];
  notices: string[] = [];
  bounds: Capabilities | null = null;
  sliderSets: [PatchField, PatchValue][] = [];
  controlsEnabled: boolean[] = [];
  frames: FrameEvent[] = [];
  annotations: [number, PatchField[]][] = [];
  retryShown: boolean[] = [];

  setStatus(status: ConnectionStatus): void { this.statuses.push(status); }
  setNotice(text: string): void { this.notices.push(text); }
  setBounds(caps: Capabilities): void { this.bounds = caps; }
  setSlider(field: PatchField, value: PatchValue): void {
    this.sliderSets.push([field, value]);
  }
  setControlsEnabled(enabled: boolean): void { this.controlsEnabled.push(enabled); }
  renderFrame(f: FrameEvent): void { this.frames.push(f); }
  annotatePatch(iteration: number, fields: PatchField[]): void {
    this.annotations.push([iteration, fields]);
  }
  showRetry(show: boolean): void { this.retryShown.push(show); }

  lastStatus(): ConnectionStatus | undefined {
    return this.statuses[this.statuses.length - 1];
  }
  lastNotice(): string | undefined {
    return this.notices.filter((n) => n !== "").pop();
  }
}

/** Let queued promise callbacks run. */
export async function tick(times = 4): Promise<void> {
  for (let i = 0; i < times; i++) await Promise.resolve();
}

export function baseRequest(): CreateSessionRequest {
  return {
    source_b64: "c29tZXBuZw==",
    config: {
      layer_name: "conv2",
      iterations: 8,
      step_size: 0.05,
      guide_blend: 0,
      jitter: 2,
    },
  };
}
