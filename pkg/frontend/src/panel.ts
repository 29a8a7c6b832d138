/** Panel controller: session lifecycle, stream consumption, live patches. */

import { PatchRejected, type DreamService } from "./client.js";
import { throttle, type Throttled } from "./debounce.js";
import type {
  Capabilities,
  ConnectionStatus,
  CreateSessionRequest,
  FrameEvent,
  PanelStateSnapshot,
  PatchField,
  PatchValue,
} from "./types.js";

/** Rendering surface the controller drives. Implemented over the DOM in
 * main.ts and by plain recorders in tests. */
export interface PanelView {
  setStatus(status: ConnectionStatus): void;
  setNotice(text: string): void;
  /** Populate slider bounds and the layer list from service capabilities. */
  setBounds(caps: Capabilities): void;
  setSlider(field: PatchField, value: PatchValue): void;
  setControlsEnabled(enabled: boolean): void;
  renderFrame(frame: FrameEvent): void;
  /** Mark the loss sparkline where an acked patch takes effect. */
  annotatePatch(iteration: number, fields: PatchField[]): void;
  showRetry(show: boolean): void;
}

export const PANEL_FIELDS: readonly PatchField[] = [
  "layer_name",
  "step_size",
  "guide_blend",
  "jitter",
];

// 250 ms between wire requests caps sustained patch traffic at 4/s
export const PATCH_INTERVAL_MS = 250;

type Clock = Parameters<typeof throttle>[2];

export class PanelController {
  private caps: Capabilities | null = null;
  private sessionId: string | null = null;
  private status: ConnectionStatus = "idle";
  private done = false;
  private lastIteration = -1;
  private lastLoss: number | null = null;
  private pending = 0;
  private acked: Partial<Record<PatchField, PatchValue>> = {};
  private draft: Partial<Record<PatchField, PatchValue>> = {};
  private lastParams: CreateSessionRequest | null = null;
  private streamTask: Promise<void> = Promise.resolve();
  private readonly flushThrottled: Throttled<[]>;

  constructor(
    private readonly client: DreamService,
    private readonly view: PanelView,
    opts: { patchIntervalMs?: number; clock?: Clock } = {},
  ) {
    this.flushThrottled = throttle(
      () => this.flushDraft(),
      opts.patchIntervalMs ?? PATCH_INTERVAL_MS,
      opts.clock,
    );
  }

  /** Start a session and begin rendering its stream. Never throws: an
   * unreachable service lands in a visible error state with retry. */
  async connect(params: CreateSessionRequest): Promise<void> {
    this.lastParams = params;
    this.setStatus("connecting");
    this.view.setNotice("");
    this.view.showRetry(false);
    try {
      this.caps = await this.client.capabilities();
      this.view.setBounds(this.caps);
      const created = await this.client.createSession(params);
      this.sessionId = created.session_id;
      this.done = false;
      this.lastIteration = -1;
      this.acked = {};
      if (params.config !== undefined) {
        for (const field of PANEL_FIELDS) {
          const value = params.config[field];
          if (value !== undefined) {
            this.acked[field] = value;
            this.view.setSlider(field, value);
          }
        }
      }
      this.view.setControlsEnabled(true);
      this.setStatus("streaming");
      this.streamTask = this.pumpFrames(this.sessionId);
    } catch (err) {
      this.failConnection(err);
    }
  }

  /** Reconnect with the parameters from the previous connect call. */
  async retry(): Promise<void> {
    if (this.lastParams === null) return;
    await this.connect(this.lastParams);
  }

  /** Resolves when the current frame stream has ended. */
  streamFinished(): Promise<void> {
    return this.streamTask;
  }

  /**
   * Handle a slider move. Patches are coalesced and rate-limited; each
   * wire request carries the newest value per touched field.
   */
  onSliderInput(field: PatchField, value: PatchValue): void {
    if (this.sessionId === null || this.done) {
      this.view.setNotice("session is finished; controls are frozen");
      return;
    }
    this.draft[field] = this.clampToBounds(field, value);
    this.flushThrottled();
  }

  getState(): PanelStateSnapshot {
    return {
      sessionId: this.sessionId,
      status: this.status,
      lastIteration: this.lastIteration,
      lastLoss: this.lastLoss,
      pendingPatches: this.pending,
      ackedValues: { ...this.acked },
    };
  }

  private setStatus(status: ConnectionStatus): void {
    this.status = status;
    this.view.setStatus(status);
  }

  private failConnection(err: unknown): void {
    this.sessionId = null;
    this.setStatus("error");
    this.view.setNotice(`service unreachable: ${describe(err)}`);
    this.view.setControlsEnabled(false);
    this.view.showRetry(true);
  }

  private async pumpFrames(sessionId: string): Promise<void> {
    try {
      for await (const ev of this.client.streamFrames(sessionId)) {
        if (ev.kind === "frame") {
          this.onFrame(ev.frame);
        } else if (ev.kind === "done") {
          this.finish("done", "");
          return;
        } else {
          this.finish("error", `session failed: ${ev.message}`);
          return;
        }
      }
      // stream closed without a terminal event: treat as a dropped link
      this.finish("error", "frame stream ended unexpectedly");
    } catch (err) {
      this.finish("error", `frame stream lost: ${describe(err)}`);
    }
  }

  private onFrame(frame: FrameEvent): void {
    // displayed iteration never goes backwards, even on replayed events
    if (frame.iteration <= this.lastIteration) return;
    this.lastIteration = frame.iteration;
    this.lastLoss = frame.loss;
    this.view.renderFrame(frame);
  }

  private finish(status: ConnectionStatus, notice: string): void {
    this.done = true;
    this.flushThrottled.cancel();
    this.draft = {};
    this.setStatus(status);
    if (notice !== "") this.view.setNotice(notice);
    this.view.setControlsEnabled(false);
    this.view.showRetry(status === "error");
  }

  private clampToBounds(field: PatchField, value: PatchValue): PatchValue {
    if (this.caps === null) return value;
    if (field === "layer_name") {
      return typeof value === "string" && this.caps.layers.includes(value)
        ? value
        : (this.caps.layers[0] ?? value);
    }
    const range = this.caps.ranges[field];
    if (range === undefined || typeof value !== "number") return value;
    return Math.min(range.max, Math.max(range.min, value));
  }

  private flushDraft(): void {
    const sessionId = this.sessionId;
    const patch = this.draft;
    this.draft = {};
    const fields = Object.keys(patch) as PatchField[];
    if (sessionId === null || this.done || fields.length === 0) return;
    this.pending += 1;
    void this.client
      .patchSession(sessionId, patch)
      .then((ack) => {
        for (const field of fields) this.acked[field] = patch[field]!;
        this.view.annotatePatch(ack.applied_at, fields);
      })
      .catch((err) => {
        for (const field of fields) {
          const prev = this.acked[field];
          if (prev !== undefined) this.view.setSlider(field, prev);
        }
        const reason = err instanceof PatchRejected ? err.detail : describe(err);
        this.view.setNotice(`patch rejected: ${reason}`);
      })
      .finally(() => {
        this.pending -= 1;
      });
  }
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
