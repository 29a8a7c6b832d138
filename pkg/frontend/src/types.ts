/** Wire types for the dreamhone HTTP/SSE protocol. All JSON is snake_case. */

export interface SliderRange {
  type: "float" | "int";
  min: number;
  max: number;
  step: number;
}

export interface Capabilities {
  layers: string[];
  modes: string[];
  patchable_fields: string[];
  ranges: Record<string, SliderRange>;
  input_dims: [number, number, number];
}

export interface SessionConfig {
  layer_name: string;
  mode?: string;
  iterations: number;
  step_size?: number;
  patch_size?: number;
  jitter?: number;
  guide_blend?: number;
  seed?: number;
  clamp?: boolean;
}

export interface CreateSessionRequest {
  source_b64: string;
  guide_b64?: string;
  config?: SessionConfig;
  schedule?: SessionConfig[];
  frame_interval_ms?: number;
}

export interface CreateSessionResponse {
  session_id: string;
  run_id: string;
  total_iterations: number;
}

export interface FrameEvent {
  iteration: number;
  loss: number;
  phase: number;
  png_b64: string;
}

export interface DoneEvent {
  total_iterations: number;
  run_id: string;
}

export interface PatchAck {
  applied_at: number;
}

/** The live controls the panel exposes. Everything else stays server-side. */
export type PatchField = "layer_name" | "step_size" | "guide_blend" | "jitter";

export type PatchValue = string | number;

export type StreamEvent =
  | { kind: "frame"; frame: FrameEvent }
  | { kind: "done"; done: DoneEvent }
  | { kind: "error"; message: string };

export type ConnectionStatus = "idle" | "connecting" | "streaming" | "done" | "error";

export interface PanelStateSnapshot {
  sessionId: string | null;
  status: ConnectionStatus;
  lastIteration: number;
  lastLoss: number | null;
  pendingPatches: number;
  ackedValues: Partial<Record<PatchField, PatchValue>>;
}
