import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { PatchRejected } from "../src/client.js";
import { PanelController } from "../src/panel.js";
import {
  baseRequest,
  frame,
  RecordingView,
  StubService,
  tick,
} from "./helpers.js";

describe("connect and render", () => {
  it("renders frame 0 after a single stream event", async () => {
    const svc = new StubService();
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());
    expect(view.frames).toHaveLength(0);

    svc.push(frame(0, -12.5));
    await tick();

    expect(view.frames).toHaveLength(1);
    expect(view.frames[0]!.iteration).toBe(0);
    expect(view.frames[0]!.loss).toBe(-12.5);
    expect(view.lastStatus()).toBe("streaming");
  });

  it("takes slider bounds from the capability call, not constants", async () => {
    const svc = new StubService();
    svc.caps.ranges.step_size = { type: "float", min: 0.25, max: 0.75, step: 0.05 };
    svc.caps.layers = ["alpha", "beta"];
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());

    expect(view.bounds).not.toBeNull();
    expect(view.bounds!.ranges.step_size!.max).toBe(0.75);
    expect(view.bounds!.layers).toEqual(["alpha", "beta"]);
  });

  it("never renders a frame that was not received", async () => {
    const svc = new StubService();
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());
    svc.push(frame(0, -1));
    svc.push(frame(1, -2));
    await tick();

    expect(view.frames.map((f) => f.png_b64)).toEqual(["png0", "png1"]);
  });

  it("keeps the displayed iteration monotone under replays", async () => {
    const svc = new StubService();
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());
    for (const [it, loss] of [[0, -1], [2, -3], [1, -2], [2, -3], [3, -4]] as const) {
      svc.push(frame(it, loss));
    }
    await tick(12);

    expect(view.frames.map((f) => f.iteration)).toEqual([0, 2, 3]);
    expect(panel.getState().lastIteration).toBe(3);
  });

  it("shows an error banner with retry when the service is down", async () => {
    const svc = new StubService();
    svc.failCapabilities = true;
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());

    expect(view.lastStatus()).toBe("error");
    expect(view.lastNotice()).toContain("service unreachable");
    expect(view.retryShown.at(-1)).toBe(true);

    svc.failCapabilities = false;
    await panel.retry();
    expect(view.lastStatus()).toBe("streaming");
    expect(view.retryShown.at(-1)).toBe(false);
  });

  it("handles session-create failure the same way", async () => {
    const svc = new StubService();
    svc.failCreate = true;
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());

    expect(view.lastStatus()).toBe("error");
    expect(panel.getState().sessionId).toBeNull();
  });

  it("disables controls and keeps the final frame on done", async () => {
    const svc = new StubService();
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());
    svc.push(frame(0, -1));
    svc.push(frame(1, -2));
    svc.push({ kind: "done", done: { total_iterations: 1, run_id: "r1" } });
    await panel.streamFinished();

    expect(view.lastStatus()).toBe("done");
    expect(view.controlsEnabled.at(-1)).toBe(false);
    expect(view.frames.at(-1)!.iteration).toBe(1);
    expect(view.frames).toHaveLength(2);
  });

  it("surfaces a stream error event as an error state", async () => {
    const svc = new StubService();
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());
    svc.push(frame(0, -1));
    svc.push({ kind: "error", message: "ValueError: boom" });
    await panel.streamFinished();

    expect(view.lastStatus()).toBe("error");
    expect(view.lastNotice()).toContain("ValueError: boom");
    expect(view.controlsEnabled.at(-1)).toBe(false);
  });

  it("treats a stream that closes without done as an error", async () => {
    const svc = new StubService();
    const view = new RecordingView();
    const panel = new PanelController(svc, view);

    await panel.connect(baseRequest());
    svc.push(frame(0, -1));
    svc.end();
    await panel.streamFinished();

    expect(view.lastStatus()).toBe("error");
    expect(view.lastNotice()).toContain("ended unexpectedly");
  });
});

describe("live patches", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  async function connected() {
    const svc = new StubService();
    const view = new RecordingView();
    const panel = new PanelController(svc, view);
    await panel.connect(baseRequest());
    return { svc, view, panel };
  }

  it("sends a patch on slider input and annotates the ack", async () => {
    const { svc, view, panel } = await connected();
    svc.patchResults = [{ applied_at: 5 }];

    panel.onSliderInput("step_size", 0.1);
    await tick();

    expect(svc.patchCalls).toHaveLength(1);
    expect(svc.patchCalls[0]!.patch).toEqual({ step_size: 0.1 });
    expect(view.annotations).toEqual([[5, ["step_size"]]]);
    expect(panel.getState().ackedValues.step_size).toBe(0.1);
  });

  it("caps rapid wiggling at 4 requests per second on the wire", async () => {
    const { svc, panel } = await connected();
    const t0 = Date.now();

    for (let t = 0; t < 100; t++) {
      panel.onSliderInput("jitter", t % 9);
      vi.advanceTimersByTime(10);
    }
    await tick();

    const first_second = svc.patchCalls.filter((c) => c.at - t0 < 1000);
    expect(first_second.length).toBeLessThanOrEqual(4);
    expect(first_second.length).toBeGreaterThanOrEqual(2);
    for (let i = 1; i < svc.patchCalls.length; i++) {
      expect(svc.patchCalls[i]!.at - svc.patchCalls[i - 1]!.at).toBeGreaterThanOrEqual(250);
    }

    vi.advanceTimersByTime(300);
    await tick();
    expect(svc.patchCalls.at(-1)!.patch).toEqual({ jitter: 99 % 9 });
  });

  it("coalesces multi-slider moves into one wire request", async () => {
    const { svc, panel } = await connected();

    panel.onSliderInput("step_size", 0.2);
    panel.onSliderInput("jitter", 4);
    panel.onSliderInput("step_size", 0.3);
    vi.advanceTimersByTime(250);
    await tick();

    expect(svc.patchCalls).toHaveLength(2);
    expect(svc.patchCalls[0]!.patch).toEqual({ step_size: 0.2 });
    expect(svc.patchCalls[1]!.patch).toEqual({ step_size: 0.3, jitter: 4 });
  });

  it("reverts the slider to the configured value on a rejected first patch", async () => {
    const { svc, view, panel } = await connected();
    svc.patchResults = [new PatchRejected(400, "step_size must be in [0.001,0.5]")];

    panel.onSliderInput("step_size", 0.4);
    await tick();

    expect(view.sliderSets).toContainEqual(["step_size", 0.05]);
    expect(view.lastNotice()).toContain("patch rejected");
    expect(view.lastNotice()).toContain("step_size must be in");
  });

  it("reverts to the last acked value, not the initial one", async () => {
    const { svc, view, panel } = await connected();
    svc.patchResults = [
      { applied_at: 2 },
      new PatchRejected(409, "session finished; no further iterations to patch"),
    ];

    panel.onSliderInput("jitter", 5);
    await tick();
    vi.advanceTimersByTime(250);
    panel.onSliderInput("jitter", 7);
    await tick();

    expect(view.sliderSets).toContainEqual(["jitter", 5]);
    expect(panel.getState().ackedValues.jitter).toBe(5);
  });

  it("shows a notice and sends nothing after done", async () => {
    const { svc, view, panel } = await connected();
    svc.push(frame(0, -1));
    svc.push({ kind: "done", done: { total_iterations: 0, run_id: "r1" } });
    await panel.streamFinished();

    panel.onSliderInput("step_size", 0.2);
    vi.advanceTimersByTime(1000);
    await tick();

    expect(svc.patchCalls).toHaveLength(0);
    expect(view.lastNotice()).toContain("finished");
  });

  it("clamps outgoing values to the advertised ranges", async () => {
    const { svc, panel } = await connected();

    panel.onSliderInput("step_size", 99);
    await tick();
    vi.advanceTimersByTime(250);
    panel.onSliderInput("jitter", -3);
    await tick();

    expect(svc.patchCalls[0]!.patch).toEqual({ step_size: 0.5 });
    expect(svc.patchCalls[1]!.patch).toEqual({ jitter: 0 });
  });

  it("rejects layer names outside the advertised list", async () => {
    const { svc, panel } = await connected();

    panel.onSliderInput("layer_name", "dense");
    await tick();

    expect(svc.patchCalls[0]!.patch).toEqual({ layer_name: "conv1" });
  });

  it("tracks pending patches until the ack lands", async () => {
    const { svc, panel } = await connected();
    let release: (ack: { applied_at: number }) => void = () => {};
    const gate = new Promise<{ applied_at: number }>((r) => (release = r));
    const realPatch = svc.patchSession.bind(svc);
    svc.patchSession = async (id, patch) => {
      void realPatch(id, patch);
      return gate;
    };

    panel.onSliderInput("guide_blend", 0.25);
    await tick();
    expect(panel.getState().pendingPatches).toBe(1);

    release({ applied_at: 3 });
    await tick();
    expect(panel.getState().pendingPatches).toBe(0);
  });
});
