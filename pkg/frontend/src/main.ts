/** DOM wiring: binds the panel controller to the page in index.html. */

import { HttpDreamClient } from "./client.js";
import { PanelController, type PanelView } from "./panel.js";
import type {
  Capabilities,
  ConnectionStatus,
  FrameEvent,
  PatchField,
  PatchValue,
  SessionConfig,
} from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

const NUMERIC_FIELDS: readonly ["step_size", "guide_blend", "jitter"] = [
  "step_size",
  "guide_blend",
  "jitter",
];

class DomView implements PanelView {
  private readonly image = el<HTMLImageElement>("frame");
  private readonly iterLabel = el<HTMLSpanElement>("iteration");
  private readonly lossLabel = el<HTMLSpanElement>("loss");
  private readonly statusLabel = el<HTMLSpanElement>("status");
  private readonly notice = el<HTMLDivElement>("notice");
  private readonly retryBtn = el<HTMLButtonElement>("retry");
  private readonly spark = el<HTMLCanvasElement>("sparkline");
  private readonly layerSelect = el<HTMLSelectElement>("layer_name");
  private readonly sliders: Record<string, HTMLInputElement> = {
    step_size: el<HTMLInputElement>("step_size"),
    guide_blend: el<HTMLInputElement>("guide_blend"),
    jitter: el<HTMLInputElement>("jitter"),
  };
  private losses: { iteration: number; loss: number }[] = [];
  private markers: number[] = [];

  setStatus(status: ConnectionStatus): void {
    this.statusLabel.textContent = status;
    if (status === "connecting" || status === "streaming") {
      this.losses = [];
      this.markers = [];
    }
  }

  setNotice(text: string): void {
    this.notice.textContent = text;
    this.notice.style.display = text === "" ? "none" : "block";
  }

  setBounds(caps: Capabilities): void {
    this.layerSelect.replaceChildren();
    // capability order is shallow-to-deep; keep it for the focus axis
    for (const layer of caps.layers) {
      const opt = document.createElement("option");
      opt.value = layer;
      opt.textContent = layer;
      this.layerSelect.append(opt);
    }
    for (const field of NUMERIC_FIELDS) {
      const range = caps.ranges[field];
      const input = this.sliders[field];
      if (range === undefined || input === undefined) continue;
      input.min = String(range.min);
      input.max = String(range.max);
      input.step = String(range.step);
    }
  }

  setSlider(field: PatchField, value: PatchValue): void {
    if (field === "layer_name") {
      this.layerSelect.value = String(value);
      return;
    }
    const input = this.sliders[field];
    if (input !== undefined) input.value = String(value);
  }

  setControlsEnabled(enabled: boolean): void {
    this.layerSelect.disabled = !enabled;
    for (const input of Object.values(this.sliders)) input.disabled = !enabled;
  }

  renderFrame(frame: FrameEvent): void {
    this.image.src = `data:image/png;base64,${frame.png_b64}`;
    this.iterLabel.textContent = String(frame.iteration);
    this.lossLabel.textContent = frame.loss.toFixed(3);
    this.losses.push({ iteration: frame.iteration, loss: frame.loss });
    this.drawSparkline();
  }

  annotatePatch(iteration: number, _fields: PatchField[]): void {
    this.markers.push(iteration);
    this.drawSparkline();
  }

  showRetry(show: boolean): void {
    this.retryBtn.style.display = show ? "inline-block" : "none";
  }

  private drawSparkline(): void {
    const ctx = this.spark.getContext("2d");
    if (ctx === null || this.losses.length === 0) return;
    const { width, height } = this.spark;
    ctx.clearRect(0, 0, width, height);
    const first = this.losses[0]!;
    let lo = first.loss;
    let hi = first.loss;
    for (const p of this.losses) {
      lo = Math.min(lo, p.loss);
      hi = Math.max(hi, p.loss);
    }
    const span = hi - lo || 1;
    const maxIter = Math.max(this.losses[this.losses.length - 1]!.iteration, 1);
    const x = (it: number) => (it / maxIter) * (width - 4) + 2;
    const y = (loss: number) => height - 3 - ((loss - lo) / span) * (height - 6);
    ctx.strokeStyle = "#2563eb";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    this.losses.forEach((p, i) => {
      if (i === 0) ctx.moveTo(x(p.iteration), y(p.loss));
      else ctx.lineTo(x(p.iteration), y(p.loss));
    });
    ctx.stroke();
    // vertical markers where acked patches take effect
    ctx.strokeStyle = "#dc2626";
    ctx.lineWidth = 1;
    for (const it of this.markers) {
      if (it > maxIter) continue;
      ctx.beginPath();
      ctx.moveTo(x(it), 0);
      ctx.lineTo(x(it), height);
      ctx.stroke();
    }
  }
}

async function fileToBase64(input: HTMLInputElement): Promise<string | null> {
  const file = input.files?.[0];
  if (file === undefined) return null;
  const buf = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  for (const byte of buf) binary += String.fromCharCode(byte);
  return btoa(binary);
}

function boot(): void {
  const view = new DomView();
  let controller: PanelController | null = null;

  el<HTMLButtonElement>("start").addEventListener("click", () => {
    void (async () => {
      const baseUrl = el<HTMLInputElement>("service_url").value.trim();
      const source = await fileToBase64(el<HTMLInputElement>("source_file"));
      if (source === null) {
        view.setNotice("choose a source image first");
        return;
      }
      const guide = await fileToBase64(el<HTMLInputElement>("guide_file"));
      const config: SessionConfig = {
        layer_name: el<HTMLSelectElement>("layer_name").value || "conv2",
        iterations: Number(el<HTMLInputElement>("iterations").value) || 50,
        step_size: Number(el<HTMLInputElement>("step_size").value) || 0.05,
        guide_blend: Number(el<HTMLInputElement>("guide_blend").value),
        jitter: Number(el<HTMLInputElement>("jitter").value),
      };
      if (guide === null) config.guide_blend = 0;
      controller = new PanelController(new HttpDreamClient(baseUrl), view);
      const req = {
        source_b64: source,
        config,
        frame_interval_ms: 250,
        ...(guide !== null ? { guide_b64: guide } : {}),
      };
      await controller.connect(req);
      wireSliders(controller);
    })();
  });

  el<HTMLButtonElement>("retry").addEventListener("click", () => {
    void controller?.retry();
  });
}

function wireSliders(controller: PanelController): void {
  el<HTMLSelectElement>("layer_name").oninput = (ev) => {
    controller.onSliderInput("layer_name", (ev.target as HTMLSelectElement).value);
  };
  for (const field of NUMERIC_FIELDS) {
    el<HTMLInputElement>(field).oninput = (ev) => {
      controller.onSliderInput(field, Number((ev.target as HTMLInputElement).value));
    };
  }
}

boot();
