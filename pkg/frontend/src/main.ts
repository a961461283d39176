// Controller: binds the annotation flow to the canvas, ring, and service.

import { ApiClient } from "./api.js";
import {
  canvasClick,
  confirmPreview,
  FlowState,
  initialFlow,
  nudgePreview,
  pixelToWorld,
  protocolReset,
  readyToSubmit,
  ringClick,
  sectorFromPointer,
  submitted,
  undo,
  validationRollback,
} from "./state.js";
import {
  canvasToPixel,
  drawRing,
  drawScene,
  observationBitmap,
  overlayView,
  OverlayView,
  SCALE,
} from "./render.js";
import { ApiError, SessionPayload } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

class App {
  api = new ApiClient("");
  flow: FlowState = initialFlow();
  session: SessionPayload | null = null;
  sessionId = "";
  bitmap: ImageBitmap | null = null;
  overlay: OverlayView | null = null;
  canvas!: HTMLCanvasElement;

  async start(): Promise<void> {
    this.canvas = $("scene");
    const meta = await this.api.meta();
    const taskSelect = $("task") as unknown as HTMLSelectElement;
    for (const task of meta.tasks) {
      const opt = document.createElement("option");
      opt.value = task;
      opt.textContent = task;
      taskSelect.appendChild(opt);
    }
    const ckptSelect = $("checkpoint") as unknown as HTMLSelectElement;
    const { checkpoints } = await this.api.checkpoints();
    for (const name of ["(none)", ...checkpoints]) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      ckptSelect.appendChild(opt);
    }
    $("new-session").addEventListener("click", () => this.newSession());
    $("finish").addEventListener("click", () => this.finish());
    $("undo").addEventListener("click", () => {
      this.flow = undo(this.flow);
      this.redraw();
    });
    this.canvas.addEventListener("click", (ev) => this.onCanvasClick(ev));
    this.canvas.addEventListener("mousemove", (ev) => this.onHover(ev));
    document.addEventListener("keydown", (ev) => this.onKey(ev));
    ($("overlay-head") as unknown as HTMLSelectElement).addEventListener(
      "change", () => this.refreshOverlay());
    ckptSelect.addEventListener("change", () => this.refreshOverlay());
    ($("overlay-slice") as unknown as HTMLInputElement).addEventListener(
      "change", () => this.refreshOverlay());
    ($("overlay-opacity") as unknown as HTMLInputElement).addEventListener(
      "input", () => this.refreshOverlay());
  }

  banner(text: string, isError = false): void {
    const el = $("banner");
    el.textContent = text;
    el.className = isError ? "banner error" : "banner";
  }

  async newSession(): Promise<void> {
    const task = ($("task") as unknown as HTMLSelectElement).value;
    const split = ($("split") as unknown as HTMLSelectElement).value;
    const seed = parseInt(($("seed") as unknown as HTMLInputElement).value, 10) || 0;
    try {
      const payload = await this.api.createSession(task, split, seed);
      this.sessionId = payload.session_id!;
      await this.applySession(payload);
      this.flow = initialFlow();
      this.banner(`session ${this.sessionId} started`);
      this.redraw();
    } catch (err) {
      this.banner(String(err), true);
    }
  }

  async applySession(payload: SessionPayload): Promise<void> {
    this.session = payload;
    this.bitmap = await observationBitmap(payload.observation);
    $("instruction").textContent = payload.instruction;
    $("score").textContent =
      `score ${payload.score.toFixed(1)} | step ${payload.steps}` +
      (payload.done ? " | done" : "");
    this.overlay = null;
  }

  currentK(): number {
    if (!this.session) return 1;
    return this.flow.phase === "awaiting-pick-rotation"
      ? this.session.k_pick
      : this.session.k_place;
  }

  onCanvasClick(ev: MouseEvent): void {
    if (!this.session) return;
    const [h, w] = this.session.observation.shape;
    const phase = this.flow.phase;
    if (phase === "awaiting-pick-rotation" || phase === "awaiting-place-rotation") {
      // Ring interaction: sectors around the selected pixel.
      const anchor =
        phase === "awaiting-pick-rotation"
          ? this.flow.pending.pick!
          : this.flow.pending.place!;
      const rect = this.canvas.getBoundingClientRect();
      const dx = ev.clientX - rect.left - (anchor.v + 0.5) * SCALE;
      const dy = ev.clientY - rect.top - (anchor.u + 0.5) * SCALE;
      const radius = Math.hypot(dx, dy);
      if (radius < 20 || radius > 50) return;
      const k = this.currentK();
      this.flow = ringClick(this.flow, sectorFromPointer(dx, dy, k), k);
      void this.maybeSubmit();
      this.redraw();
      return;
    }
    const { u, v } = canvasToPixel(this.canvas, ev.clientX, ev.clientY);
    this.flow = canvasClick(this.flow, u, v, h, w);
    this.redraw();
  }

  onHover(ev: MouseEvent): void {
    if (!this.session) return;
    const { u, v } = canvasToPixel(this.canvas, ev.clientX, ev.clientY);
    const { x, y } = pixelToWorld(u, v, this.session.observation.frame);
    $("cursor").textContent =
      `pixel (${u}, ${v})  world (${x.toFixed(4)}, ${y.toFixed(4)}) m`;
  }

  onKey(ev: KeyboardEvent): void {
    const k = this.currentK();
    if (ev.key === "[" || ev.key === "ArrowLeft") {
      this.flow = nudgePreview(this.flow, -1, k);
    } else if (ev.key === "]" || ev.key === "ArrowRight") {
      this.flow = nudgePreview(this.flow, +1, k);
    } else if (ev.key === "Enter") {
      this.flow = confirmPreview(this.flow, k);
      void this.maybeSubmit();
    } else if (ev.key === "z" || ev.key === "Backspace") {
      this.flow = undo(this.flow);
    } else {
      return;
    }
    ev.preventDefault();
    this.redraw();
  }

  async maybeSubmit(): Promise<void> {
    if (!readyToSubmit(this.flow) || !this.session) return;
    const p = this.flow.pending;
    try {
      if (!this.flow.pickCommitted) {
        try {
          await this.api.submitPick(this.sessionId, p.pick!.u, p.pick!.v, p.pickRot!);
        } catch (err) {
          if (err instanceof ApiError && err.status === 400) {
            this.flow = validationRollback(this.flow, "pick", err.message);
            this.redraw();
            return;
          }
          throw err;
        }
      }
      const payload = await this.api.submitPlace(
        this.sessionId, p.place!.u, p.place!.v, p.placeRot!);
      await this.applySession(payload);
      this.flow = submitted(this.flow);
      this.banner(`step applied; score ${payload.score.toFixed(1)}`);
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        this.flow = validationRollback(this.flow, "place", err.message);
      } else if (err instanceof ApiError && err.status === 409) {
        const obs = await this.api.observation(this.sessionId);
        await this.applySession(obs);
        this.flow = protocolReset(this.flow, obs.pending_pick, err.message);
      } else {
        this.banner(String(err), true);
      }
    }
    this.redraw();
  }

  async finish(): Promise<void> {
    if (!this.sessionId) return;
    try {
      const out = await this.api.finish(this.sessionId);
      this.banner(
        `saved ${out.n_steps} steps to ${out.episode_dir} ` +
        `(score ${out.final_score.toFixed(1)}, source ${out.source})`);
    } catch (err) {
      this.banner(String(err), true);
    }
  }

  async refreshOverlay(): Promise<void> {
    if (!this.session) return;
    const ckpt = ($("checkpoint") as unknown as HTMLSelectElement).value;
    const head = ($("overlay-head") as unknown as HTMLSelectElement).value as
      "pick" | "place";
    if (!ckpt || ckpt === "(none)") {
      this.overlay = null;
      this.redraw();
      return;
    }
    const opacity = parseFloat(
      ($("overlay-opacity") as unknown as HTMLInputElement).value);
    const sliceRaw = ($("overlay-slice") as unknown as HTMLInputElement).value;
    try {
      const pick = this.flow.pending.pick;
      const payload = await this.api.overlay(
        this.sessionId, ckpt, head,
        head === "place" ? pick ?? { u: 64, v: 64 } : undefined,
        sliceRaw === "" ? undefined : parseInt(sliceRaw, 10));
      ($("overlay-slice") as unknown as HTMLInputElement).max =
        String(payload.k - 1);
      this.overlay = await overlayView(payload, opacity);
      this.banner(`overlay ${head} argmax (${payload.argmax.u}, ` +
        `${payload.argmax.v}, bin ${payload.argmax.rot})`);
    } catch (err) {
      this.banner(String(err), true);
      this.overlay = null;
    }
    this.redraw();
  }

  redraw(): void {
    if (!this.session || !this.bitmap) return;
    drawScene(this.canvas, this.bitmap, this.session.observation.shape,
              this.overlay, {
                pick: this.flow.pending.pick,
                place: this.flow.pending.place,
              });
    const phase = this.flow.phase;
    if (phase === "awaiting-pick-rotation" || phase === "awaiting-place-rotation") {
      const anchor = phase === "awaiting-pick-rotation"
        ? this.flow.pending.pick!
        : this.flow.pending.place!;
      drawRing(this.canvas, this.currentK(), this.flow.previewRot, anchor);
    }
    $("phase").textContent = phase;
    if (this.flow.message) {
      this.banner(this.flow.message, true);
    }
  }
}

const app = new App();
app.start().catch((err) => {
  document.getElementById("banner")!.textContent = String(err);
});
