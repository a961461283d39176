// Canvas drawing: observation image, heatmap overlay, argmax marker, and
// the rotation ring. Display only; no state lives here.

import { decodeFloatPlane } from "./decode.js";
import { sectorScreenAngle } from "./state.js";
import { EncodedObservation, OverlayPayload, PixelPose } from "./types.js";

export const SCALE = 4; // 128 px observation -> 512 px canvas, integer scale

export interface OverlayView {
  payload: OverlayPayload;
  plane: Float32Array;
  opacity: number;
}

export async function observationBitmap(
  obs: EncodedObservation,
): Promise<ImageBitmap> {
  const bytes = Uint8Array.from(atob(obs.color_png_b64), (c) => c.charCodeAt(0));
  const blob = new Blob([bytes as BlobPart], { type: "image/png" });
  return createImageBitmap(blob);
}

export async function overlayView(
  payload: OverlayPayload,
  opacity: number,
): Promise<OverlayView> {
  const { data } = await decodeFloatPlane(payload.map_zlib_b64, payload.shape);
  return { payload, plane: data, opacity };
}

function heatColor(value: number): [number, number, number] {
  // Dark blue -> yellow -> red ramp.
  const r = Math.min(1, 2 * value);
  const g = Math.min(1, 1.6 * value * (1 - 0.4 * value));
  const b = Math.max(0, 0.6 - value);
  return [Math.round(255 * r), Math.round(255 * g), Math.round(255 * b)];
}

export function drawScene(
  canvas: HTMLCanvasElement,
  bitmap: ImageBitmap,
  shape: [number, number],
  overlay: OverlayView | null,
  marks: { pick?: { u: number; v: number }; place?: { u: number; v: number } },
): void {
  const [h, w] = shape;
  canvas.width = w * SCALE;
  canvas.height = h * SCALE;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false; // integer scale, no resampling blur
  ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
  if (overlay) {
    const img = ctx.createImageData(w, h);
    for (let i = 0; i < h * w; i++) {
      const value = overlay.plane[i];
      const [r, g, b] = heatColor(value);
      img.data[4 * i] = r;
      img.data[4 * i + 1] = g;
      img.data[4 * i + 2] = b;
      img.data[4 * i + 3] = Math.round(255 * overlay.opacity * value);
    }
    const off = document.createElement("canvas");
    off.width = w;
    off.height = h;
    off.getContext("2d")!.putImageData(img, 0, 0);
    ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
    drawArgmax(ctx, overlay.payload.argmax);
  }
  if (marks.pick) {
    drawCross(ctx, marks.pick.u, marks.pick.v, "#00e5ff");
  }
  if (marks.place) {
    drawCross(ctx, marks.place.u, marks.place.v, "#76ff03");
  }
}

function drawCross(
  ctx: CanvasRenderingContext2D,
  u: number,
  v: number,
  color: string,
): void {
  const x = (v + 0.5) * SCALE;
  const y = (u + 0.5) * SCALE;
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(x - 8, y);
  ctx.lineTo(x + 8, y);
  ctx.moveTo(x, y - 8);
  ctx.lineTo(x, y + 8);
  ctx.stroke();
}

function drawArgmax(ctx: CanvasRenderingContext2D, argmax: PixelPose): void {
  const x = (argmax.v + 0.5) * SCALE;
  const y = (argmax.u + 0.5) * SCALE;
  ctx.strokeStyle = "#ffffff";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(x, y, 10, 0, 2 * Math.PI);
  ctx.stroke();
  const phi = sectorScreenAngle(argmax.rot, argmax.k);
  ctx.beginPath();
  ctx.moveTo(x, y);
  ctx.lineTo(x + 16 * Math.cos(phi), y + 16 * Math.sin(phi));
  ctx.stroke();
}

export function drawRing(
  canvas: HTMLCanvasElement,
  k: number,
  previewRot: number,
  center: { u: number; v: number },
): void {
  const ctx = canvas.getContext("2d")!;
  const x = (center.v + 0.5) * SCALE;
  const y = (center.u + 0.5) * SCALE;
  const rIn = 24;
  const rOut = 44;
  const width = (2 * Math.PI) / k;
  for (let i = 0; i < k; i++) {
    const mid = sectorScreenAngle(i, k);
    ctx.beginPath();
    ctx.strokeStyle = i === previewRot ? "#ffd600" : "rgba(255,255,255,0.65)";
    ctx.lineWidth = rOut - rIn;
    const r = (rIn + rOut) / 2;
    // Sector arcs run clockwise on screen as bins increase.
    ctx.arc(x, y, r, mid - width / 2 + 0.02, mid + width / 2 - 0.02);
    ctx.stroke();
  }
  ctx.beginPath();
  ctx.fillStyle = "#ffd600";
  const phi = sectorScreenAngle(previewRot, k);
  ctx.arc(x + ((rIn + rOut) / 2) * Math.cos(phi),
          y + ((rIn + rOut) / 2) * Math.sin(phi), 4, 0, 2 * Math.PI);
  ctx.fill();
}

export function canvasToPixel(
  canvas: HTMLCanvasElement,
  clientX: number,
  clientY: number,
): { u: number; v: number } {
  const rect = canvas.getBoundingClientRect();
  const v = Math.floor(((clientX - rect.left) / rect.width) * canvas.width / SCALE);
  const u = Math.floor(((clientY - rect.top) / rect.height) * canvas.height / SCALE);
  return { u, v };
}
