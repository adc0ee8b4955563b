/** Canvas curve rendering, kept free of DOM lookups for testability.
 *
 * Only the minimal 2D-context surface used here is declared, so tests can
 * pass a recording stub instead of a real CanvasRenderingContext2D.
 */

import type { Frames } from "./types.js";
import type { TimelineState } from "./state.js";

export interface Ctx2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  globalAlpha: number;
}

const CHANNEL_COLORS = [
  "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

export function channelColor(channel: number): string {
  return CHANNEL_COLORS[channel % CHANNEL_COLORS.length];
}

export interface ViewBox {
  width: number;
  height: number;
  yMin: number;
  yMax: number;
}

export function fitViewBox(data: Frames, width: number, height: number): ViewBox {
  let yMin = Infinity;
  let yMax = -Infinity;
  for (const row of data) {
    for (const v of row) {
      if (v < yMin) yMin = v;
      if (v > yMax) yMax = v;
    }
  }
  if (!Number.isFinite(yMin) || yMin === yMax) {
    yMin = (yMin || 0) - 1;
    yMax = yMin + 2;
  }
  const pad = 0.05 * (yMax - yMin);
  return { width, height, yMin: yMin - pad, yMax: yMax + pad };
}

export function toX(frame: number, n: number, box: ViewBox): number {
  return n <= 1 ? 0 : (frame / (n - 1)) * box.width;
}

export function toY(value: number, box: ViewBox): number {
  return box.height - ((value - box.yMin) / (box.yMax - box.yMin)) * box.height;
}

function drawCurve(ctx: Ctx2D, data: Frames, channel: number, box: ViewBox): void {
  ctx.beginPath();
  for (let i = 0; i < data.length; i++) {
    const x = toX(i, data.length, box);
    const y = toY(data[i][channel], box);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  }
  ctx.stroke();
}

export function drawTimeline(ctx: Ctx2D, state: TimelineState, box: ViewBox): void {
  ctx.clearRect(0, 0, box.width, box.height);
  if (!state.sequence) return;
  const data = state.sequence.data;
  const n = data.length;
  const channels = state.sequence.channels;

  if (state.selection) {
    const [s, e] = state.selection;
    ctx.globalAlpha = 0.12;
    ctx.fillStyle = "#4444ff";
    ctx.fillRect(toX(s, n, box), 0, toX(e - 1, n, box) - toX(s, n, box), box.height);
    ctx.globalAlpha = 1.0;
  }

  for (const overlay of state.overlays) {
    ctx.globalAlpha = 0.35;
    ctx.lineWidth = 1;
    for (let c = 0; c < channels; c++) {
      if (state.hiddenChannels.has(c)) continue;
      ctx.strokeStyle = channelColor(c);
      drawCurve(ctx, overlay.data, c, box);
    }
    ctx.globalAlpha = 1.0;
  }

  ctx.lineWidth = 1.5;
  for (let c = 0; c < channels; c++) {
    if (state.hiddenChannels.has(c)) continue;
    ctx.strokeStyle = channelColor(c);
    drawCurve(ctx, data, c, box);
  }

  ctx.fillStyle = "#222";
  for (const [key, values] of Object.entries(state.keyframes)) {
    const frame = Number(key);
    for (let c = 0; c < channels; c++) {
      if (state.hiddenChannels.has(c)) continue;
      ctx.beginPath();
      ctx.arc(toX(frame, n, box), toY(values[c], box), 3, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
