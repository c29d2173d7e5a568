/**
 * View rendering against an abstract painter, so the same code drives a
 * browser canvas, a terminal rasterizer, or the test recorder.
 *
 * Drawn in frame-pixel coordinates: received tiles (placeholder hatching
 * where none arrived yet), ROI outlines, the slave tip marker, a force
 * arrow scaled to f_max, and a stacked per-stage latency bar.
 */

import { projectToCanvas } from "./mapping.js";
import type { ConsoleState } from "./state.js";

export interface Painter {
  clear(w: number, h: number): void;
  drawPixels(x: number, y: number, w: number, h: number, gray: Uint8Array): void;
  hatchRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number, color: string): void;
  line(x1: number, y1: number, x2: number, y2: number, color: string, width: number): void;
  marker(x: number, y: number, color: string): void;
  barSegment(x: number, y: number, w: number, h: number, color: string, label: string): void;
  text(x: number, y: number, s: string, color: string): void;
}

export const ROI_COLOR = "#ffd400";
export const TIP_COLOR = "#ff3030";
export const FORCE_COLOR = "#30c0ff";
export const STAGE_COLORS: Record<string, string> = {
  "capture->encode_done": "#4daf4a",
  "encode_done->mux_out": "#377eb8",
  "mux_out->phy_rx": "#984ea3",
  "phy_rx->decode_done": "#ff7f00",
  "decode_done->display": "#e41a1c",
};

const MAX_FORCE_ARROW_PX = 20;
const LATENCY_BAR_HEIGHT = 4;

export function renderView(state: ConsoleState, painter: Painter): void {
  const frame = state.hello?.frame ?? [64, 64];
  const grid = state.hello?.grid ?? [4, 4];
  const [frameW, frameH] = frame;
  const [cols, rows] = grid;
  const tileW = Math.floor(frameW / cols);
  const tileH = Math.floor(frameH / rows);

  painter.clear(frameW, frameH);

  for (let index = 0; index < cols * rows; index++) {
    const tile = state.tiles.get(index);
    const x = (index % cols) * tileW;
    const y = Math.floor(index / cols) * tileH;
    if (tile) {
      painter.drawPixels(tile.x, tile.y, tile.w, tile.h, tile.pixels);
      if (tile.roi) painter.strokeRect(tile.x, tile.y, tile.w, tile.h, ROI_COLOR);
    } else {
      painter.hatchRect(x, y, tileW, tileH);
    }
  }

  const ws = state.hello?.workspace;
  if (ws && state.slaveTip) {
    const [u, v] = projectToCanvas(state.slaveTip, frameW, frameH, ws);
    painter.marker(u, v, TIP_COLOR);
    const fMax = state.hello?.f_max ?? 20;
    const [fx, fy] = [state.force[0], state.force[1]];
    const mag = Math.hypot(state.force[0], state.force[1], state.force[2]);
    if (mag > 0) {
      const scale = (Math.min(mag, fMax) / fMax) * MAX_FORCE_ARROW_PX;
      const norm = Math.hypot(fx, fy) || 1;
      painter.line(u, v, u + (fx / norm) * scale, v + (fy / norm) * scale, FORCE_COLOR, 2);
    }
  }

  renderLatencyBar(state, painter, frameW, frameH);

  if (state.connection !== "connected") {
    painter.text(2, 2, state.connection, "#ffffff");
  }
}

function renderLatencyBar(
  state: ConsoleState,
  painter: Painter,
  frameW: number,
  frameH: number,
): void {
  const stages = videoStageMeans(state);
  const y = frameH + 2;
  if (stages.length === 0) {
    const e2e = state.stats?.e2e_us?.["vid"]?.mean;
    if (e2e !== undefined) {
      painter.barSegment(0, y, frameW, LATENCY_BAR_HEIGHT, "#888888", `e2e ${fmtUs(e2e)}`);
    }
    return;
  }
  const total = stages.reduce((acc, [, v]) => acc + v, 0);
  let x = 0;
  for (const [name, mean] of stages) {
    const w = total > 0 ? (mean / total) * frameW : 0;
    painter.barSegment(x, y, w, LATENCY_BAR_HEIGHT, STAGE_COLORS[name] ?? "#888888",
      `${name} ${fmtUs(mean)}`);
    x += w;
  }
  painter.text(0, y + LATENCY_BAR_HEIGHT + 2, `video e2e ${fmtUs(total)}`, "#ffffff");
}

/** Per-stage mean latencies for video units, in pipeline order. */
export function videoStageMeans(state: ConsoleState): Array<[string, number]> {
  const report = state.report as
    | { units?: { classes?: Record<string, { stage_us?: Record<string, { mean: number }> }> } }
    | null;
  const fromReport = report?.units?.classes?.["vid"]?.stage_us;
  const order = Object.keys(STAGE_COLORS);
  if (fromReport) {
    return order.filter((k) => k in fromReport).map((k) => [k, fromReport[k].mean]);
  }
  const rolling = state.stats?.stage_us?.["vid"];
  if (rolling) {
    return order.filter((k) => k in rolling).map((k) => [k, rolling[k]]);
  }
  return [];
}

function fmtUs(us: number): string {
  return us >= 1000 ? `${(us / 1000).toFixed(1)}ms` : `${Math.round(us)}us`;
}

/** Test double: records every painter call in order. */
export class RecordingPainter implements Painter {
  ops: Array<Record<string, unknown>> = [];

  clear(w: number, h: number): void {
    this.ops.push({ op: "clear", w, h });
  }
  drawPixels(x: number, y: number, w: number, h: number, gray: Uint8Array): void {
    this.ops.push({ op: "pixels", x, y, w, h, bytes: gray.length });
  }
  hatchRect(x: number, y: number, w: number, h: number): void {
    this.ops.push({ op: "hatch", x, y, w, h });
  }
  strokeRect(x: number, y: number, w: number, h: number, color: string): void {
    this.ops.push({ op: "stroke", x, y, w, h, color });
  }
  line(x1: number, y1: number, x2: number, y2: number, color: string, width: number): void {
    this.ops.push({ op: "line", x1, y1, x2, y2, color, width });
  }
  marker(x: number, y: number, color: string): void {
    this.ops.push({ op: "marker", x, y, color });
  }
  barSegment(x: number, y: number, w: number, h: number, color: string, label: string): void {
    this.ops.push({ op: "bar", x, y, w, h, color, label });
  }
  text(x: number, y: number, s: string, color: string): void {
    this.ops.push({ op: "text", x, y, s, color });
  }

  find(op: string): Array<Record<string, unknown>> {
    return this.ops.filter((o) => o.op === op);
  }
}
