/**
 * Terminal operator console.
 *
 *   node dist/main.js [host] [port]
 *
 * Steers the master tip with the keyboard (arrows / WASD for x-y, q/e for
 * z), renders the reconstructed tile video as ASCII with the ROI outlined,
 * and shows force and latency readouts from the session's own records.
 */

import { GatewayClient } from "./client.js";
import { CommandThrottle, pointerToCommand, projectToCanvas } from "./mapping.js";
import type { Painter } from "./render.js";
import { renderView, videoStageMeans } from "./render.js";
import { displayedE2E } from "./state.js";

const RAMP = " .:-=+*#%@";

class TerminalPainter implements Painter {
  grid: string[][] = [];
  overlays: string[] = [];
  private w = 0;
  private h = 0;

  clear(w: number, h: number): void {
    this.w = w;
    this.h = h;
    this.grid = Array.from({ length: h }, () => Array(w).fill(" "));
    this.overlays = [];
  }
  drawPixels(x: number, y: number, w: number, h: number, gray: Uint8Array): void {
    for (let row = 0; row < h; row++) {
      for (let col = 0; col < w; col++) {
        const v = gray[row * w + col];
        const ch = RAMP[Math.min(Math.floor((v / 256) * RAMP.length), RAMP.length - 1)];
        this.set(x + col, y + row, ch);
      }
    }
  }
  hatchRect(x: number, y: number, w: number, h: number): void {
    for (let row = 0; row < h; row++) {
      for (let col = 0; col < w; col++) {
        this.set(x + col, y + row, (row + col) % 2 ? "/" : " ");
      }
    }
  }
  strokeRect(x: number, y: number, w: number, h: number): void {
    for (let col = 0; col < w; col++) {
      this.set(x + col, y, "-");
      this.set(x + col, y + h - 1, "-");
    }
    for (let row = 0; row < h; row++) {
      this.set(x, y + row, "|");
      this.set(x + w - 1, y + row, "|");
    }
  }
  line(x1: number, y1: number, x2: number, y2: number): void {
    const steps = Math.max(Math.abs(x2 - x1), Math.abs(y2 - y1), 1);
    for (let s = 0; s <= steps; s++) {
      this.set(
        Math.round(x1 + ((x2 - x1) * s) / steps),
        Math.round(y1 + ((y2 - y1) * s) / steps),
        "*",
      );
    }
  }
  marker(x: number, y: number): void {
    this.set(x, y, "X");
  }
  barSegment(_x: number, _y: number, _w: number, _h: number, _color: string, label: string): void {
    this.overlays.push(label);
  }
  text(_x: number, _y: number, s: string): void {
    this.overlays.push(s);
  }
  private set(x: number, y: number, ch: string): void {
    if (x >= 0 && x < this.w && y >= 0 && y < this.h) this.grid[y][x] = ch;
  }
  toString(): string {
    return this.grid.map((row) => row.join("")).join("\n");
  }
}

function main(): void {
  const host = process.argv[2] ?? "127.0.0.1";
  const port = Number(process.argv[3] ?? 8765);
  const client = new GatewayClient({ host, port });
  const painter = new TerminalPainter();

  let targetU = 32;
  let targetV = 32;
  let zSlider = 0;
  const throttle = new CommandThrottle((cmd) => client.sendCommand(cmd), 60);

  const nudge = (du: number, dv: number, dz: number) => {
    const frame = client.state.hello?.frame ?? [64, 64];
    const ws = client.state.hello?.workspace;
    if (!ws) return;
    targetU = Math.min(Math.max(targetU + du, 0), frame[0] - 1);
    targetV = Math.min(Math.max(targetV + dv, 0), frame[1] - 1);
    zSlider = Math.min(Math.max(zSlider + dz, ws.lo[2]), ws.hi[2]);
    throttle.offer(pointerToCommand(targetU, targetV, frame[0], frame[1], ws, zSlider));
  };

  if (process.stdin.isTTY) {
    process.stdin.setRawMode(true);
    process.stdin.resume();
    process.stdin.on("data", (key: Buffer) => {
      const s = key.toString();
      if (s === "" || s === "x") {
        client.close();
        process.exit(0);
      }
      if (s === "[A" || s === "w") nudge(0, -1, 0);
      if (s === "[B" || s === "s") nudge(0, 1, 0);
      if (s === "[C" || s === "d") nudge(1, 0, 0);
      if (s === "[D" || s === "a") nudge(-1, 0, 0);
      if (s === "q") nudge(0, 0, -0.02);
      if (s === "e") nudge(0, 0, 0.02);
    });
  }

  const redraw = () => {
    renderView(client.state, painter);
    const status = client.state.connection;
    const tip = client.state.slaveTip;
    const force = client.state.force;
    const e2e = displayedE2E(client.state);
    const stages = videoStageMeans(client.state)
      .map(([name, mean]) => `${name.split("->")[1]} ${Math.round(mean)}us`)
      .join("  ");
    const lines = [
      painter.toString(),
      `[${status}] role=${client.state.role ?? "?"} contact=${client.state.contact}`,
      tip ? `slave tip  ${tip.map((c) => c.toFixed(3)).join(", ")}` : "slave tip  -",
      `force      ${force.map((c) => c.toFixed(2)).join(", ")} N`,
      `e2e mean   ${Object.entries(e2e)
        .map(([cls, v]) => `${cls}=${Math.round(v)}us`)
        .join("  ") || "-"}`,
      stages ? `stages     ${stages}` : "",
      "arrows/wasd steer, q/e depth, x quits",
    ];
    process.stdout.write("[2J[H" + lines.filter(Boolean).join("\n") + "\n");
  };

  client.onMessage((msg) => {
    if (msg.type === "report") redraw();
  });
  setInterval(redraw, 100);
  client.connect();
}

main();
