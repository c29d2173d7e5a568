/**
 * Canvas coordinates <-> workspace coordinates, plus command throttling.
 *
 * The inverse of the session's top-down projection: pixel (0,0) is the
 * workspace (x_min, y_min) corner, pixel (w-1, h-1) the (x_max, y_max)
 * corner. z comes from a slider, the camera being a planar view.
 */

import type { TipCommand, Vec3Tuple } from "./protocol.js";

export interface WorkspaceBounds {
  lo: Vec3Tuple;
  hi: Vec3Tuple;
}

export function pointerToCommand(
  u: number,
  v: number,
  frameW: number,
  frameH: number,
  ws: WorkspaceBounds,
  zSlider: number,
): TipCommand {
  const clampedU = Math.min(Math.max(u, 0), frameW - 1);
  const clampedV = Math.min(Math.max(v, 0), frameH - 1);
  const x = ws.lo[0] + (clampedU / (frameW - 1)) * (ws.hi[0] - ws.lo[0]);
  const y = ws.lo[1] + (clampedV / (frameH - 1)) * (ws.hi[1] - ws.lo[1]);
  const z = Math.min(Math.max(zSlider, ws.lo[2]), ws.hi[2]);
  return { cmd: "tip", x, y, z };
}

/** Forward projection (workspace -> pixel), matching the camera mapping. */
export function projectToCanvas(
  p: Vec3Tuple,
  frameW: number,
  frameH: number,
  ws: WorkspaceBounds,
): [number, number] {
  const axis = (value: number, lo: number, hi: number, n: number) => {
    const px = Math.floor(((value - lo) / (hi - lo)) * (n - 1) + 0.5);
    return Math.min(Math.max(px, 0), n - 1);
  };
  return [axis(p[0], ws.lo[0], ws.hi[0], frameW), axis(p[1], ws.lo[1], ws.hi[1], frameH)];
}

export type SendFn = (cmd: TipCommand) => void;

/**
 * Trailing-edge throttle: at most maxPerSecond sends; intermediate drag
 * points collapse onto the newest one, and the final point is always sent.
 */
export class CommandThrottle {
  private lastSendMs = -Infinity;
  private pending: TipCommand | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly send: SendFn,
    private readonly maxPerSecond = 60,
    private readonly now: () => number = () => Date.now(),
    private readonly schedule: (fn: () => void, ms: number) => ReturnType<typeof setTimeout> =
      (fn, ms) => setTimeout(fn, ms),
    private readonly cancel: (t: ReturnType<typeof setTimeout>) => void = clearTimeout,
  ) {}

  get intervalMs(): number {
    return 1000 / this.maxPerSecond;
  }

  offer(cmd: TipCommand): void {
    const t = this.now();
    if (t - this.lastSendMs >= this.intervalMs) {
      this.lastSendMs = t;
      this.send(cmd);
      return;
    }
    this.pending = cmd;
    if (this.timer === null) {
      const wait = this.lastSendMs + this.intervalMs - t;
      this.timer = this.schedule(() => this.flush(), Math.max(wait, 0));
    }
  }

  flush(): void {
    if (this.timer !== null) {
      this.cancel(this.timer);
      this.timer = null;
    }
    if (this.pending !== null) {
      this.lastSendMs = this.now();
      this.send(this.pending);
      this.pending = null;
    }
  }

  dispose(): void {
    this.flush();
  }
}
