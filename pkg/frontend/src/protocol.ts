/**
 * Gateway wire protocol: one JSON document per line over TCP.
 *
 * Downstream message types mirror the session gateway; the console renders
 * only what it receives and never simulates physics locally.
 */

export type Vec3Tuple = [number, number, number];

export interface HelloMsg {
  type: "hello";
  role: "commander" | "observer";
  workspace?: { lo: Vec3Tuple; hi: Vec3Tuple };
  frame?: [number, number];
  grid?: [number, number];
  f_max?: number;
  stats_period_ms?: number;
}

export interface StateMsg {
  type: "state";
  ts: number;
  slave_tip: Vec3Tuple;
  force: Vec3Tuple;
  contact: boolean;
  master: Vec3Tuple | null;
}

export interface TileMsg {
  frame_id: number;
  i: number;
  x: number;
  y: number;
  w: number;
  h: number;
  roi: boolean;
  ts: number;
  px: string; // base64 row-major 8-bit grayscale
}

export interface TilesMsg {
  type: "tiles";
  ts: number;
  tiles: TileMsg[];
}

export interface StatsBlock {
  count: number;
  min: number;
  max: number;
  mean: number;
  p50: number;
  p99: number;
}

export interface StatsMsg {
  type: "stats";
  ts: number;
  e2e_us: Record<string, StatsBlock>;
  motion_to_photon_us?: StatsBlock;
  stage_us?: Record<string, Record<string, number>>;
}

export interface ReportMsg {
  type: "report";
  report: Record<string, unknown>;
}

export interface ErrorMsg {
  type: "error";
  error: string;
}

export type GatewayMsg = HelloMsg | StateMsg | TilesMsg | StatsMsg | ReportMsg | ErrorMsg;

export interface TipCommand {
  cmd: "tip";
  x: number;
  y: number;
  z: number;
}

export function serializeCommand(cmd: TipCommand): string {
  return JSON.stringify(cmd) + "\n";
}

export function parseMessage(line: string): GatewayMsg {
  const msg = JSON.parse(line) as { type?: string };
  if (typeof msg !== "object" || msg === null || typeof msg.type !== "string") {
    throw new Error("gateway frame without a type field");
  }
  return msg as GatewayMsg;
}

/** Splits a TCP byte stream into newline-delimited frames. */
export class LineFrameDecoder {
  private buffer = "";

  push(chunk: Buffer | string): string[] {
    this.buffer += chunk.toString();
    const frames: string[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, idx).trim();
      this.buffer = this.buffer.slice(idx + 1);
      if (line.length > 0) frames.push(line);
    }
    return frames;
  }
}

export function decodeTilePixels(tile: TileMsg): Uint8Array {
  const raw = Buffer.from(tile.px, "base64");
  if (raw.length !== tile.w * tile.h) {
    throw new Error(`tile ${tile.i}: ${raw.length} bytes for ${tile.w}x${tile.h}`);
  }
  return new Uint8Array(raw);
}
