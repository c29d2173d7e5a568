/**
 * Console state: a pure reducer over gateway messages.
 *
 * The console renders only received data; physics never runs locally, so a
 * reconnect converges to the gateway's current state within one stats
 * period of messages.
 */

import {
  decodeTilePixels,
  type GatewayMsg,
  type HelloMsg,
  type StatsMsg,
  type TileMsg,
  type Vec3Tuple,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "reconnecting" | "closed";
export type InputMode = "pointer-drag" | "keyboard-nudge";

export interface TileView {
  index: number;
  frameId: number;
  x: number;
  y: number;
  w: number;
  h: number;
  roi: boolean;
  displayTs: number;
  pixels: Uint8Array;
}

export interface ConsoleState {
  connection: ConnectionStatus;
  role: "commander" | "observer" | null;
  hello: HelloMsg | null;
  tiles: Map<number, TileView>;
  latestFrameId: number;
  slaveTip: Vec3Tuple | null;
  force: Vec3Tuple;
  contact: boolean;
  masterTip: Vec3Tuple | null;
  stats: StatsMsg | null;
  report: Record<string, unknown> | null;
  lastError: string | null;
  inputMode: InputMode;
}

export function initialState(): ConsoleState {
  return {
    connection: "connecting",
    role: null,
    hello: null,
    tiles: new Map(),
    latestFrameId: -1,
    slaveTip: null,
    force: [0, 0, 0],
    contact: false,
    masterTip: null,
    stats: null,
    report: null,
    lastError: null,
    inputMode: "pointer-drag",
  };
}

function applyTile(state: ConsoleState, tile: TileMsg): void {
  const existing = state.tiles.get(tile.i);
  // newest frame wins per tile slot; stale frames never overwrite
  if (existing && existing.frameId > tile.frame_id) return;
  state.tiles.set(tile.i, {
    index: tile.i,
    frameId: tile.frame_id,
    x: tile.x,
    y: tile.y,
    w: tile.w,
    h: tile.h,
    roi: tile.roi,
    displayTs: tile.ts,
    pixels: decodeTilePixels(tile),
  });
  if (tile.frame_id > state.latestFrameId) state.latestFrameId = tile.frame_id;
}

export function applyMessage(state: ConsoleState, msg: GatewayMsg): ConsoleState {
  switch (msg.type) {
    case "hello":
      state.hello = msg;
      state.role = msg.role;
      state.connection = "connected";
      break;
    case "state":
      state.slaveTip = msg.slave_tip;
      state.force = msg.force;
      state.contact = msg.contact;
      state.masterTip = msg.master;
      break;
    case "tiles":
      for (const tile of msg.tiles) applyTile(state, tile);
      break;
    case "stats":
      state.stats = msg;
      break;
    case "report":
      state.report = msg.report;
      break;
    case "error":
      state.lastError = msg.error;
      break;
  }
  return state;
}

/**
 * The end-to-end latency values the console displays: taken verbatim from
 * the final report when present, otherwise from the rolling stats stream.
 * Never recomputed locally, so they match the session's records exactly.
 */
export function displayedE2E(state: ConsoleState): Record<string, number> {
  const out: Record<string, number> = {};
  if (state.report) {
    const units = state.report["units"] as
      | { classes?: Record<string, { e2e_us?: { mean: number } }> }
      | undefined;
    if (units?.classes) {
      for (const [cls, entry] of Object.entries(units.classes)) {
        if (entry.e2e_us) out[cls] = entry.e2e_us.mean;
      }
      return out;
    }
  }
  if (state.stats) {
    for (const [cls, block] of Object.entries(state.stats.e2e_us)) {
      out[cls] = block.mean;
    }
  }
  return out;
}
