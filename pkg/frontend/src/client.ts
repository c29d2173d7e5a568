/**
 * Gateway client over a TCP line-frame stream with reconnect and backoff.
 */

import * as net from "node:net";

import { LineFrameDecoder, parseMessage, serializeCommand } from "./protocol.js";
import type { GatewayMsg, TipCommand } from "./protocol.js";
import { applyMessage, initialState } from "./state.js";
import type { ConsoleState } from "./state.js";

export interface ClientOptions {
  host: string;
  port: number;
  /** backoff schedule in ms; the last entry repeats */
  backoffMs?: number[];
  reconnect?: boolean;
}

type Listener = (msg: GatewayMsg, state: ConsoleState) => void;
type StatusListener = (state: ConsoleState) => void;

export class GatewayClient {
  readonly state: ConsoleState = initialState();
  private socket: net.Socket | null = null;
  private decoder = new LineFrameDecoder();
  private listeners: Listener[] = [];
  private statusListeners: StatusListener[] = [];
  private attempt = 0;
  private closed = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private readonly backoff: number[];

  constructor(private readonly options: ClientOptions) {
    this.backoff = options.backoffMs ?? [500, 1000, 2000, 5000];
  }

  connect(): void {
    if (this.closed) return;
    this.state.connection = this.attempt === 0 ? "connecting" : "reconnecting";
    this.notifyStatus();
    const socket = net.createConnection({ host: this.options.host, port: this.options.port });
    this.socket = socket;
    socket.setNoDelay(true);
    socket.on("connect", () => {
      this.attempt = 0;
      this.decoder = new LineFrameDecoder();
    });
    socket.on("data", (chunk) => {
      for (const line of this.decoder.push(chunk)) {
        let msg: GatewayMsg;
        try {
          msg = parseMessage(line);
        } catch {
          continue; // tolerate garbage; the stream resynchronizes on newlines
        }
        applyMessage(this.state, msg);
        if (msg.type === "hello") this.notifyStatus();
        for (const fn of this.listeners) fn(msg, this.state);
      }
    });
    socket.on("error", () => {
      /* close follows; reconnect handled there */
    });
    socket.on("close", () => {
      if (this.closed) return;
      this.state.connection = "reconnecting";
      this.notifyStatus();
      if (this.options.reconnect === false) {
        this.state.connection = "closed";
        this.notifyStatus();
        return;
      }
      const wait = this.backoff[Math.min(this.attempt, this.backoff.length - 1)];
      this.attempt += 1;
      this.reconnectTimer = setTimeout(() => this.connect(), wait);
    });
  }

  onMessage(fn: Listener): void {
    this.listeners.push(fn);
  }

  onStatus(fn: StatusListener): void {
    this.statusListeners.push(fn);
  }

  private notifyStatus(): void {
    for (const fn of this.statusListeners) fn(this.state);
  }

  sendCommand(cmd: TipCommand): boolean {
    if (!this.socket || this.socket.destroyed || this.state.connection !== "connected") {
      return false;
    }
    this.socket.write(serializeCommand(cmd));
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.state.connection = "closed";
    this.socket?.destroy();
    this.notifyStatus();
  }

  /** Resolves once a predicate holds over an incoming message. */
  waitFor<T extends GatewayMsg>(
    predicate: (msg: GatewayMsg) => msg is T,
    timeoutMs = 10_000,
  ): Promise<T> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new Error("timed out waiting for gateway message")),
        timeoutMs,
      );
      this.onMessage((msg) => {
        if (predicate(msg)) {
          clearTimeout(timer);
          resolve(msg);
        }
      });
    });
  }
}
