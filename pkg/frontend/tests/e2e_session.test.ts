/**
 * Console loop against a live session (wall mode, both roles, loopback):
 * a scripted pointer drag must produce slave-tip updates rendered within
 * two stats periods, and the displayed end-to-end latency must equal the
 * session report's values for the same units exactly.
 */

import { spawn, type ChildProcess } from "node:child_process";
import * as fs from "node:fs";
import * as net from "node:net";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { GatewayClient } from "../src/client.js";
import { CommandThrottle, pointerToCommand, projectToCanvas } from "../src/mapping.js";
import type { GatewayMsg, StateMsg } from "../src/protocol.js";
import { RecordingPainter, renderView } from "../src/render.js";
import { displayedE2E } from "../src/state.js";

const PKG_ROOT = path.resolve(__dirname, "..", "..");
const STATS_PERIOD_MS = 150;
const DURATION_S = 6;

function freeUdpPort(): Promise<number> {
  return new Promise((resolve) => {
    const sock = net.createServer();
    sock.listen(0, "127.0.0.1", () => {
      const port = (sock.address() as net.AddressInfo).port;
      sock.close(() => resolve(port));
    });
  });
}

let proc: ChildProcess;
let gatewayPort: number;
let reportPath: string;
let stderrBuf = "";
let stdoutBuf = "";
let exitPromise: Promise<number | null>;

beforeAll(async () => {
  const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "teleop-console-"));
  reportPath = path.join(tmp, "report.json");
  const cfgPath = path.join(tmp, "session.json");
  fs.writeFileSync(
    cfgPath,
    JSON.stringify({
      seed: 11,
      haptic: { rate_hz: 250 },
      video: { fps: 10 },
      gateway: { stats_period_ms: STATS_PERIOD_MS },
      wall: {
        operator_port: await freeUdpPort(),
        teleoperator_port: await freeUdpPort(),
      },
    }),
  );

  proc = spawn(
    "python3",
    [
      "-m", "teleop.cli", "run",
      "--mode", "wall",
      "--master", "live",
      "--config", cfgPath,
      "--duration", `${DURATION_S}s`,
      "--gateway-port", "0",
      "--report", reportPath,
    ],
    { cwd: PKG_ROOT, env: { ...process.env, PYTHONPATH: path.join(PKG_ROOT, "src") } },
  );
  proc.stdout!.on("data", (d) => (stdoutBuf += d.toString()));
  proc.stderr!.on("data", (d) => (stderrBuf += d.toString()));
  exitPromise = new Promise((resolve) => proc.on("exit", resolve));

  gatewayPort = await new Promise<number>((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error(`gateway never announced; stderr: ${stderrBuf}`)),
      20_000,
    );
    const poll = setInterval(() => {
      const m = stderrBuf.match(/gateway listening on [\d.]+:(\d+)/);
      if (m) {
        clearTimeout(timer);
        clearInterval(poll);
        resolve(Number(m[1]));
      }
    }, 20);
  });
}, 30_000);

afterAll(async () => {
  if (proc && proc.exitCode === null) {
    proc.kill("SIGKILL");
  }
});

describe("console against a live session", () => {
  it("drag moves the slave tip, rendered within two stats periods, and displayed e2e equals the report", async () => {
    const client = new GatewayClient({ host: "127.0.0.1", port: gatewayPort, reconnect: false });
    const states: Array<{ atMs: number; msg: StateMsg }> = [];
    client.onMessage((msg) => {
      if (msg.type === "state") states.push({ atMs: Date.now(), msg });
    });
    client.connect();

    const hello = await client.waitFor(
      (m): m is Extract<GatewayMsg, { type: "hello" }> => m.type === "hello",
      15_000,
    );
    expect(hello.role).toBe("commander");
    const frame = hello.frame!;
    const ws = hello.workspace!;
    const period = hello.stats_period_ms ?? STATS_PERIOD_MS;

    // wait for the stream to be alive before dragging
    await client.waitFor((m): m is StateMsg => m.type === "state", 15_000);

    // scripted pointer drag: center -> right edge across 30 points
    const throttle = new CommandThrottle((cmd) => client.sendCommand(cmd), 60);
    const centerU = (frame[0] - 1) / 2;
    const centerV = (frame[1] - 1) / 2;
    const dragStartMs = Date.now();
    for (let i = 0; i <= 30; i++) {
      const u = centerU + ((frame[0] - 1 - centerU) * i) / 30;
      throttle.offer(pointerToCommand(u, centerV, frame[0], frame[1], ws, 0));
      await new Promise((r) => setTimeout(r, 4));
    }
    throttle.flush();

    // the slave tip must move away from center and the update must arrive
    // within two stats periods of the command that produced it
    const moved = await new Promise<{ atMs: number; msg: StateMsg }>((resolve, reject) => {
      const deadline = setTimeout(
        () => reject(new Error("slave tip never moved")),
        8_000,
      );
      const check = setInterval(() => {
        const hit = states.find(
          (s) => s.atMs >= dragStartMs && s.msg.slave_tip[0] > 0.02,
        );
        if (hit) {
          clearTimeout(deadline);
          clearInterval(check);
          resolve(hit);
        }
      }, 10);
    });
    expect(moved.atMs - dragStartMs).toBeLessThanOrEqual(2 * period + 50);

    // rendering the updated state moves the tip marker off center
    const painter = new RecordingPainter();
    renderView(client.state, painter);
    const markers = painter.find("marker");
    expect(markers.length).toBe(1);
    const centerPx = projectToCanvas([0, 0, 0], frame[0], frame[1], ws);
    expect(markers[0].x as number).toBeGreaterThan(centerPx[0]);

    // session end: the report frame arrives and the console displays its
    // e2e values verbatim
    await client.waitFor(
      (m): m is Extract<GatewayMsg, { type: "report" }> => m.type === "report",
      (DURATION_S + 15) * 1000,
    );
    const exitCode = await exitPromise;
    expect(exitCode).toBe(0);

    const reportFile = JSON.parse(fs.readFileSync(reportPath, "utf8")) as {
      units: { classes: Record<string, { e2e_us?: { mean: number } }> };
    };
    expect(client.state.report).toEqual(reportFile);

    const displayed = displayedE2E(client.state);
    let compared = 0;
    for (const [cls, entry] of Object.entries(reportFile.units.classes)) {
      if (entry.e2e_us) {
        expect(displayed[cls]).toBe(entry.e2e_us.mean);
        compared += 1;
      }
    }
    expect(compared).toBeGreaterThan(0);
    expect(displayed["vid"]).toBeDefined();

    client.close();
  }, 60_000);
});
