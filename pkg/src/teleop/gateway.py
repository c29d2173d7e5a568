"""Console gateway: bidirectional text frames over TCP.

Frames are single-line JSON documents terminated by "\\n" (a WebSocket-style
message stream without the HTTP layer, so both ends stay dependency-free).

Downstream (session -> console):
  {"type": "hello", ...}            once per connection, role + geometry
  {"type": "state", ...}            slave tip, force, contact, master tip
  {"type": "tiles", ...}            newly displayed tiles, pixels base64
  {"type": "stats", ...}            rolling latency stats from live records
  {"type": "report", "report": {}}  the final session report
  {"type": "error", "error": ".."}  protocol violation, connection closes

Upstream (console -> session):
  {"cmd": "tip", "x": .., "y": .., "z": ..}

The first connected console holds command authority; later consoles receive
the same stream read-only.
"""

from __future__ import annotations

import base64
import json
import socket
import threading
from collections import deque

from .metrics import is_complete, motion_to_photon, unit_class
from .stats import summarize
from .video import EncodedTile, decode_tile_pixels
from .wire import Timestamp, Vec3
from .world import MasterSource


class GatewayError(Exception):
    pass


class _Client:
    def __init__(self, sock: socket.socket, addr, commander: bool):
        self.sock = sock
        self.addr = addr
        self.commander = commander
        self.lock = threading.Lock()
        self.alive = True

    def send_obj(self, obj: dict) -> bool:
        data = (json.dumps(obj, sort_keys=True) + "\n").encode()
        with self.lock:
            if not self.alive:
                return False
            try:
                self.sock.sendall(data)
                return True
            except OSError:
                self.alive = False
                return False

    def close(self):
        with self.lock:
            self.alive = False
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()


class GatewayServer:
    """Threaded accept loop feeding a session-owned command queue."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, stats_period_ms: int = 50):
        self.host = host
        self.port = port
        self.stats_period_ms = stats_period_ms
        self._listener: socket.socket | None = None
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._commands: deque[Vec3] = deque()
        self._cmd_lock = threading.Lock()
        self._accept_thread: threading.Thread | None = None
        self._stopping = False
        self._hello_payload: dict = {}
        self._pending_tiles: list[dict] = []
        self._session = None

    # --- lifecycle -----------------------------------------------------------

    def start(self) -> int:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.host, self.port))
        except OSError as e:
            raise GatewayError(f"cannot bind gateway to {self.host}:{self.port}: {e}") from e
        listener.listen(8)
        self._listener = listener
        self.port = listener.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self.port

    def stop(self) -> None:
        self._stopping = True
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.close()

    def _accept_loop(self) -> None:
        while not self._stopping:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._clients_lock:
                commander = not any(c.commander and c.alive for c in self._clients)
                client = _Client(sock, addr, commander)
                self._clients.append(client)
            hello = {"type": "hello", "role": "commander" if commander else "observer"}
            hello.update(self._hello_payload)
            client.send_obj(hello)
            threading.Thread(target=self._read_loop, args=(client,), daemon=True).start()

    def _read_loop(self, client: _Client) -> None:
        buf = b""
        while client.alive and not self._stopping:
            try:
                chunk = client.sock.recv(4096)
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if not line.strip():
                    continue
                if not self._handle_frame(client, line):
                    client.close()
                    return
        client.alive = False

    def _handle_frame(self, client: _Client, line: bytes) -> bool:
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("frame must be an object")
        except ValueError as e:
            client.send_obj({"type": "error", "error": f"malformed frame: {e}"})
            return False
        if msg.get("cmd") == "tip":
            if not client.commander:
                return True  # observers have no command authority
            try:
                v = Vec3(float(msg["x"]), float(msg["y"]), float(msg["z"]))
            except (KeyError, TypeError, ValueError):
                client.send_obj({"type": "error", "error": "tip command needs numeric x, y, z"})
                return False
            with self._cmd_lock:
                self._commands.append(v)
            return True
        client.send_obj({"type": "error", "error": f"unknown command {msg.get('cmd')!r}"})
        return False

    # --- session-side hooks (called on the session thread) --------------------

    def drain_commands(self, master: MasterSource) -> None:
        with self._cmd_lock:
            cmds = list(self._commands)
            self._commands.clear()
        for v in cmds:
            master.set_live_command(v)

    def tile_displayed(self, tile: EncodedTile, ts: Timestamp) -> None:
        x, y, w, h = tile.rect
        pixels = decode_tile_pixels(tile.data, w, h, tile.mode)
        self._pending_tiles.append(
            {
                "frame_id": tile.frame_id,
                "i": tile.tile_index,
                "x": x,
                "y": y,
                "w": w,
                "h": h,
                "roi": tile.is_roi,
                "ts": ts,
                "px": base64.b64encode(pixels.tobytes()).decode("ascii"),
            }
        )

    def configure_hello(self, cfg) -> None:
        """Geometry for the hello frame; safe to call before start()."""
        self._hello_payload = {
            "workspace": {
                "lo": list(cfg.workspace.bounds_lo.as_tuple()),
                "hi": list(cfg.workspace.bounds_hi.as_tuple()),
            },
            "frame": [cfg.video.frame_width, cfg.video.frame_height],
            "grid": [cfg.video.grid_cols, cfg.video.grid_rows],
            "f_max": cfg.haptic.f_max_n,
            "stats_period_ms": self.stats_period_ms,
        }

    def start_session_events(self, session) -> None:
        self._session = session
        cfg = session.cfg
        self.configure_hello(cfg)
        period_us = self.stats_period_ms * 1000
        def emit(ts=period_us):
            self._emit_periodic(ts)
            nxt = ts + period_us
            if nxt <= cfg.duration_us:
                session.loop.schedule(nxt, lambda: emit(nxt))
        session.loop.schedule(period_us, lambda: emit(period_us))

    def _emit_periodic(self, ts: Timestamp) -> None:
        s = self._session
        view = s.op_view
        self.broadcast(
            {
                "type": "state",
                "ts": ts,
                "slave_tip": list(view["slave_tip"].as_tuple()),
                "force": list(view["force"].as_tuple()),
                "contact": view["contact"],
                "master": list(s.cmd_deadband.last_sent.as_tuple())
                if s.cmd_deadband.last_sent
                else None,
            }
        )
        if self._pending_tiles:
            tiles, self._pending_tiles = self._pending_tiles, []
            self.broadcast({"type": "tiles", "ts": ts, "tiles": tiles})
        self.broadcast({"type": "stats", "ts": ts, **self.rolling_stats()})

    def rolling_stats(self) -> dict:
        """Latency stats straight from the live records (never recomputed)."""
        s = self._session
        e2e: dict[str, list[int]] = {}
        for unit_id, stages in s.collector.records.items():
            if is_complete(unit_id, stages):
                e2e.setdefault(unit_class(unit_id), []).append(stages[-1][1] - stages[0][1])
        out = {"e2e_us": {cls: summarize(v) for cls, v in sorted(e2e.items()) if v}}
        mtp = motion_to_photon(s.collector.records)
        if mtp:
            out["motion_to_photon_us"] = summarize(mtp)
        return out

    def send_report(self, report: dict) -> None:
        self.broadcast({"type": "report", "report": report})

    def broadcast(self, obj: dict) -> None:
        with self._clients_lock:
            clients = [c for c in self._clients if c.alive]
        for c in clients:
            c.send_obj(obj)

    @property
    def client_count(self) -> int:
        with self._clients_lock:
            return sum(1 for c in self._clients if c.alive)
