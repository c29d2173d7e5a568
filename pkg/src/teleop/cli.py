"""Command-line entry points.

    teleop run          virtual-time session (default) or --mode wall
    teleop operator     wall-time operator role over UDP
    teleop teleoperator wall-time teleoperator role over UDP
    teleop replay       recompute a report from dumped traces
    teleop validate     check a config file, naming each bad field
"""

from __future__ import annotations

import argparse
import sys
import time

from .config import (
    ConfigError,
    SessionConfig,
    load_config,
    parse_duration,
    validate_config,
)
from .gateway import GatewayServer
from .metrics import build_report, dump_traces, emit_report, format_report, load_traces
from .session import Pacer, SessionError, VirtualSession


def _load_cfg(args) -> SessionConfig:
    cfg = load_config(args.config) if args.config else SessionConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "duration", None) is not None:
        cfg.duration_us = parse_duration(args.duration)
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "master", None):
        cfg.master = args.master
    if getattr(args, "gateway_port", None) is not None:
        cfg.gateway.port = args.gateway_port
        if cfg.gateway.port != 0 or args.gateway_port == 0:
            cfg.gateway.port = args.gateway_port
    return cfg


def _emit(report_text: str, args) -> None:
    if args.report:
        with open(args.report, "w") as f:
            f.write(report_text)
    else:
        sys.stdout.write(report_text)


def _maybe_gateway(cfg, enabled: bool) -> GatewayServer | None:
    if not enabled:
        return None
    gw = GatewayServer(cfg.gateway.host, cfg.gateway.port, cfg.gateway.stats_period_ms)
    gw.configure_hello(cfg)
    port = gw.start()
    print(f"gateway listening on {cfg.gateway.host}:{port}", file=sys.stderr, flush=True)
    return gw


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    errors = validate_config(cfg)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1

    use_gateway = args.gateway_port is not None
    if cfg.mode == "wall":
        from .realtime import start_roles

        cfg.roles = "both"
        gw = _maybe_gateway(cfg, use_gateway)
        handle = start_roles(cfg, gw)
        try:
            time.sleep(cfg.duration_us / 1e6)
        except KeyboardInterrupt:
            pass
        data = handle.stop()
    else:
        gw = _maybe_gateway(cfg, use_gateway)
        session = VirtualSession(cfg)
        session.gateway = gw
        pace = Pacer() if (use_gateway and args.pace) else None
        data = session.run(pace)

    report = build_report(data)
    if gw is not None:
        gw.send_report(report)
        time.sleep(0.1)  # let the frame flush before teardown
        gw.stop()
    if args.dump_traces:
        dump_traces(data, args.dump_traces)
    _emit(format_report(report), args)
    return 0


def _run_single_role(args, role: str) -> int:
    from .realtime import start_roles

    cfg = _load_cfg(args)
    cfg.mode = "wall"
    cfg.roles = role
    errors = validate_config(cfg)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    gw = _maybe_gateway(cfg, role == "operator" and args.gateway_port is not None)
    try:
        handle = start_roles(cfg, gw)
    except SessionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        time.sleep(cfg.duration_us / 1e6)
    except KeyboardInterrupt:
        pass
    data = handle.stop()
    report = build_report(data)
    if gw is not None:
        gw.send_report(report)
        gw.stop()
    if args.dump_traces:
        dump_traces(data, args.dump_traces)
    _emit(format_report(report), args)
    return 0


def cmd_replay(args) -> int:
    try:
        data = load_traces(args.traces)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: cannot load traces from {args.traces}: {e}", file=sys.stderr)
        return 1
    _emit(emit_report(data), args)
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else SessionConfig()
    except ConfigError as e:
        for err in e.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    errors = validate_config(cfg)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    print("config ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teleop",
        description="Multimodal teleoperation stack: haptic + tiled video over an emulated link",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, duration_default=None):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="session seed")
        p.add_argument("--duration", default=duration_default,
                       help="run length, e.g. 10s, 500ms, 250us")
        p.add_argument("--report", help="write the JSON report to this path")
        p.add_argument("--dump-traces", help="write stage/position/mux traces to this directory")
        p.add_argument("--gateway-port", type=int, default=None,
                       help="serve the console gateway on this port (0 = ephemeral)")

    p_run = sub.add_parser("run", help="run a session and print the report")
    common(p_run)
    p_run.add_argument("--mode", choices=["virtual", "wall"], default="virtual")
    p_run.add_argument("--master", choices=["scripted", "live"], default=None)
    p_run.add_argument("--pace", action="store_true",
                       help="pace the virtual clock to wall time (live console use)")
    p_run.set_defaults(fn=cmd_run)

    p_op = sub.add_parser("operator", help="wall-time operator role")
    common(p_op, duration_default="10s")
    p_op.add_argument("--master", choices=["scripted", "live"], default=None)
    p_op.set_defaults(fn=lambda a: _run_single_role(a, "operator"))

    p_tel = sub.add_parser("teleoperator", help="wall-time teleoperator role")
    common(p_tel, duration_default="10s")
    p_tel.set_defaults(fn=lambda a: _run_single_role(a, "teleoperator"))

    p_replay = sub.add_parser("replay", help="rebuild the report from dumped traces")
    p_replay.add_argument("--traces", required=True, help="trace directory from --dump-traces")
    p_replay.add_argument("--report", help="write the JSON report to this path")
    p_replay.set_defaults(fn=cmd_replay)

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("--config", help="JSON config file (defaults pass)")
    p_val.set_defaults(fn=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        for err in e.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    except SessionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
