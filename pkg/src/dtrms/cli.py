"""Command-line entry point: ``dtrms <simulate|serve|calibrate|replay|inspect|query>``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import frame_codec
from .calibration import (
    DEFAULT_TOLERANCE_CODES,
    build_table,
    points_to_csv,
    ratio_spread,
    run_sweep,
    verify_constancy,
)
from .config import CONFIG_ENV, ConfigError, default_config_path, load_scenario
from .coordinator import Coordinator, DeviceProfile
from .errors import DtrmsError
from .network_sim import RadioModel, Trace, run, simulated_transport
from .signal_chain import Chain

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

STATE_FILE = "state.json"
CAPTURE_FILE = "capture.bin"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _scenario(args):
    path = args.config or default_config_path()
    if not path:
        raise ConfigError(f"no config given (use --config or set {CONFIG_ENV})")
    s = load_scenario(path)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        if args.duration <= 0:
            raise ConfigError("--duration must be positive")
        over["duration_s"] = args.duration
    if getattr(args, "loss", None) is not None:
        try:
            over["radio"] = RadioModel(args.loss, s.radio.max_retries, s.radio.ack_timeout_ms,
                                       s.radio.tx_duration_ms)
        except ValueError as exc:
            raise ConfigError(f"--loss: {exc}") from None
    return s.replace(**over) if over else s


def _out_paths(out: Path, s) -> dict:
    c = s.coordinator
    return {
        "trace": out / c.trace,
        "readings": out / c.reading_log,
        "alarms": out / c.alarm_log,
        "capture": out / CAPTURE_FILE,
        "state": out / STATE_FILE,
    }


def _fresh(*paths):
    for p in paths:
        p.parent.mkdir(parents=True, exist_ok=True)
        if p.exists():
            p.unlink()


def cmd_simulate(args) -> int:
    s = _scenario(args)
    out = Path(args.out)
    paths = _out_paths(out, s)
    _fresh(*paths.values())
    result = run(s, reading_log=paths["readings"], alarm_log=paths["alarms"])
    trace = result.trace
    paths["trace"].write_text(trace.to_jsonl())
    paths["capture"].write_bytes(b"".join(bytes.fromhex(e["frame"]) for e in trace.of_kind("rx")))
    coord = result.coordinator
    state = {
        "rings": {f"{a:016X}": d.dump_ring() for a, d in sorted(result.devices.items())},
        "stats": coord.stats(),
        "snapshot": coord.snapshot(),
        "drops": trace.drops_by_device(),
    }
    paths["state"].write_text(json.dumps(state, indent=2) + "\n")
    st = coord.stats()
    dropped = sum(state["drops"].values())
    print(f"frames ok {st['frames_ok']}, dropped {dropped}, bad {st['frames_bad']}, "
          f"alarms raised {st['alarms_raised']}")
    print(f"trace sha256 {trace.digest()}")
    return EXIT_OK


def cmd_replay(args) -> int:
    s = _scenario(args)
    src = Path(args.source)
    if not src.exists():
        raise ConfigError(f"{src}: replay source not found")
    out = Path(args.out)
    paths = _out_paths(out, s)
    _fresh(paths["readings"], paths["alarms"])
    profiles = {d.device_addr: DeviceProfile.from_config(d) for d in s.devices}
    data = src.read_bytes()
    if data[:1] == bytes((frame_codec.START,)):
        records = []
        for raw in frame_codec.iter_frames(data):
            try:
                t = frame_codec.decode(raw).timestamp_s
            except DtrmsError:
                t = records[-1][1] if records else 0
            records.append((raw, t, 0))
        horizon = None
    else:
        trace = Trace.from_jsonl(data.decode())
        records = [(bytes.fromhex(e["frame"]), e["t_s"], e["hops"]) for e in trace.of_kind("rx")]
        ends = trace.of_kind("end")
        horizon = ends[-1]["duration_s"] if ends else None
    coord = Coordinator(profiles, s.coordinator, paths["readings"], paths["alarms"], horizon_s=horizon)
    for raw, t, hops in records:
        try:
            coord.ingest(raw, t, hops)
        except DtrmsError:
            pass
    if horizon is not None:
        coord.advance(horizon)
    coord.flush()
    st = coord.stats()
    print(f"replayed {len(records)} frames: ok {st['frames_ok']}, bad {st['frames_bad']}, "
          f"unknown {st['frames_unknown']}, alarms raised {st['alarms_raised']}")
    return EXIT_OK


def _count_lines(p: Path) -> int:
    if not p.exists():
        return 0
    with p.open(encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


def cmd_inspect(args) -> int:
    d = Path(args.dir)
    state_p = d / STATE_FILE
    state = json.loads(state_p.read_text()) if state_p.exists() else {}
    rings = state.get("rings", {})
    if args.what == "rings":
        for recs in rings.values():
            for r in recs:
                print(json.dumps(r, separators=(",", ":")))
        return EXIT_OK
    stats = state.get("stats") or {"frames_ok": 0, "frames_bad": 0, "frames_unknown": 0,
                                   "alarms_raised": 0, "gaps": {}}
    doc = {
        "rings": rings,
        "reading_log_lines": _count_lines(d / "readings.jsonl"),
        "alarm_log_lines": _count_lines(d / "alarms.jsonl"),
        "stats": stats,
        "drops": state.get("drops", {}),
    }
    if args.what == "stats":
        doc = stats
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    if args.config or default_config_path():
        s = _scenario(args)
        devs = s.devices
        if args.device:
            devs = [d for d in devs if d.device_addr == int(args.device, 16)]
            if not devs:
                raise ConfigError(f"--device {args.device} is not configured")
        chain = devs[0].chain
        radio = s.radio
    else:
        chain, radio = Chain(), RadioModel()
    if args.zero_offset:
        from dataclasses import replace
        chain = replace(chain, amp=replace(chain.amp, offset_volts=0.0))
    if args.step <= 0 or args.stop <= args.start:
        raise UsageError("need --start < --stop and a positive --step")
    n = int(round((args.stop - args.start) / args.step))
    temps = [round(args.start + i * args.step, 9) for i in range(n + 1)]
    if args.transport == "simulated":
        if args.loss is not None:
            radio = RadioModel(args.loss, radio.max_retries, radio.ack_timeout_ms, radio.tx_duration_ms)
        transport = simulated_transport(radio, args.seed)
    else:
        transport = None
    points = run_sweep(temps, chain, transport)
    missing = [p.set_temp_c for p in points if p.missing]
    table = build_table(points)
    Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
    Path(args.csv).write_text(points_to_csv(points))
    table.save_json(args.json)
    res = verify_constancy(table, args.tolerance)
    print(f"slope {table.slope_codes_per_volt:.4f} codes/V, intercept {table.intercept_codes:.4f}, "
          f"max residual {table.max_residual_codes:.4f} codes")
    if missing:
        print(f"missing points (frames lost): {missing}")
    if chain.amp.offset_volts == 0.0:
        print(f"code/voltage ratio spread {100 * ratio_spread(points):.3f}%")
    if res.passed:
        print(f"constancy PASS (tolerance {args.tolerance} codes)")
        return EXIT_OK
    print(f"constancy FAIL at {res.worst.set_temp_c} °C (residual {res.max_residual_codes:.3f} codes)")
    return EXIT_RUNTIME


def _address(text: str):
    host, _, port = text.rpartition(":")
    try:
        return (host or "127.0.0.1", int(port))
    except ValueError:
        raise UsageError(f"bad address {text!r}, expected HOST:PORT") from None


def cmd_serve(args) -> int:
    from .service import CoordinatorServer

    s = _scenario(args)
    out = Path(args.out)
    paths = _out_paths(out, s)
    profiles = {d.device_addr: DeviceProfile.from_config(d) for d in s.devices}
    coord = Coordinator.recover(profiles, s.coordinator, paths["readings"], paths["alarms"])
    try:
        server = CoordinatorServer(_address(args.listen), coord)
    except OSError as exc:
        print(f"AddressInUse: cannot listen on {args.listen}: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_query(args) -> int:
    from .service import request

    try:
        req = json.loads(args.request)
    except json.JSONDecodeError as exc:
        raise UsageError(f"request is not JSON: {exc.msg}") from None
    reply = request(_address(args.connect), req)
    print(json.dumps(reply, indent=2))
    return EXIT_OK if reply and reply.get("ok") else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dtrms", description="Distributed transformer monitoring simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help=f"scenario JSON (default: ${CONFIG_ENV})")

    sp = sub.add_parser("simulate", help="run a scenario and write trace and logs")
    with_config(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--duration", type=float, help="override duration_s")
    sp.add_argument("--loss", type=float, help="override radio loss_prob")
    sp.add_argument("--out", default="out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("serve", help="run the coordinator on a local socket")
    with_config(sp)
    sp.add_argument("--listen", default="127.0.0.1:7070")
    sp.add_argument("--out", default="out")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("calibrate", help="temperature sweep and affine fit")
    with_config(sp)
    sp.add_argument("--device", help="device address (hex) whose chain to use")
    sp.add_argument("--start", type=float, default=-40.0)
    sp.add_argument("--stop", type=float, default=120.0)
    sp.add_argument("--step", type=float, default=10.0)
    sp.add_argument("--transport", choices=("ideal", "simulated"), default="ideal")
    sp.add_argument("--loss", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--zero-offset", action="store_true", help="force amplifier offset to 0 V")
    sp.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE_CODES)
    sp.add_argument("--csv", default="calibration.csv")
    sp.add_argument("--json", default="calibration.json")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("replay", help="re-ingest a trace or frame capture")
    with_config(sp)
    sp.add_argument("source", help="trace.jsonl or binary frame capture")
    sp.add_argument("--out", default="replay")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("inspect", help="dump ring buffers, log sizes and stats")
    sp.add_argument("dir", nargs="?", default="out")
    sp.add_argument("--what", choices=("all", "rings", "stats"), default="all")
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("query", help="send one JSON request to a running serve")
    sp.add_argument("request")
    sp.add_argument("--connect", default="127.0.0.1:7070")
    sp.set_defaults(func=cmd_query)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code or 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}" if isinstance(exc, ConfigError) else str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (DtrmsError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
