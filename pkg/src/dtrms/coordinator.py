"""Receiver-side service: decode frames, persist readings, drive the 2x16
LCD, and maintain the alarm state machines.

Ingestion is serialized behind a lock; queries take the same lock and copy
what they return, so a reader never observes a half-applied reading.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from . import frame_codec
from .calibration import CalibrationTable
from .errors import FrameError, MalformedQuery, OutOfRange, UnknownDevice
from .signal_chain import OilState

log = logging.getLogger(__name__)

LCD_WIDTH = 16


class AlarmKind(str, Enum):
    TEMP_HIGH = "TempHigh"
    OIL_LOW = "OilLow"
    DEVICE_OFFLINE = "DeviceOffline"


class AlarmState(str, Enum):
    RAISED = "Raised"
    CLEARED = "Cleared"


@dataclass(frozen=True)
class CoordinatorConfig:
    hysteresis_c: float = 2.0
    offline_multiplier: float = 3.0
    reading_log: str = "readings.jsonl"
    alarm_log: str = "alarms.jsonl"
    trace: str = "trace.jsonl"


@dataclass(frozen=True)
class DeviceProfile:
    """What the coordinator knows about a configured device."""

    addr: int
    table: CalibrationTable
    temp_high_c: float
    sample_period_s: float

    @classmethod
    def from_device(cls, dev) -> "DeviceProfile":
        return cls(dev.addr, dev.table, dev.config.temp_high_c, dev.config.sample_period_s)

    @classmethod
    def from_config(cls, cfg) -> "DeviceProfile":
        return cls(cfg.device_addr, cfg.calibration_table(), cfg.temp_high_c, cfg.sample_period_s)


@dataclass(frozen=True)
class Reading:
    device_addr: int
    sequence: int
    device_timestamp_s: int
    received_at_s: int
    temp_c: float
    temp_code: int
    oil_state: OilState
    battery_mv: int
    hops: int
    status_flags: int = 0

    def to_log(self) -> dict:
        return {
            "addr": f"{self.device_addr:016X}",
            "seq": self.sequence,
            "t_dev": self.device_timestamp_s,
            "t_rx": self.received_at_s,
            "temp_c": self.temp_c,
            "temp_code": self.temp_code,
            "oil": self.oil_state.value,
            "batt_mv": self.battery_mv,
            "hops": self.hops,
            "flags": self.status_flags,
        }

    @classmethod
    def from_log(cls, d: dict) -> "Reading":
        return cls(int(d["addr"], 16), d["seq"], d["t_dev"], d["t_rx"], d["temp_c"],
                   d["temp_code"], OilState(d["oil"]), d["batt_mv"], d["hops"], d.get("flags", 0))


@dataclass(frozen=True)
class AlarmEvent:
    device_addr: int
    kind: AlarmKind
    state: AlarmState
    at_s: float
    reading: Optional[dict] = None

    def to_log(self) -> dict:
        return {
            "addr": f"{self.device_addr:016X}",
            "kind": self.kind.value,
            "state": self.state.value,
            "at_s": self.at_s,
            "reading": self.reading,
        }

    @classmethod
    def from_log(cls, d: dict) -> "AlarmEvent":
        return cls(int(d["addr"], 16), AlarmKind(d["kind"]), AlarmState(d["state"]),
                   d["at_s"], d.get("reading"))


@dataclass(frozen=True)
class LcdBuffer:
    rows: tuple[str, str] = (" " * LCD_WIDTH, " " * LCD_WIDTH)

    def __post_init__(self):
        for r in self.rows:
            if len(r) != LCD_WIDTH or not all(" " <= ch <= "~" for ch in r):
                raise ValueError(f"bad LCD row {r!r}")

    def __str__(self):
        return "\n".join(self.rows)


def _row(text: str) -> str:
    return text[:LCD_WIDTH].ljust(LCD_WIDTH)


def render_lcd(latest: Reading) -> LcdBuffer:
    row1 = f"D{latest.device_addr & 0xFFFF:04X} T:{latest.temp_c:5.1f}C"
    oil = "OK" if latest.oil_state is OilState.NORMAL else "LOW"
    row2 = f"OIL:{oil:<3} S:{latest.sequence:03d}"
    return LcdBuffer((_row(row1), _row(row2)))


def _ms(t_s: float) -> int:
    return int(round(t_s * 1000))


def _secs(ms: int):
    return ms // 1000 if ms % 1000 == 0 else ms / 1000


@dataclass
class _DeviceState:
    profile: DeviceProfile
    last_seen_ms: Optional[int] = None
    last_seq: Optional[int] = None
    last_reading: Optional[Reading] = None
    readings: int = 0
    gaps: int = 0
    active: dict = field(default_factory=lambda: {k: False for k in AlarmKind})


class _JsonlSink:
    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        self._fh = None

    def write(self, rec: dict) -> None:
        if self.path is None:
            return
        if self._fh is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("a", encoding="utf-8")
        self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class Coordinator:
    """Single-writer telemetry sink.

    ``listener(kind, record)`` is called for every ``reading``, ``alarm``,
    ``lcd`` and ``decode_error`` event; ``record["at_s"]`` carries the event
    time.  The simulator uses it to mirror coordinator output into the trace.
    """

    def __init__(self, devices: dict[int, DeviceProfile], config: CoordinatorConfig | None = None,
                 reading_log=None, alarm_log=None,
                 listener: Optional[Callable[[str, dict], None]] = None,
                 start_s: float = 0.0, horizon_s: Optional[float] = None):
        self.config = config or CoordinatorConfig()
        self.devices = {addr: _DeviceState(p) for addr, p in sorted(devices.items())}
        self.listener = listener
        self._lock = threading.RLock()
        self._readings: list[Reading] = []
        self._alarms: list[AlarmEvent] = []
        self._reading_sink = _JsonlSink(reading_log)
        self._alarm_sink = _JsonlSink(alarm_log)
        self.start_ms = _ms(start_s)
        self.now_ms = self.start_ms
        # offline deadlines after the horizon are never evaluated
        self.horizon_ms = None if horizon_s is None else _ms(horizon_s)
        self.lcd = LcdBuffer()
        self.counters = {"frames_ok": 0, "frames_bad": 0, "frames_unknown": 0, "alarms_raised": 0}

    # -- helpers ------------------------------------------------------------

    def _emit(self, event: str, at_ms: int, **rec) -> None:
        if self.listener is not None:
            self.listener(event, {"at_s": _secs(at_ms), **rec})

    def _alarm(self, st: _DeviceState, kind: AlarmKind, state: AlarmState, at_ms: int,
               reading: Optional[Reading]) -> AlarmEvent:
        st.active[kind] = state is AlarmState.RAISED
        ev = AlarmEvent(st.profile.addr, kind, state, _secs(at_ms),
                        reading.to_log() if reading is not None else None)
        self._alarms.append(ev)
        if state is AlarmState.RAISED:
            self.counters["alarms_raised"] += 1
        self._alarm_sink.write(ev.to_log())
        self._emit("alarm", at_ms, node=st.profile.addr, kind=kind.value, state=state.value)
        return ev

    def _offline_limit_ms(self, st: _DeviceState) -> int:
        return _ms(self.config.offline_multiplier * st.profile.sample_period_s)

    def _deadline_ms(self, st: _DeviceState) -> Optional[int]:
        if st.active[AlarmKind.DEVICE_OFFLINE]:
            return None
        ref = st.last_seen_ms if st.last_seen_ms is not None else self.start_ms
        # silence must strictly exceed the limit
        return ref + self._offline_limit_ms(st) + 1

    # -- public API ---------------------------------------------------------

    def next_deadline_ms(self) -> Optional[int]:
        with self._lock:
            dls = [d for d in (self._deadline_ms(st) for st in self.devices.values()) if d is not None]
            return min(dls) if dls else None

    def advance(self, now_s: float) -> list[AlarmEvent]:
        """Move the clock to ``now_s`` and fire DeviceOffline alarms whose
        deadline has passed.  Moving backwards is a no-op."""
        now = _ms(now_s)
        with self._lock:
            if now < self.now_ms:
                return []
            self.now_ms = now
            if self.horizon_ms is not None:
                now = min(now, self.horizon_ms)
            due = []
            for st in self.devices.values():
                dl = self._deadline_ms(st)
                if dl is not None and dl <= now:
                    due.append((dl, st.profile.addr, st))
            return [self._alarm(st, AlarmKind.DEVICE_OFFLINE, AlarmState.RAISED, dl, None)
                    for dl, _, st in sorted(due, key=lambda x: x[:2])]

    tick = advance

    def update_alarms(self, reading: Reading, at_ms: Optional[int] = None) -> list[AlarmEvent]:
        st = self.devices[reading.device_addr]
        at = self.now_ms if at_ms is None else at_ms
        out = []
        if st.active[AlarmKind.DEVICE_OFFLINE]:
            out.append(self._alarm(st, AlarmKind.DEVICE_OFFLINE, AlarmState.CLEARED, at, reading))
        hot = bool(reading.status_flags & frame_codec.FLAG_TEMP_HIGH)
        if not st.active[AlarmKind.TEMP_HIGH] and hot:
            out.append(self._alarm(st, AlarmKind.TEMP_HIGH, AlarmState.RAISED, at, reading))
        elif st.active[AlarmKind.TEMP_HIGH] and \
                reading.temp_c <= st.profile.temp_high_c - self.config.hysteresis_c:
            out.append(self._alarm(st, AlarmKind.TEMP_HIGH, AlarmState.CLEARED, at, reading))
        low = reading.oil_state is OilState.LOW
        if low != st.active[AlarmKind.OIL_LOW]:
            out.append(self._alarm(st, AlarmKind.OIL_LOW,
                                   AlarmState.RAISED if low else AlarmState.CLEARED, at, reading))
        return out

    def ingest(self, raw: bytes, received_at_s: float, hops: int = 0) -> Reading:
        """Decode and record one frame.

        Codec errors, unknown sources and codes outside the device's
        calibrated span are counted as bad frames, logged, and re-raised.
        """
        with self._lock:
            self.advance(received_at_s)
            at = max(_ms(received_at_s), self.now_ms)
            self.now_ms = at
            try:
                p = frame_codec.decode(raw)
            except FrameError as exc:
                self._reject("frames_bad", at, exc)
                raise
            st = self.devices.get(p.source_addr)
            if st is None:
                exc = UnknownDevice(f"frame from unconfigured device {p.source_addr:016X}")
                self._reject("frames_unknown", at, exc)
                raise exc
            try:
                temp_c = round(st.profile.table.temperature(p.temp_code), 3)
            except OutOfRange as exc:
                self._reject("frames_bad", at, exc)
                raise
            reading = Reading(p.source_addr, p.sequence, p.timestamp_s, at // 1000, temp_c,
                              p.temp_code, OilState.LOW if p.oil_low else OilState.NORMAL,
                              p.battery_mv, hops, p.status_flags)
            expected = 0 if st.last_seq is None else (st.last_seq + 1) & 0xFF
            st.gaps += (p.sequence - expected) & 0xFF
            st.last_seq = p.sequence
            st.last_seen_ms = at
            st.last_reading = reading
            st.readings += 1
            self._readings.append(reading)
            self.counters["frames_ok"] += 1
            self._reading_sink.write(reading.to_log())
            self._emit("reading", at, node=p.source_addr, seq=p.sequence, temp_c=temp_c,
                       oil=reading.oil_state.value)
            self.update_alarms(reading, at)
            self.lcd = render_lcd(reading)
            self._emit("lcd", at, rows=list(self.lcd.rows))
            return reading

    def _reject(self, counter: str, at_ms: int, exc: Exception) -> None:
        self.counters[counter] += 1
        log.warning("discarding frame: %s", exc)
        self._emit("decode_error", at_ms, error=type(exc).__name__)

    # -- queries ------------------------------------------------------------

    def stats(self) -> dict:
        with self._lock:
            return dict(self.counters,
                        gaps={f"{a:016X}": st.gaps for a, st in self.devices.items()})

    def readings(self, device: Optional[int] = None, t_from=None, t_to=None) -> list[Reading]:
        with self._lock:
            if device is not None and device not in self.devices:
                raise UnknownDevice(f"device {device:016X} not configured")
            return [r for r in self._readings
                    if (device is None or r.device_addr == device)
                    and (t_from is None or r.received_at_s >= t_from)
                    and (t_to is None or r.received_at_s <= t_to)]

    def alarms(self, since=None) -> list[AlarmEvent]:
        with self._lock:
            return [a for a in self._alarms if since is None or a.at_s >= since]

    def device_summary(self) -> list[dict]:
        with self._lock:
            out = []
            for addr, st in self.devices.items():
                out.append({
                    "addr": f"{addr:016X}",
                    "seen": st.last_seen_ms is not None,
                    "online": not st.active[AlarmKind.DEVICE_OFFLINE],
                    "readings": st.readings,
                    "last_reading": st.last_reading.to_log() if st.last_reading else None,
                    "active_alarms": sorted(k.value for k, v in st.active.items() if v),
                })
            return out

    def query(self, request) -> dict | list:
        """Answer a JSON-style request: ``{"query": "devices" | "readings" |
        "alarms" | "stats", ...}``."""
        if not isinstance(request, dict) or not isinstance(request.get("query"), str):
            raise MalformedQuery("request must be an object with a string 'query' field")
        kind = request["query"]
        try:
            if kind == "devices":
                return self.device_summary()
            if kind == "readings":
                dev = request.get("device")
                dev = None if dev is None else _parse_addr(dev)
                return [r.to_log() for r in self.readings(dev, _num(request, "from"), _num(request, "to"))]
            if kind == "alarms":
                return [a.to_log() for a in self.alarms(_num(request, "since"))]
            if kind == "stats":
                return self.stats()
        except (TypeError, ValueError) as exc:
            raise MalformedQuery(str(exc)) from None
        raise MalformedQuery(f"unknown query kind {kind!r}")

    # -- persistence ----------------------------------------------------------

    def flush(self) -> None:
        self._reading_sink.close()
        self._alarm_sink.close()

    close = flush

    def snapshot(self) -> dict:
        """Reading counts and last-known states, for recovery checks."""
        with self._lock:
            return {
                "lcd": list(self.lcd.rows),
                "frames_ok": self.counters["frames_ok"],
                "alarms_raised": self.counters["alarms_raised"],
                "devices": {
                    f"{a:016X}": {
                        "readings": st.readings,
                        "last_seq": st.last_seq,
                        "last_reading": st.last_reading.to_log() if st.last_reading else None,
                        "active": sorted(k.value for k, v in st.active.items() if v),
                        "gaps": st.gaps,
                    }
                    for a, st in self.devices.items()
                },
            }

    @classmethod
    def recover(cls, devices: dict[int, DeviceProfile], config: CoordinatorConfig | None = None,
                reading_log=None, alarm_log=None, **kw) -> "Coordinator":
        """Rebuild state from existing logs; new records append to them."""
        coord = cls(devices, config, reading_log, alarm_log, **kw)
        for rec in _read_jsonl(reading_log):
            r = Reading.from_log(rec)
            st = coord.devices.get(r.device_addr)
            if st is None:
                raise UnknownDevice(f"log mentions unconfigured device {r.device_addr:016X}")
            expected = 0 if st.last_seq is None else (st.last_seq + 1) & 0xFF
            st.gaps += (r.sequence - expected) & 0xFF
            st.last_seq = r.sequence
            st.last_seen_ms = r.received_at_s * 1000
            st.last_reading = r
            st.readings += 1
            coord._readings.append(r)
            coord.counters["frames_ok"] += 1
            coord.lcd = render_lcd(r)
        for rec in _read_jsonl(alarm_log):
            ev = AlarmEvent.from_log(rec)
            st = coord.devices.get(ev.device_addr)
            if st is None:
                raise UnknownDevice(f"log mentions unconfigured device {ev.device_addr:016X}")
            st.active[ev.kind] = ev.state is AlarmState.RAISED
            if ev.state is AlarmState.RAISED:
                coord.counters["alarms_raised"] += 1
            coord._alarms.append(ev)
        return coord


def _read_jsonl(path):
    if path is None or not Path(path).exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _parse_addr(v) -> int:
    if isinstance(v, bool):
        raise TypeError("device address must be a hex string or integer")
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        return int(v, 16)
    raise TypeError("device address must be a hex string or integer")


def _num(req: dict, key: str):
    v = req.get(key)
    if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
        raise TypeError(f"'{key}' must be a number")
    return v
