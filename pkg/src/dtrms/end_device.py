"""Transmitter-side device: sample the chain, classify, record, encode."""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import frame_codec
from .calibration import CalibrationTable, default_table
from .errors import InvalidConfig
from .frame_codec import FLAG_OIL_LOW, FLAG_TEMP_HIGH, TelemetryPayload
from .network_sim import BatteryModel, lifetime_hours
from .signal_chain import Chain, OilLevelSensor, OilState, oil_level_state

BATTERY_FULL_MV = 3300
BATTERY_EMPTY_MV = 2100


@dataclass(frozen=True)
class DeviceConfig:
    device_addr: int
    sample_period_s: float = 60.0
    temp_high_c: float = 90.0
    oil_low_mm: float = 100.0
    adc_channel_temp: int = 0
    chain: Chain = field(default_factory=Chain)
    ring_capacity: int = 64
    battery: BatteryModel = field(default_factory=BatteryModel)
    calibration: Optional[CalibrationTable] = None

    def validate(self) -> None:
        if not 0 <= self.device_addr < 1 << 64:
            raise InvalidConfig("device_addr", "must fit in 64 bits")
        if not self.sample_period_s > 0:
            raise InvalidConfig("sample_period_s", "must be positive")
        if not 0 <= self.adc_channel_temp < self.chain.adc.channel_count:
            raise InvalidConfig("adc_channel_temp",
                                f"must be in [0, {self.chain.adc.channel_count})")
        if self.ring_capacity < 1:
            raise InvalidConfig("ring_capacity", "must be at least 1")
        if int(round(self.sample_period_s * 1000)) < 1:
            raise InvalidConfig("sample_period_s", "must be at least 1 ms")

    def calibration_table(self) -> CalibrationTable:
        return self.calibration if self.calibration is not None else default_table(self.chain)


@dataclass(frozen=True)
class TelemetryRecord:
    sequence: int
    timestamp_s: int
    temp_code: int
    temp_c_local: float
    oil_state: OilState
    status_flags: int
    battery_mv: int

    def to_dict(self) -> dict:
        return {
            "seq": self.sequence,
            "t_dev": self.timestamp_s,
            "temp_code": self.temp_code,
            "temp_c": round(self.temp_c_local, 3),
            "oil": self.oil_state.value,
            "flags": self.status_flags,
            "batt_mv": self.battery_mv,
        }


def classify(temp_c: float, oil: OilState, config: DeviceConfig) -> int:
    flags = 0
    if temp_c >= config.temp_high_c:
        flags |= FLAG_TEMP_HIGH
    if oil is OilState.LOW:
        flags |= FLAG_OIL_LOW
    return flags


def battery_mv(battery: BatteryModel, elapsed_s: float) -> int:
    """Linear discharge from full to empty over the estimated lifetime."""
    frac = min(1.0, max(0.0, elapsed_s / 3600.0 / lifetime_hours(battery)))
    return int(round(BATTERY_FULL_MV - (BATTERY_FULL_MV - BATTERY_EMPTY_MV) * frac))


class EndDevice:
    """State of one end device after initialization.

    Construct through :func:`init_device`.
    """

    def __init__(self, config: DeviceConfig, table: CalibrationTable, start_s: float = 0.0):
        self.config = config
        self.table = table
        self.channel = config.adc_channel_temp
        self.sequence = 0
        self.ring: deque[TelemetryRecord] = deque(maxlen=config.ring_capacity)
        self.start_s = start_s
        self.clock_s = start_s

    @property
    def addr(self) -> int:
        return self.config.device_addr

    @property
    def period_ms(self) -> int:
        return int(round(self.config.sample_period_s * 1000))

    def sample_cycle(self, true_temp_c: float, oil_level_mm: float, now_s: float):
        """One acquisition: returns ``(record, frame_bytes)``."""
        cfg = self.config
        code = cfg.chain.code(true_temp_c, self.channel)
        temp_local = self.table.temperature(code)
        oil = oil_level_state(OilLevelSensor(oil_level_mm, cfg.oil_low_mm))
        flags = classify(temp_local, oil, cfg)
        rec = TelemetryRecord(
            sequence=self.sequence,
            timestamp_s=int(now_s) & 0xFFFFFFFF,
            temp_code=code,
            temp_c_local=temp_local,
            oil_state=oil,
            status_flags=flags,
            battery_mv=battery_mv(cfg.battery, now_s - self.start_s),
        )
        frame = frame_codec.encode(TelemetryPayload(
            cfg.device_addr, rec.sequence, rec.timestamp_s, rec.temp_code,
            rec.status_flags, rec.battery_mv))
        self.ring.append(rec)
        self.sequence = (self.sequence + 1) & 0xFF
        self.clock_s = now_s
        return rec, frame

    def dump_ring(self) -> list[dict]:
        return [dict(device=f"{self.addr:016X}", **r.to_dict()) for r in self.ring]


def init_device(config: DeviceConfig, start_s: float = 0.0) -> EndDevice:
    config.validate()
    return EndDevice(config, config.calibration_table(), start_s)


def sample_cycle(state: EndDevice, env: dict, now_s: float):
    return state.sample_cycle(env["true_temp_c"], env["oil_level_mm"], now_s)


@dataclass(frozen=True)
class Environment:
    """Ground-truth conditions at a transformer, as step profiles.

    Each profile is a sequence of ``(t_s, value)`` breakpoints; the value
    holds until the next breakpoint.  Before the first breakpoint the first
    value applies.
    """

    temp_c: tuple[tuple[float, float], ...] = ((0.0, 70.0),)
    oil_mm: tuple[tuple[float, float], ...] = ((0.0, 120.0),)

    def __post_init__(self):
        for name in ("temp_c", "oil_mm"):
            prof = getattr(self, name)
            if not prof:
                raise InvalidConfig(f"environment.{name}", "profile is empty")
            times = [t for t, _ in prof]
            if times != sorted(times):
                raise InvalidConfig(f"environment.{name}", "breakpoints must be in time order")

    @staticmethod
    def _at(profile: Sequence[tuple[float, float]], t: float) -> float:
        i = bisect.bisect_right([p[0] for p in profile], t) - 1
        return profile[max(i, 0)][1]

    def temp_at(self, t: float) -> float:
        return self._at(self.temp_c, t)

    def oil_at(self, t: float) -> float:
        return self._at(self.oil_mm, t)
