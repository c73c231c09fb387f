"""Analog measurement chain of an end device.

RTD -> Wheatstone bridge -> op-amp gain/offset stage -> 10-bit ADC, plus the
float-type oil level sensor.  Everything here is a pure function of its
arguments; the model objects are frozen dataclasses.

>>> chain = Chain()
>>> chain.code(100.0)
863
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import BadChannel, OutOfRange, Uncalibrated

# PT100 (IEC 60751) coefficients; sub-zero cubic term deliberately omitted.
PT100_A = 3.9083e-3
PT100_B = -5.775e-7


class OilState(str, Enum):
    NORMAL = "Normal"
    LOW = "Low"


@dataclass(frozen=True)
class RtdModel:
    r0_ohms: float = 100.0
    coeff_a: float = PT100_A
    coeff_b: float = PT100_B
    valid_range_c: tuple[float, float] = (-40.0, 120.0)

    def __post_init__(self):
        lo, hi = self.valid_range_c
        if not self.r0_ohms > 0:
            raise ValueError("r0_ohms must be positive")
        if not lo < hi:
            raise ValueError("valid_range_c must be (min, max) with min < max")
        # dR/dT = r0 (a + 2bT) must stay positive across the range
        for t in (lo, hi):
            if self.coeff_a + 2.0 * self.coeff_b * t <= 0:
                raise ValueError("resistance is not increasing on valid_range_c")


@dataclass(frozen=True)
class BridgeCircuit:
    excitation_volts: float = 5.0
    r_ref_ohms: float = 100.0
    half_ratio: float = 0.5

    def __post_init__(self):
        if not self.excitation_volts > 0:
            raise ValueError("excitation_volts must be positive")
        if not self.r_ref_ohms > 0:
            raise ValueError("r_ref_ohms must be positive")


@dataclass(frozen=True)
class AmplifierStage:
    gain: float = 6.0
    offset_volts: float = 1.8
    rail_low: float = 0.0
    rail_high: float = 5.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        if not self.rail_low < self.rail_high:
            raise ValueError("rail_low must be below rail_high")


@dataclass(frozen=True)
class AdcModel:
    resolution_bits: int = 10
    vref_volts: float = 5.0
    channel_count: int = 8

    @property
    def max_code(self) -> int:
        return (1 << self.resolution_bits) - 1


@dataclass(frozen=True)
class OilLevelSensor:
    level_mm: float
    low_threshold_mm: float

    def __post_init__(self):
        if self.level_mm < 0:
            raise ValueError("level_mm must be non-negative")


def rtd_resistance(model: RtdModel, temp_c: float) -> float:
    """Callendar-Van Dusen resistance (quadratic form) at ``temp_c``."""
    lo, hi = model.valid_range_c
    if not lo <= temp_c <= hi:
        raise OutOfRange(f"temperature {temp_c} °C outside RTD range [{lo}, {hi}]")
    return model.r0_ohms * (1.0 + model.coeff_a * temp_c + model.coeff_b * temp_c * temp_c)


def bridge_output(bridge: BridgeCircuit, r_rtd: float) -> float:
    if not r_rtd > 0:
        raise OutOfRange("RTD resistance must be positive")
    if math.isinf(r_rtd):
        return bridge.excitation_volts * (1.0 - bridge.half_ratio)
    return bridge.excitation_volts * (r_rtd / (r_rtd + bridge.r_ref_ohms) - bridge.half_ratio)


def amplify(amp: AmplifierStage, v_diff: float) -> float:
    v = amp.gain * v_diff + amp.offset_volts
    return min(max(v, amp.rail_low), amp.rail_high)


def adc_sample(adc: AdcModel, volts: float, channel: int = 0) -> int:
    """Floor-quantize ``volts``; out-of-window inputs clamp to the end codes."""
    if not 0 <= channel < adc.channel_count:
        raise BadChannel(f"channel {channel} not in [0, {adc.channel_count})")
    top = adc.max_code
    x = volts / adc.vref_volts * top
    if math.isnan(x):
        raise OutOfRange("cannot sample NaN")
    if x <= 0:
        return 0
    if x >= top:
        return top
    return int(math.floor(x))


def oil_level_state(sensor: OilLevelSensor) -> OilState:
    return OilState.LOW if sensor.level_mm < sensor.low_threshold_mm else OilState.NORMAL


@dataclass(frozen=True)
class Chain:
    """The four chain stages bundled together, as carried in a device config."""

    rtd: RtdModel = field(default_factory=RtdModel)
    bridge: BridgeCircuit = field(default_factory=BridgeCircuit)
    amp: AmplifierStage = field(default_factory=AmplifierStage)
    adc: AdcModel = field(default_factory=AdcModel)

    def volts(self, temp_c: float) -> float:
        """Amplifier output (the voltage presented to the ADC)."""
        return amplify(self.amp, bridge_output(self.bridge, rtd_resistance(self.rtd, temp_c)))

    def code(self, temp_c: float, channel: int = 0) -> int:
        return adc_sample(self.adc, self.volts(temp_c), channel)

    def is_clamped(self, temp_c: float) -> bool:
        raw = self.amp.gain * bridge_output(self.bridge, rtd_resistance(self.rtd, temp_c)) + self.amp.offset_volts
        return not self.amp.rail_low < raw < self.amp.rail_high


def temperature_from_code(cal, code: int) -> float:
    """Invert an ADC code to °C by piecewise-linear interpolation over a
    calibration table's (code, temperature) points.

    Points with a missing code are skipped; runs of equal codes collapse to
    the mean of their temperatures so the interpolant stays a function.
    """
    pts = [p for p in getattr(cal, "points", ()) if p.rx_code is not None]
    if len(pts) < 2:
        raise Uncalibrated("calibration table needs at least two points")
    codes = np.array([p.rx_code for p in pts], dtype=float)
    temps = np.array([p.set_temp_c for p in pts], dtype=float)
    ucodes, inverse = np.unique(codes, return_inverse=True)
    utemps = np.bincount(inverse, weights=temps) / np.bincount(inverse)
    if not ucodes[0] <= code <= ucodes[-1]:
        raise OutOfRange(f"code {code} outside calibrated span [{int(ucodes[0])}, {int(ucodes[-1])}]")
    if len(ucodes) == 1:
        return float(utemps[0])
    return float(np.interp(code, ucodes, utemps))
