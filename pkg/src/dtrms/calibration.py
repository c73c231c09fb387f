"""Bench calibration: sweep a controlled temperature, pair the transmitter
voltage with the code seen at the receiver, fit code = slope*V + intercept,
and check that the relation is constant across the sweep.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInput, OutOfRange, Uncalibrated
from .signal_chain import Chain, temperature_from_code

DEFAULT_SWEEP = tuple(float(t) for t in range(-40, 121, 10))
DEFAULT_TOLERANCE_CODES = 1.0


@dataclass(frozen=True)
class CalibrationPoint:
    set_temp_c: float
    tx_volts: float
    rx_code: Optional[int]  # None when the calibration frame was lost

    @property
    def missing(self) -> bool:
        return self.rx_code is None


@dataclass(frozen=True)
class CalibrationTable:
    points: tuple[CalibrationPoint, ...]
    slope_codes_per_volt: float
    intercept_codes: float
    max_residual_codes: float

    def __post_init__(self):
        live = [p for p in self.points if not p.missing]
        if len(live) < 2:
            raise Uncalibrated("calibration table needs at least two points")
        temps = [p.set_temp_c for p in self.points]
        if any(b <= a for a, b in zip(temps, temps[1:])):
            raise ValueError("calibration temperatures must be strictly increasing")
        codes = [p.rx_code for p in live]
        if any(b < a for a, b in zip(codes, codes[1:])):
            raise ValueError("calibration codes must be non-decreasing")

    def temperature(self, code: int) -> float:
        return temperature_from_code(self, code)

    @property
    def code_span(self) -> tuple[int, int]:
        codes = [p.rx_code for p in self.points if not p.missing]
        return min(codes), max(codes)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "points": [
                {"temp_c": p.set_temp_c, "tx_volts": p.tx_volts, "rx_code": p.rx_code}
                for p in self.points
            ],
            "slope_codes_per_volt": self.slope_codes_per_volt,
            "intercept_codes": self.intercept_codes,
            "max_residual_codes": self.max_residual_codes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationTable":
        pts = tuple(
            CalibrationPoint(float(p["temp_c"]), float(p["tx_volts"]),
                             None if p.get("rx_code") is None else int(p["rx_code"]))
            for p in d["points"]
        )
        return cls(pts, float(d["slope_codes_per_volt"]), float(d["intercept_codes"]),
                   float(d["max_residual_codes"]))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load_json(cls, path) -> "CalibrationTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def points_to_csv(points: Sequence[CalibrationPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["temp_c", "tx_volts", "rx_code"])
    for p in points:
        w.writerow([p.set_temp_c, repr(p.tx_volts), "" if p.missing else p.rx_code])
    return buf.getvalue()


def ideal_transport(code: int, temp_c: float) -> Optional[int]:
    return code


def run_sweep(temps: Sequence[float], chain: Chain | None = None, transport=None,
              channel: int = 0) -> list[CalibrationPoint]:
    """Drive the forward chain at each set temperature.

    ``transport`` maps (code, temp_c) to the code observed at the receiver,
    or None if the reading never arrived.  It defaults to the identity;
    :func:`dtrms.network_sim.simulated_transport` sends real frames across
    a simulated link.
    """
    chain = chain or Chain()
    transport = transport or ideal_transport
    temps = [float(t) for t in temps]
    if len(temps) < 2:
        raise ValueError("a sweep needs at least two temperatures")
    if any(b <= a for a, b in zip(temps, temps[1:])):
        raise ValueError("sweep temperatures must be strictly increasing")
    lo, hi = chain.rtd.valid_range_c
    for t in temps:
        if not lo <= t <= hi:
            raise OutOfRange(f"sweep temperature {t} outside [{lo}, {hi}]")
    points = []
    for t in temps:
        v = chain.volts(t)
        code = chain.code(t, channel)
        points.append(CalibrationPoint(t, v, transport(code, t)))
    return points


def fit_affine(points: Sequence[CalibrationPoint]) -> tuple[float, float, float]:
    """Least-squares line through (tx_volts, rx_code); returns
    (slope, intercept, max |residual|).  Missing points are ignored."""
    live = [p for p in points if not p.missing]
    if len(live) < 2:
        raise DegenerateInput("need at least two received points")
    v = np.array([p.tx_volts for p in live])
    c = np.array([p.rx_code for p in live], dtype=float)
    if np.ptp(v) == 0:
        raise DegenerateInput("all transmitter voltages are equal")
    A = np.column_stack([v, np.ones_like(v)])
    (slope, intercept), *_ = np.linalg.lstsq(A, c, rcond=None)
    resid = c - (slope * v + intercept)
    return float(slope), float(intercept), float(np.max(np.abs(resid)))


def build_table(points: Sequence[CalibrationPoint]) -> CalibrationTable:
    slope, intercept, resid = fit_affine(points)
    return CalibrationTable(tuple(points), slope, intercept, resid)


def default_table(chain: Chain | None = None) -> CalibrationTable:
    """Table from the default sweep over the chain's valid range with ideal transport."""
    chain = chain or Chain()
    lo, hi = chain.rtd.valid_range_c
    temps = [t for t in DEFAULT_SWEEP if lo <= t <= hi]
    if temps[0] > lo:
        temps.insert(0, lo)
    if temps[-1] < hi:
        temps.append(hi)
    return build_table(run_sweep(temps, chain))


@dataclass(frozen=True)
class ConstancyResult:
    passed: bool
    max_residual_codes: float
    worst: Optional[CalibrationPoint] = None
    residuals: tuple[float, ...] = field(default=(), repr=False)

    def __bool__(self):
        return self.passed


def verify_constancy(table: CalibrationTable, tolerance_codes: float = DEFAULT_TOLERANCE_CODES) -> ConstancyResult:
    """Check that every received code sits on the fitted line to within
    ``tolerance_codes``.  On failure ``worst`` is the furthest point."""
    live = [p for p in table.points if not p.missing]
    res = [p.rx_code - (table.slope_codes_per_volt * p.tx_volts + table.intercept_codes) for p in live]
    i = int(np.argmax(np.abs(res)))
    worst = abs(res[i])
    ok = worst <= tolerance_codes
    return ConstancyResult(ok, worst, None if ok else live[i], tuple(res))


def ratio_spread(points: Sequence[CalibrationPoint], min_volts: float = 0.5) -> float:
    """Relative spread (max - min) / max of code/voltage over points with
    tx_volts >= ``min_volts``.  Only meaningful for a zero-offset chain."""
    ratios = [p.rx_code / p.tx_volts for p in points if not p.missing and p.tx_volts >= min_volts]
    if len(ratios) < 2:
        raise DegenerateInput(f"fewer than two points at or above {min_volts} V")
    return (max(ratios) - min(ratios)) / max(ratios)
