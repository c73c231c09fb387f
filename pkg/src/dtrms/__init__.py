"""Distributed transformer remote monitoring: sensor chain, ZigBee-style
frames, a deterministic network simulator, and the coordinator service."""

from .calibration import CalibrationPoint, CalibrationTable, build_table, fit_affine, run_sweep, verify_constancy
from .coordinator import Coordinator, Reading, render_lcd
from .end_device import DeviceConfig, EndDevice, classify, init_device
from .frame_codec import TelemetryPayload, checksum, decode, encode
from .network_sim import RadioModel, Topology, build_topology, lifetime_hours, route, run, transmit
from .signal_chain import Chain, OilState, temperature_from_code

__version__ = "0.1.0"
