"""Scenario configuration: one versioned JSON document.

``parse_scenario`` fills in every default, so ``to_dict`` of a parsed
scenario is the canonical form and parse -> serialize -> parse is stable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .calibration import CalibrationTable
from .coordinator import CoordinatorConfig
from .end_device import DeviceConfig, Environment
from .errors import DtrmsError, InvalidConfig
from .network_sim import DEFAULT_RANGE_M, BatteryModel, Node, RadioModel, Role, build_topology
from .signal_chain import AdcModel, AmplifierStage, BridgeCircuit, Chain, RtdModel

SCHEMA = "dtrms-scenario/1"
CONFIG_ENV = "DTRMS_CONFIG"


class ConfigError(DtrmsError):
    """Unreadable or invalid scenario file; ``str()`` is the diagnostic."""


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration_s: float
    nodes: tuple[Node, ...]
    max_range_m: float
    radio: RadioModel
    devices: tuple[DeviceConfig, ...]
    environments: tuple[Environment, ...]
    coordinator: CoordinatorConfig
    calibration_paths: tuple[Optional[str], ...] = ()
    base_dir: Optional[Path] = field(default=None, compare=False)

    def replace(self, **kw) -> "Scenario":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return Scenario(**d)

    def to_dict(self) -> dict:
        return scenario_to_dict(self)


def _addr(v, where: str) -> int:
    if isinstance(v, bool):
        raise InvalidConfig(where, "address must be a hex string or integer")
    if isinstance(v, int):
        a = v
    elif isinstance(v, str):
        try:
            a = int(v, 16)
        except ValueError:
            raise InvalidConfig(where, f"{v!r} is not a hex address") from None
    else:
        raise InvalidConfig(where, "address must be a hex string or integer")
    if not 0 <= a < 1 << 64:
        raise InvalidConfig(where, "address must fit in 64 bits")
    return a


def _build(cls, d: Any, where: str, **conv):
    """Instantiate a flat dataclass from a dict, rejecting unknown keys."""
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise InvalidConfig(where, "expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise InvalidConfig(f"{where}.{sorted(unknown)[0]}", "unknown field")
    kw = {}
    for k, v in d.items():
        kw[k] = conv[k](v) if k in conv else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(where, str(exc)) from None


def _profile(v, where):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return ((0.0, float(v)),)
    if not isinstance(v, list) or not all(isinstance(p, list) and len(p) == 2 for p in v):
        raise InvalidConfig(where, "expected a number or a list of [t_s, value] pairs")
    return tuple((float(t), float(x)) for t, x in v)


def _chain(d, where) -> Chain:
    d = d or {}
    if not isinstance(d, dict):
        raise InvalidConfig(where, "expected an object")
    unknown = set(d) - {"rtd", "bridge", "amp", "adc"}
    if unknown:
        raise InvalidConfig(f"{where}.{sorted(unknown)[0]}", "unknown field")
    return Chain(
        rtd=_build(RtdModel, d.get("rtd"), f"{where}.rtd", valid_range_c=lambda v: tuple(v)),
        bridge=_build(BridgeCircuit, d.get("bridge"), f"{where}.bridge"),
        amp=_build(AmplifierStage, d.get("amp"), f"{where}.amp"),
        adc=_build(AdcModel, d.get("adc"), f"{where}.adc"),
    )


_DEVICE_KEYS = {
    "addr", "sample_period_s", "temp_high_c", "oil_low_mm", "adc_channel_temp",
    "ring_capacity", "chain", "battery", "calibration_table", "environment",
}


def parse_scenario(doc: dict, base_dir=None) -> Scenario:
    """Validate a decoded JSON document and build a :class:`Scenario`."""
    if not isinstance(doc, dict):
        raise InvalidConfig("<root>", "expected a JSON object")
    if doc.get("schema") != SCHEMA:
        raise InvalidConfig("schema", f"expected {SCHEMA!r}, got {doc.get('schema')!r}")
    unknown = set(doc) - {"schema", "seed", "duration_s", "topology", "radio", "devices", "coordinator"}
    if unknown:
        raise InvalidConfig(sorted(unknown)[0], "unknown field")
    base = Path(base_dir) if base_dir is not None else None

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 1 << 64:
        raise InvalidConfig("seed", "must be an unsigned 64-bit integer")
    duration = doc.get("duration_s", 600)
    if isinstance(duration, bool) or not isinstance(duration, (int, float)) or duration <= 0:
        raise InvalidConfig("duration_s", "must be a positive number")

    topo = doc.get("topology")
    if not isinstance(topo, dict):
        raise InvalidConfig("topology", "required object")
    max_range = topo.get("max_range_m", DEFAULT_RANGE_M)
    raw_nodes = topo.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise InvalidConfig("topology.nodes", "required non-empty list")
    nodes = []
    for i, n in enumerate(raw_nodes):
        where = f"topology.nodes[{i}]"
        if not isinstance(n, dict):
            raise InvalidConfig(where, "expected an object")
        try:
            role = Role(n.get("role"))
        except ValueError:
            raise InvalidConfig(f"{where}.role", f"one of {[r.value for r in Role]}") from None
        nodes.append(Node(_addr(n.get("id"), f"{where}.id"), role,
                          (float(n.get("x_m", 0.0)), float(n.get("y_m", 0.0)))))
    try:
        build_topology(nodes, max_range)
    except DtrmsError as exc:
        raise InvalidConfig("topology", str(exc)) from None

    radio = _build(RadioModel, doc.get("radio"), "radio")
    coord = _build(CoordinatorConfig, doc.get("coordinator"), "coordinator")

    raw_devices = doc.get("devices")
    if not isinstance(raw_devices, list) or not raw_devices:
        raise InvalidConfig("devices", "required non-empty list")
    roles = {n.node_id: n.role for n in nodes}
    devices, envs, cal_paths = [], [], []
    for i, d in enumerate(raw_devices):
        where = f"devices[{i}]"
        if not isinstance(d, dict):
            raise InvalidConfig(where, "expected an object")
        unknown = set(d) - _DEVICE_KEYS
        if unknown:
            raise InvalidConfig(f"{where}.{sorted(unknown)[0]}", "unknown field")
        addr = _addr(d.get("addr"), f"{where}.addr")
        if roles.get(addr) is not Role.END_DEVICE:
            raise InvalidConfig(f"{where}.addr", f"{addr:016X} is not an end_device node in the topology")
        if addr in (x.device_addr for x in devices):
            raise InvalidConfig(f"{where}.addr", "device configured twice")
        cal_path = d.get("calibration_table")
        table = None
        if cal_path is not None:
            p = Path(cal_path)
            if not p.is_absolute() and base is not None:
                p = base / p
            if not p.exists():
                raise InvalidConfig(f"{where}.calibration_table", f"file not found: {p}")
            try:
                table = CalibrationTable.load_json(p)
            except (ValueError, KeyError, DtrmsError) as exc:
                raise InvalidConfig(f"{where}.calibration_table", f"{p}: {exc}") from None
        env = d.get("environment") or {}
        if not isinstance(env, dict) or set(env) - {"temp_c", "oil_mm"}:
            raise InvalidConfig(f"{where}.environment", "expected {temp_c, oil_mm}")
        envs.append(Environment(
            _profile(env.get("temp_c", 70.0), f"{where}.environment.temp_c"),
            _profile(env.get("oil_mm", 120.0), f"{where}.environment.oil_mm"),
        ))
        kw = {k: d[k] for k in ("sample_period_s", "temp_high_c", "oil_low_mm",
                                "adc_channel_temp", "ring_capacity") if k in d}
        for k, v in kw.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InvalidConfig(f"{where}.{k}", "must be a number")
        try:
            cfg = DeviceConfig(
                device_addr=addr,
                chain=_chain(d.get("chain"), f"{where}.chain"),
                battery=_build(BatteryModel, d.get("battery"), f"{where}.battery"),
                calibration=table,
                **kw,
            )
            cfg.validate()
        except InvalidConfig as exc:
            if exc.field.startswith(where):
                raise
            raise InvalidConfig(f"{where}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
        devices.append(cfg)
        cal_paths.append(cal_path)

    return Scenario(
        seed=seed,
        duration_s=duration,
        nodes=tuple(nodes),
        max_range_m=float(max_range),
        radio=radio,
        devices=tuple(devices),
        environments=tuple(envs),
        coordinator=coord,
        calibration_paths=tuple(cal_paths),
        base_dir=base,
    )


def scenario_to_dict(s: Scenario) -> dict:
    def flat(obj):
        return {f.name: (list(v) if isinstance(v := getattr(obj, f.name), tuple) else v)
                for f in fields(obj)}

    devices = []
    for cfg, env, cal in zip(s.devices, s.environments, s.calibration_paths or [None] * len(s.devices)):
        devices.append({
            "addr": f"{cfg.device_addr:016X}",
            "sample_period_s": cfg.sample_period_s,
            "temp_high_c": cfg.temp_high_c,
            "oil_low_mm": cfg.oil_low_mm,
            "adc_channel_temp": cfg.adc_channel_temp,
            "ring_capacity": cfg.ring_capacity,
            "chain": {
                "rtd": flat(cfg.chain.rtd),
                "bridge": flat(cfg.chain.bridge),
                "amp": flat(cfg.chain.amp),
                "adc": flat(cfg.chain.adc),
            },
            "battery": flat(cfg.battery),
            "calibration_table": cal,
            "environment": {
                "temp_c": [list(p) for p in env.temp_c],
                "oil_mm": [list(p) for p in env.oil_mm],
            },
        })
    return {
        "schema": SCHEMA,
        "seed": s.seed,
        "duration_s": s.duration_s,
        "topology": {
            "max_range_m": s.max_range_m,
            "nodes": [
                {"id": f"{n.node_id:016X}", "role": n.role.value, "x_m": n.position[0], "y_m": n.position[1]}
                for n in s.nodes
            ],
        },
        "radio": flat(s.radio),
        "devices": devices,
        "coordinator": flat(s.coordinator),
    }


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def load_scenario(path) -> Scenario:
    """Read and parse a scenario file; every failure becomes ConfigError
    naming the path and the line or field at fault."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror or exc})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        return parse_scenario(doc, base_dir=p.parent)
    except InvalidConfig as exc:
        raise ConfigError(f"{p}: {exc}") from None


def default_config_path() -> Optional[str]:
    return os.environ.get(CONFIG_ENV)


def demo_scenario(loss_prob: float = 0.0, seed: int = 7, duration_s: float = 600) -> dict:
    """A small mesh: coordinator, two routers, three transformer sites."""
    def dev(addr, x, temp, oil):
        return {"addr": addr, "environment": {"temp_c": temp, "oil_mm": oil}}, \
               {"id": addr, "role": "end_device", "x_m": x[0], "y_m": x[1]}

    d1, n1 = dev("0013A2004100BEEF", (800, 0), [[0, 70.0], [240, 95.0], [420, 80.0]], 120.0)
    d2, n2 = dev("0013A2004100C0DE", (1600, 300), 65.0, [[0, 120.0], [300, 85.0]])
    d3, n3 = dev("0013A2004100F00D", (2300, 0), 55.0, 130.0)
    return {
        "schema": SCHEMA,
        "seed": seed,
        "duration_s": duration_s,
        "topology": {
            "max_range_m": 1000.0,
            "nodes": [
                {"id": "0013A20040000001", "role": "coordinator", "x_m": 0.0, "y_m": 0.0},
                {"id": "0013A20040000010", "role": "router", "x_m": 900.0, "y_m": 200.0},
                {"id": "0013A20040000011", "role": "router", "x_m": 1700.0, "y_m": 0.0},
                n1, n2, n3,
            ],
        },
        "radio": {"loss_prob": loss_prob, "max_retries": 3, "ack_timeout_ms": 10, "tx_duration_ms": 4},
        "devices": [d1, d2, d3],
        "coordinator": {"hysteresis_c": 2.0, "offline_multiplier": 3.0},
    }
