"""Deterministic discrete-event simulation of the monitoring radio network.

Topologies are built from node positions with a binary disc radio model.
Frames are forwarded along min-hop routes with a stop-and-wait ack/retry MAC
on every hop; loss is Bernoulli per attempt.  Simulated time is kept in
integer milliseconds so event ordering never depends on float rounding.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Union

import numpy as np

from . import frame_codec
from .errors import (
    DtrmsError,
    DuplicateNodeId,
    MultipleCoordinators,
    NoCoordinator,
    NoRoute,
)

DEFAULT_RANGE_M = 1000.0


class Role(str, Enum):
    COORDINATOR = "coordinator"
    ROUTER = "router"
    END_DEVICE = "end_device"


@dataclass(frozen=True)
class Node:
    node_id: int
    role: Role
    position: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    max_range_m: float
    links: frozenset  # frozenset of (a, b) with a < b
    coordinator: int

    def __post_init__(self):
        adj = {n.node_id: [] for n in self.nodes}
        for a, b in self.links:
            adj[a].append(b)
            adj[b].append(a)
        object.__setattr__(self, "_adj", {k: tuple(sorted(v)) for k, v in adj.items()})
        object.__setattr__(self, "_by_id", {n.node_id: n for n in self.nodes})
        object.__setattr__(self, "_routes", {})

    def neighbors(self, node_id: int) -> tuple[int, ...]:
        return self._adj[node_id]

    def node(self, node_id: int) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id:#x}") from None

    def __contains__(self, node_id) -> bool:
        return node_id in self._by_id

    def can_relay(self, node_id: int) -> bool:
        return self._by_id[node_id].role is Role.ROUTER


def build_topology(nodes: Iterable[Node], max_range_m: float = DEFAULT_RANGE_M) -> Topology:
    nodes = tuple(nodes)
    if not nodes:
        raise NoCoordinator("topology has no nodes")
    seen = set()
    for n in nodes:
        if n.node_id in seen:
            raise DuplicateNodeId(f"node id {n.node_id:#x} appears twice")
        seen.add(n.node_id)
    coords = [n for n in nodes if n.role is Role.COORDINATOR]
    if not coords:
        raise NoCoordinator("topology needs exactly one coordinator")
    if len(coords) > 1:
        raise MultipleCoordinators(f"{len(coords)} coordinators in topology")
    links = set()
    for a, b in itertools.combinations(nodes, 2):
        if math.dist(a.position, b.position) <= max_range_m:
            links.add((min(a.node_id, b.node_id), max(a.node_id, b.node_id)))
    return Topology(nodes, float(max_range_m), frozenset(links), coords[0].node_id)


def _hops_to_coordinator(topo: Topology) -> dict[int, int]:
    # BFS outward from the coordinator; only routers (and the coordinator) may
    # be expanded since end devices never relay.
    dist = {topo.coordinator: 0}
    q = deque([topo.coordinator])
    while q:
        u = q.popleft()
        if u != topo.coordinator and not topo.can_relay(u):
            continue
        for v in topo.neighbors(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def route(topo: Topology, src: int) -> list[int]:
    """Min-hop path ``[src, ..., coordinator]``.

    Among equal-length paths the one taking the smallest next-hop id at
    every step is chosen.
    """
    if src not in topo:
        raise KeyError(f"unknown node {src:#x}")
    cached = topo._routes.get(src)
    if cached is not None:
        return list(cached)
    dist = topo._routes.get("_dist")
    if dist is None:
        dist = _hops_to_coordinator(topo)
        topo._routes["_dist"] = dist
    if src not in dist:
        raise NoRoute(f"node {src:#x} cannot reach the coordinator")
    path = [src]
    u = src
    while u != topo.coordinator:
        u = min(v for v in topo.neighbors(u)
                if dist.get(v) == dist[u] - 1 and (v == topo.coordinator or topo.can_relay(v)))
        path.append(u)
    topo._routes[src] = tuple(path)
    return path


@dataclass(frozen=True)
class RadioModel:
    loss_prob: float = 0.0
    max_retries: int = 3
    ack_timeout_ms: int = 10
    tx_duration_ms: int = 4

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be within [0, 1]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.tx_duration_ms < 0 or self.ack_timeout_ms < 0:
            raise ValueError("radio timings must be non-negative")

    def hop_success_prob(self) -> float:
        return 1.0 - self.loss_prob ** (1 + self.max_retries)


@dataclass(frozen=True)
class BatteryModel:
    capacity_mah: float = 1000.0
    active_current_ma: float = 40.0
    sleep_current_ma: float = 0.01
    duty_cycle: float = 0.01

    def __post_init__(self):
        if not self.capacity_mah > 0:
            raise ValueError("capacity_mah must be positive")
        if not self.active_current_ma >= self.sleep_current_ma >= 0:
            raise ValueError("need active_current_ma >= sleep_current_ma >= 0")
        if not 0.0 < self.duty_cycle <= 1.0:
            raise ValueError("duty_cycle must be in (0, 1]")


def lifetime_hours(battery: BatteryModel) -> float:
    d = battery.duty_cycle
    avg = d * battery.active_current_ma + (1.0 - d) * battery.sleep_current_ma
    return battery.capacity_mah / avg


@dataclass(frozen=True)
class Delivered:
    at_ms: int
    hops: int
    attempts: int


@dataclass(frozen=True)
class Dropped:
    at_ms: int
    at_hop: int
    attempts: int


DeliveryOutcome = Union[Delivered, Dropped]


def transmit(frame: bytes, src: int, topo: Topology, radio: RadioModel,
             rng: np.random.Generator, start_ms: int = 0) -> DeliveryOutcome:
    """Forward ``frame`` hop by hop to the coordinator.

    Each hop makes up to ``1 + max_retries`` attempts; every attempt draws
    one uniform from ``rng``.  ``at_hop`` on a drop is 1-based.
    """
    path = route(topo, src)
    t = start_ms
    total = 0
    per_attempt_fail = radio.tx_duration_ms + radio.ack_timeout_ms
    for hop in range(1, len(path)):
        for attempt in range(1 + radio.max_retries):
            total += 1
            if rng.random() >= radio.loss_prob:
                t += radio.tx_duration_ms
                break
            t += per_attempt_fail
        else:
            return Dropped(t, hop, total)
    return Delivered(t, len(path) - 1, total)


def simulated_transport(radio: RadioModel, seed: int = 0, source_addr: int = 1,
                        hops: int = 1) -> Callable[[int, float], Optional[int]]:
    """Calibration transport that ships each code in a real frame over a
    ``hops``-long line of routers and decodes it at the far end."""
    nodes = [Node(0, Role.COORDINATOR, (0.0, 0.0))]
    for i in range(1, hops):
        nodes.append(Node(1000 + i, Role.ROUTER, (100.0 * i, 0.0)))
    nodes.append(Node(source_addr, Role.END_DEVICE, (100.0 * hops, 0.0)))
    topo = build_topology(nodes, 150.0)
    rng = np.random.default_rng(seed)
    seq = itertools.count()

    def send(code: int, temp_c: float) -> Optional[int]:
        n = next(seq)
        frame = frame_codec.encode(frame_codec.TelemetryPayload(
            source_addr, n & 0xFF, n, code, 0, 0))
        out = transmit(frame, source_addr, topo, radio, rng, n * 1000)
        if isinstance(out, Dropped):
            return None
        return frame_codec.decode(frame).temp_code

    return send


# --- event loop ------------------------------------------------------------

class EventQueue:
    """Min-heap of (time_ms, insertion sequence, payload)."""

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()
        self.now_ms = 0

    def push(self, at_ms: int, item) -> None:
        if at_ms < self.now_ms:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._heap, (at_ms, next(self._seq), item))

    def pop(self):
        at_ms, _, item = heapq.heappop(self._heap)
        self.now_ms = at_ms
        return at_ms, item

    def __len__(self):
        return len(self._heap)


def fmt_addr(addr: int) -> str:
    return f"{addr:016X}"


def t_s(ms: int):
    return ms // 1000 if ms % 1000 == 0 else ms / 1000


@dataclass
class Trace:
    events: list[dict] = field(default_factory=list)

    def add(self, event: str, at_ms: int, node: int, **fields) -> dict:
        rec = {"event": event, "t_s": t_s(at_ms), "node": fmt_addr(node), **fields}
        self.events.append(rec)
        return rec

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in self.events)

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["event"] == kind]

    def drops_by_device(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.events:
            if e["event"] in ("drop", "no_route"):
                out[e["node"]] = out.get(e["node"], 0) + 1
        return out

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        return cls([json.loads(line) for line in text.splitlines() if line.strip()])


@dataclass
class RunResult:
    trace: Trace
    coordinator: object
    devices: dict


def run(scenario, seed: Optional[int] = None, reading_log=None, alarm_log=None) -> RunResult:
    """Execute a scenario (see :class:`dtrms.config.Scenario`) to completion.

    Samples are taken at ``k * sample_period`` for every ``k`` with the
    sample time strictly before ``duration_s``; frames already in flight at
    the end are still delivered.  The output is a pure function of
    (scenario, seed).
    """
    from .coordinator import Coordinator, DeviceProfile
    from .end_device import init_device

    seed = scenario.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    topo = build_topology(scenario.nodes, scenario.max_range_m)
    radio = scenario.radio
    duration_ms = int(round(scenario.duration_s * 1000))
    trace = Trace()
    q = EventQueue()

    devices = {}
    for dc in scenario.devices:
        devices[dc.device_addr] = init_device(dc)
    envs = {dc.device_addr: env for dc, env in zip(scenario.devices, scenario.environments)}

    coord_addr = topo.coordinator

    def on_coord_event(event: str, rec: dict):
        at = int(round(rec.pop("at_s") * 1000))
        node = rec.pop("node", coord_addr)
        trace.add(event, at, node, **rec)

    coord = Coordinator(
        {addr: DeviceProfile.from_device(dev) for addr, dev in devices.items()},
        scenario.coordinator,
        reading_log=reading_log,
        alarm_log=alarm_log,
        listener=on_coord_event,
        horizon_s=duration_ms / 1000,
    )

    for addr, dev in devices.items():
        q.push(0, ("sample", addr))

    pending_checks = set()

    def schedule_check():
        dl = coord.next_deadline_ms()
        if dl is not None and dl <= duration_ms and dl not in pending_checks:
            pending_checks.add(dl)
            q.push(max(dl, q.now_ms), ("check", dl))

    schedule_check()
    while q:
        now, item = q.pop()
        kind = item[0]
        coord.advance(now / 1000)
        if kind == "sample":
            addr = item[1]
            dev = devices[addr]
            env = envs[addr]
            rec, frame = dev.sample_cycle(env.temp_at(now / 1000), env.oil_at(now / 1000), now / 1000)
            trace.add("sample", now, addr, seq=rec.sequence, temp_code=rec.temp_code,
                      temp_c=round(rec.temp_c_local, 3), oil=rec.oil_state.value,
                      flags=rec.status_flags, batt_mv=rec.battery_mv)
            try:
                out = transmit(frame, addr, topo, radio, rng, now)
            except NoRoute:
                trace.add("no_route", now, addr, seq=rec.sequence)
            else:
                if isinstance(out, Delivered):
                    q.push(out.at_ms, ("rx", addr, frame, out.hops, out.attempts))
                else:
                    q.push(out.at_ms, ("drop", addr, rec.sequence, out.at_hop, out.attempts))
            nxt = now + dev.period_ms
            if nxt < duration_ms:
                q.push(nxt, ("sample", addr))
        elif kind == "rx":
            _, addr, frame, hops, attempts = item
            trace.add("rx", now, addr, hops=hops, attempts=attempts, frame=frame.hex().upper())
            try:
                coord.ingest(frame, now / 1000, hops)
            except DtrmsError:  # counted and logged by the coordinator
                pass
            schedule_check()
        elif kind == "drop":
            _, addr, seqno, at_hop, attempts = item
            trace.add("drop", now, addr, seq=seqno, at_hop=at_hop, attempts=attempts)
        elif kind == "check":
            pending_checks.discard(item[1])
            schedule_check()
    end = max(duration_ms, q.now_ms)
    coord.advance(duration_ms / 1000)
    trace.add("end", end, coord_addr, duration_s=t_s(duration_ms))
    coord.flush()
    return RunResult(trace, coord, devices)
