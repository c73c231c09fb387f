"""
Topologies, delivery and battery life
=====================================

Point-to-point, star and a three-hop mesh line under the same lossy radio,
compared with the closed form for per-hop ack/retry delivery.
"""

import math

import numpy as np

from dtrms.network_sim import (
    BatteryModel,
    Delivered,
    Node,
    RadioModel,
    Role,
    build_topology,
    lifetime_hours,
    route,
    transmit,
)

C, R, E = Role.COORDINATOR, Role.ROUTER, Role.END_DEVICE
radio = RadioModel(loss_prob=0.1, max_retries=3)

p2p = build_topology([Node(100, C), Node(1, E, (800, 0))])
star = build_topology([Node(100, C)] + [Node(i, E, (900 * math.cos(i), 900 * math.sin(i))) for i in range(1, 6)])
mesh = build_topology([Node(100, C), Node(201, R, (600, 0)), Node(202, R, (1200, 0)), Node(1, E, (1800, 0))], 700)

rng = np.random.default_rng(0)
for name, topo, src in [("point-to-point", p2p, 1), ("star", star, 3), ("mesh", mesh, 1)]:
    hops = len(route(topo, src)) - 1
    n = 10_000
    ok = sum(isinstance(transmit(b"", src, topo, radio, rng), Delivered) for _ in range(n))
    print(f"{name:15s} route {route(topo, src)}  delivered {ok / n:.4f}  "
          f"expected {radio.hop_success_prob() ** hops:.5f}")

###############################################################################
# Sleeping most of the time is what makes a battery last.

for duty in (1.0, 0.1, 0.01, 0.001):
    print(f"duty {duty:>6}: {lifetime_hours(BatteryModel(1000, 40, 0.01, duty)):9.1f} h")
