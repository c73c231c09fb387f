"""
A monitoring session
====================

Three transformer sites behind two routers.  One site overheats for a few
minutes, another loses oil.  Watch the coordinator's LCD and alarm log.
"""

from dtrms.config import demo_scenario, parse_scenario
from dtrms.network_sim import run

scenario = parse_scenario(demo_scenario(loss_prob=0.2, seed=7, duration_s=900))
result = run(scenario)
coord = result.coordinator

for e in result.trace.of_kind("lcd")[::6]:
    print(f"t={e['t_s']:>8}  |{e['rows'][0]}|  |{e['rows'][1]}|")

print("\nalarms:")
for a in coord.alarms():
    print(f"  {a.at_s:>9}  {a.device_addr:016X}  {a.kind.value:13s} {a.state.value}")

print("\nstats:", coord.query({"query": "stats"}))
print("drops reported by the simulator:", result.trace.drops_by_device())
