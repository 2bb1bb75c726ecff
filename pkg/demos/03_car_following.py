#!/usr/bin/env python3
"""Human drivers on a single lane: the car-following model at work.

Feeds one entry lane for ten simulated minutes and reports headways, speeds,
and (the whole point) zero rear-end collisions.
"""

import numpy as np

from harlsim.geometry import IntersectionSpec, build_intersection
from harlsim.idm import IdmParams, desired_gap, idm_accel
from harlsim.sim import World, WorldConfig

p = IdmParams()
print("Car-following parameters: a_max=%.1f b=%.1f v0=%.1f s0=%.1f T=%.1f (%s form)" % (
    p.a_max, p.b, p.v0, p.s0, p.T, p.form))
print("Sample accelerations:")
for v, gap, lv in ((0.0, None, None), (15.0, None, None), (10.0, 30.0, 10.0), (12.0, 8.0, 4.0)):
    a = idm_accel(v, gap, lv, p)
    print("  v=%4.1f gap=%s lead=%s -> a=%+.2f m/s^2" % (v, gap, lv, a))
print("Desired gap while following at 10 m/s (closing 2 m/s): %.1f m" % desired_gap(10.0, 2.0, p))

inter = build_intersection(IntersectionSpec())
world = World(inter, WorldConfig(flow_rate=450.0, hv_fraction=1.0, seed=7, spawn_lanes=(0,)))
speeds = []
for _ in range(3000):  # 10 simulated minutes
    world.step()
    speeds.extend(v.v for v in world.vehicles.values())

departed = sum(1 for e in world.events if e["event"] == "departure")
print("\nAfter 600 s on one lane at 450 veh/h:")
print("  vehicles served: %d, still on road: %d" % (departed, len(world.vehicles)))
print("  mean speed %.1f m/s, collisions: %d" % (float(np.mean(speeds)), world.collision_count))
assert world.collision_count == 0
