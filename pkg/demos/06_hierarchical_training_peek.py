#!/usr/bin/env python3
"""A short look at the hierarchical scheduler learning.

Trains the four-agent stack for a handful of episodes at the desk-scale
setting and prints per-agent mean rewards plus the eval safety numbers.
(The real training budget lives behind `harlsim train --desk-scale`.)
"""

import numpy as np

from harlsim.geometry import IntersectionSpec, build_intersection
from harlsim.rl.sac import SacConfig
from harlsim.sim import WorldConfig
from harlsim.training import HarlRunner

inter = build_intersection(IntersectionSpec())
world_cfg = WorldConfig(flow_rate=200.0, hv_fraction=0.0, seed=0)
sac = SacConfig(hidden=(32, 32), warmup_decisions=200, memory_capacity=10000, batch_size=64)
runner = HarlRunner(inter, world_cfg, sac_config=sac, seed=5, update_every=25)

print("agents: 1 upper/global  2 lower/global  3 upper/relative  4 lower/relative")
for ep in range(8):
    res = runner.run_episode(ep, 240.0, train=True)
    means = {
        aid: (round(float(np.mean(r)), 1) if r else None)
        for aid, r in res.rewards.items()
    }
    print("episode %d: collisions %2d, served %3d, mean rewards %s" % (
        ep, res.collisions, res.departures, means))

ev = runner.run_episode(99, 600.0, train=False)
print("\n10-minute evaluation with frozen policies:")
print("  collisions %d, served %d" % (ev.collisions, ev.departures))
