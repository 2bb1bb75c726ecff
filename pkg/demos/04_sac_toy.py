#!/usr/bin/env python3
"""The from-scratch soft actor-critic on a one-dimensional toy task.

Reward peaks at action 0.7 inside the span [0, 2]; the agent should
concentrate its policy there. Prints the loss report and the drift of the
deterministic action over training.
"""

import numpy as np

from harlsim.rl.sac import SacAgent, SacConfig

cfg = SacConfig(hidden=(16, 16), warmup_decisions=0, batch_size=64, memory_capacity=5000)
agent = SacAgent(state_dim=1, action_dim=1, span=(0.0, 2.0), config=cfg, seed=3)
rng = np.random.default_rng(0)

for _ in range(800):
    a = rng.uniform(0.0, 2.0)
    agent.memory.push([0.0], [a], -((a - 0.7) ** 2), [0.0], True)

print("deterministic action before training: %.3f" % agent.sample_action([0.0], True)[0][0])
for k in range(400):
    report = agent.update()
    if k % 80 == 0:
        act = agent.sample_action([0.0], True)[0][0]
        print("update %3d: J_V=%7.3f J_Q=%7.3f J_pi=%7.3f alpha=%.3f  act=%.3f" % (
            k, report["J_V"], report["J_Q"], report["J_pi"], report["alpha"], act))

final = agent.sample_action([0.0], True)[0][0]
print("deterministic action after training:  %.3f (target 0.7)" % final)
