import numpy as np
from dataclasses import replace

from pkfr.env import PlanarEnv, generate_terrain
from pkfr.env.sim import SimConfig

cfg = SimConfig()
profile = generate_terrain("RoughGround", 0.0, seed=0)
env = PlanarEnv(profile, cfg, seed=0)
env.reset(seed=0)
env.state.pitch = 0.05  # small kick
zeros = np.zeros(4)
for t in range(500):
    res = env.step(zeros)
    s = env.state
    if t % 50 == 0 or res.terminated:
        print(f"t={t:4d} x={s.x:+.4f} z={s.z:.4f} pitch={s.pitch:+.4f} om={s.omega:+.4f} contacts={s.foot_contact}")
    if res.terminated:
        print("terminated:", res.reason)
        break
