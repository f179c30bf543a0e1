import itertools
import math
import sys
from dataclasses import replace

import numpy as np

from pkfr.env import PlanarEnv, generate_terrain
from pkfr.env.sim import SimConfig
from pkfr.env import gait as G


def run_open_loop(cfg, freq, hip_amp, knee_amp, hip_off, seconds=8.0, ramp=1.0,
                  verbose=False):
    profile = generate_terrain("RoughGround", 0.0, seed=0)
    env = PlanarEnv(profile, cfg, seed=0)
    env.reset(seed=0)
    nom = np.asarray(cfg.nominal_pose)
    steps = int(seconds / cfg.control_dt)
    max_x = 0.0
    for t in range(steps):
        phase = (t * cfg.control_dt * freq) % 1.0
        scale = min(1.0, (t * cfg.control_dt) / ramp) if ramp > 0 else 1.0
        q = np.empty(4)
        for leg, off in ((0, 0.0), (1, 0.5)):
            p = phase + off
            q[2 * leg] = hip_off + scale * hip_amp * math.sin(2 * math.pi * p)
            q[2 * leg + 1] = -0.5 - scale * knee_amp * G._bump(p)
        action = (q - nom) / cfg.action_scale
        res = env.step(action)
        s = env.state
        max_x = max(max_x, s.x)
        if verbose and t % 25 == 0:
            print(f"t={t:4d} x={s.x:+.3f} z={s.z:.3f} pitch={s.pitch:+.3f} vx={s.vx:+.3f}")
        if res.terminated:
            return max_x, t, res.reason
    return max_x, steps, "ok"


if __name__ == "__main__":
    best = []
    for foot_half, freq, hip_amp, knee_amp, dn, kt in itertools.product(
        [0.08, 0.11], [1.0, 1.2, 1.4], [0.25, 0.32], [0.35, 0.45], [200.0, 400.0], [400.0, 800.0]
    ):
        cfg = replace(SimConfig(), foot_half=foot_half, contact_dn=dn, contact_kt=kt)
        mx, t, why = run_open_loop(cfg, freq, hip_amp, knee_amp, 0.25)
        best.append((mx, foot_half, freq, hip_amp, knee_amp, dn, kt, t, why))
    best.sort(reverse=True)
    for row in best[:12]:
        print(row)
