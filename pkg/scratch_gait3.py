import itertools
import math
from dataclasses import replace

import numpy as np

from pkfr.env import PlanarEnv, generate_terrain
from pkfr.env.sim import SimConfig
from pkfr.env import gait as G
from scratch_gait2 import run


def run_seeded(cfg, freq, hip_amp, knee_amp, hip_off, seed, ramp, seconds=10.0):
    profile = generate_terrain("RoughGround", 0.0, seed=0)
    env = PlanarEnv(profile, cfg, seed=seed)
    env.reset()
    nom = np.asarray(cfg.nominal_pose)
    steps = int(seconds / cfg.control_dt)
    max_x = 0.0
    mean_vx = []
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
        mean_vx.append(s.vx)
        if res.terminated:
            return max_x, t, res.reason, float(np.mean(mean_vx))
    return max_x, steps, "ok", float(np.mean(mean_vx))


candidates = [
    (0.11, 1.2, 0.32, 0.3, 0.25),
    (0.11, 1.0, 0.32, 0.3, 0.25),
    (0.11, 0.8, 0.40, 0.3, 0.25),
    (0.14, 1.0, 0.40, 0.3, 0.25),
]
for cand in candidates:
    fh, freq, ha, ka, ho = cand
    cfg = replace(SimConfig(), foot_half=fh, contact_dn=400.0)
    results = []
    for seed in range(6):
        for ramp in (0.0, 1.0):
            mx, t, why, vbar = run_seeded(cfg, freq, ha, ka, ho, seed, ramp)
            results.append((seed, ramp, round(mx, 2), why, round(vbar, 2)))
    n_ok = sum(1 for r in results if r[2] >= 2.0)
    print(cand, f"pass2m={n_ok}/12", results)
