import itertools
import math
from dataclasses import replace

import numpy as np

from pkfr.env import PlanarEnv, generate_terrain
from pkfr.env.sim import SimConfig
from pkfr.env import gait as G


def run(cfg, freq, hip_amp, knee_amp, hip_off, knee_base=-0.5, seconds=10.0,
        ramp=1.0, verbose=False):
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
            q[2 * leg + 1] = knee_base - scale * knee_amp * G._bump(p)
        action = (q - nom) / cfg.action_scale
        res = env.step(action)
        s = env.state
        max_x = max(max_x, s.x)
        if verbose and t % 20 == 0:
            print(f"t={t:4d} x={s.x:+.3f} z={s.z:.3f} th={s.pitch:+.3f} vx={s.vx:+.3f} c={s.foot_contact}")
        if res.terminated:
            if verbose:
                print(f"TERM t={t} {res.reason} x={s.x:.3f} th={s.pitch:+.3f}")
            return max_x, t, res.reason
    return max_x, steps, "ok"


if __name__ == "__main__":
    print("--- trace of current best ---")
    cfg = replace(SimConfig(), foot_half=0.11, contact_dn=400.0, contact_kt=800.0)
    run(cfg, 1.0, 0.32, 0.35, 0.25, verbose=True)

    print("--- wider sweep ---")
    rows = []
    for fh, freq, hip_amp, knee_amp, hip_off in itertools.product(
        [0.11, 0.14], [0.8, 1.0, 1.2], [0.25, 0.32, 0.4], [0.3, 0.4], [0.15, 0.25, 0.35]
    ):
        cfg = replace(SimConfig(), foot_half=fh, contact_dn=400.0)
        mx, t, why = run(cfg, freq, hip_amp, knee_amp, hip_off)
        rows.append((mx, fh, freq, hip_amp, knee_amp, hip_off, t, why))
    rows.sort(reverse=True)
    for r in rows[:15]:
        print(r)
