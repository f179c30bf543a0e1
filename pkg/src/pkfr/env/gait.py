"""Scripted periodic reference gait, the source of real motion snippets.

Joint trajectories are smooth sinusoids with a half-period offset between
the legs; knees flex during swing for foot clearance. Joint velocities are
the exact analytic phase derivatives scaled by the stride frequency, so the
states form a consistent (q, q_dot) trajectory. The same generator covers
the full-scale joint layout for shape checks: extra joints get small
alternating sinusoids around zero.
"""

from __future__ import annotations

import math

import numpy as np

from ..spaces import PLANAR, DimSpec, amp_state

GAIT_FREQ = 1.1  # strides per second
HIP_OFFSET = 0.25
HIP_AMP = 0.36
KNEE_BASE = -0.5
KNEE_AMP = 0.30
FORWARD_SPEED = 1.1  # nominal base speed carried in the motion state
RAMP_TIME = 1.0  # open-loop replay eases amplitudes in over this many seconds

TWO_PI = 2.0 * math.pi


def _bump(p: float) -> float:
    # C-infinity clearance profile, peak 1 at p=0, min 0 at p=0.5
    return (0.5 + 0.5 * math.cos(TWO_PI * p)) ** 3


def _bump_dp(p: float) -> float:
    c = 0.5 + 0.5 * math.cos(TWO_PI * p)
    return 3.0 * c * c * (-0.5 * TWO_PI * math.sin(TWO_PI * p))


def joint_targets(phase: float, amp_scale: float = 1.0) -> np.ndarray:
    """Planar joint positions (hip_l, knee_l, hip_r, knee_r) at a phase."""
    q, _ = _planar_joints(phase, amp_scale)
    return q


def open_loop_action(phase: float, elapsed: float, nominal, action_scale: float):
    """Action that replays the reference gait through the PD controller.

    Amplitudes ramp in over RAMP_TIME seconds so the replay starts from the
    nominal stance without a transient kick.
    """
    amp = min(1.0, elapsed / RAMP_TIME) if RAMP_TIME > 0 else 1.0
    return (joint_targets(phase, amp) - np.asarray(nominal)) / action_scale


def _planar_joints(phase: float, amp_scale: float = 1.0):
    p = phase % 1.0
    q = np.empty(4, dtype=np.float64)
    dq = np.empty(4, dtype=np.float64)
    for leg, off in ((0, 0.0), (1, 0.5)):
        s = math.sin(TWO_PI * (p + off))
        c = math.cos(TWO_PI * (p + off))
        q[2 * leg] = HIP_OFFSET + amp_scale * HIP_AMP * s
        dq[2 * leg] = amp_scale * HIP_AMP * TWO_PI * c
        # swing happens while the hip moves forward; flex the knee then
        q[2 * leg + 1] = KNEE_BASE - amp_scale * KNEE_AMP * _bump(p + off)
        dq[2 * leg + 1] = -amp_scale * KNEE_AMP * _bump_dp(p + off)
    return q, dq


def reference_motion(phase: float, dims: DimSpec = PLANAR) -> np.ndarray:
    """Motion state of the scripted gait at a phase in [0, 1)."""
    if dims.n_joints >= 4:
        q4, dq4 = _planar_joints(phase)
        q = np.zeros(dims.n_joints, dtype=np.float64)
        dq = np.zeros(dims.n_joints, dtype=np.float64)
        q[:4], dq[:4] = q4, dq4
        for j in range(4, dims.n_joints):
            off = 0.5 * (j % 2)
            amp = 0.1
            q[j] = amp * math.sin(TWO_PI * (phase + off))
            dq[j] = amp * TWO_PI * math.cos(TWO_PI * (phase + off))
    else:
        raise ValueError("reference gait needs at least 4 joints")
    # level base: gravity projects straight down, no pitch rate
    gravity = np.zeros(dims.gravity_dim, dtype=np.float64)
    gravity[-1] = -1.0
    v_lin = np.zeros(dims.vlin_dim, dtype=np.float64)
    v_lin[0] = FORWARD_SPEED
    omega = np.zeros(dims.omega_dim, dtype=np.float64)
    qv = dq * GAIT_FREQ
    return amp_state(gravity, q, qv, v_lin, omega)
