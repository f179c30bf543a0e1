"""Observation and motion-state layouts.

The per-step policy observation concatenates, in this exact order: base
angular velocity, projected gravity, velocity command, joint positions,
joint velocities, previous action. The motion state used by the style
discriminator concatenates projected gravity, joint positions, joint
velocities, base linear velocity, base angular velocity.

Two instantiations are used: the planar desk robot (4 joints, sagittal
plane) and the full-scale humanoid layout (29 joints, 3-D vectors), the
latter only for shape checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HISTORY_LEN = 8
FUTURE_STEPS = 2
SEQ_LEN = HISTORY_LEN + FUTURE_STEPS  # discriminator sequence rows


@dataclass(frozen=True)
class DimSpec:
    n_joints: int
    omega_dim: int
    gravity_dim: int
    vcmd_dim: int
    vlin_dim: int

    @property
    def obs_dim(self) -> int:
        return self.omega_dim + self.gravity_dim + self.vcmd_dim + 3 * self.n_joints

    @property
    def amp_dim(self) -> int:
        return self.gravity_dim + 2 * self.n_joints + self.vlin_dim + self.omega_dim

    @property
    def privileged_dim(self) -> int:
        return self.obs_dim + self.vlin_dim


PLANAR = DimSpec(n_joints=4, omega_dim=1, gravity_dim=2, vcmd_dim=1, vlin_dim=1)
FULL_SCALE = DimSpec(n_joints=29, omega_dim=3, gravity_dim=3, vcmd_dim=3, vlin_dim=3)


def obs_vector(omega, gravity, vcmd, q_pos, q_vel, prev_action) -> np.ndarray:
    parts = [np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in
             (omega, gravity, vcmd, q_pos, q_vel, prev_action)]
    return np.concatenate(parts)


def amp_state(gravity, q_pos, q_vel, v_lin, omega) -> np.ndarray:
    parts = [np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in
             (gravity, q_pos, q_vel, v_lin, omega)]
    return np.concatenate(parts)


def privileged_obs(obs: np.ndarray, v_lin) -> np.ndarray:
    return np.concatenate([obs, np.atleast_1d(np.asarray(v_lin, dtype=np.float64))])
