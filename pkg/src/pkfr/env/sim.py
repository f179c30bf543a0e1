"""Planar (sagittal) legged robot with PD-tracked action deltas.

The torso is a rigid body; each of the two legs has a hip and knee joint
driven by PD torques around reflected actuator inertias. The hip pivots are
separated fore/aft and each foot is a short level skate contacting at heel
and toe, which gives the stance a real support polygon. Legs are treated as
massless: ground reaction forces from the penalty-spring contact act on the
base (force plus torque about the center of mass), while joints feel only
their PD torques. Integration is semi-implicit Euler at 200 Hz with 4
substeps per 50 Hz control step. Everything is deterministic given
(profile, seed, action sequence).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..spaces import HISTORY_LEN, PLANAR, amp_state, obs_vector
from .gait import GAIT_FREQ
from .terrain import TerrainProfile

N_JOINTS = 4


class SimContractError(ValueError):
    """Violated simulator precondition (e.g. non-finite action)."""


@dataclass(frozen=True)
class SimConfig:
    # PD actuation
    kp: float = 40.0
    kd: float = 1.0
    action_scale: float = 0.5  # rad per unit action
    action_clip: float = 1.0
    # body
    base_mass: float = 10.0
    base_inertia: float = 0.9
    joint_inertia: float = 0.08
    thigh_len: float = 0.4
    shank_len: float = 0.4
    hip_drop: float = 0.2  # hip pivots below the center of mass
    hip_sep: float = 0.12  # fore/aft pivot offset, leg 0 front, leg 1 rear
    foot_half: float = 0.14  # heel/toe half-extent of the foot plate
    gravity: float = 9.81
    nominal_pose: tuple = (0.25, -0.5, 0.25, -0.5)
    # ground contact: penalty spring normal, anchored stick-slip tangential
    contact_kn: float = 2.0e4
    contact_dn: float = 400.0
    contact_kt: float = 1.0e4  # tangential anchor spring
    contact_dt: float = 100.0  # tangential damper
    friction_mu: float = 1.0
    # timing
    physics_hz: float = 200.0
    substeps: int = 4
    # termination
    fall_height: float = 0.45
    fall_pitch: float = 1.0
    episode_cap: int = 600
    # depth sensing
    rays: int = 32
    ray_min_deg: float = -80.0
    ray_max_deg: float = -10.0
    ray_max_dist: float = 5.0
    # reset / command
    command_range: tuple = (0.3, 1.0)
    reset_perturbation: float = 0.03
    # task reward
    reward_vel_weight: float = 1.0
    reward_alive: float = 0.2
    reward_term: float = 10.0
    vel_sigma_sq: float = 0.25

    @property
    def dt_sub(self) -> float:
        return 1.0 / self.physics_hz

    @property
    def control_dt(self) -> float:
        return self.substeps / self.physics_hz

    @property
    def stand_height(self) -> float:
        qh, qk = self.nominal_pose[0], self.nominal_pose[1]
        return (
            self.hip_drop
            + self.thigh_len * math.cos(qh)
            + self.shank_len * math.cos(qh + qk)
        )


DEFAULT_CONFIG = SimConfig()


@dataclass
class RobotState:
    x: float
    z: float
    pitch: float
    vx: float
    vz: float
    omega: float
    q: np.ndarray
    qd: np.ndarray
    prev_action: np.ndarray
    foot_contact: tuple = (False, False)
    # friction anchor x per contact point (heel/toe per leg); NaN = detached
    anchors: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))

    def copy(self) -> "RobotState":
        return replace(self, q=self.q.copy(), qd=self.qd.copy(),
                       prev_action=self.prev_action.copy(),
                       anchors=self.anchors.copy())


@dataclass
class TaskReward:
    tracking: float
    alive: float
    termination: float

    @property
    def total(self) -> float:
        return self.tracking + self.alive + self.termination


@dataclass
class StepResult:
    obs: np.ndarray
    amp: np.ndarray
    scan: np.ndarray
    reward: TaskReward | None = None
    terminated: bool = False
    reason: str | None = None  # fall | out_of_bounds | timeout | success

    def __post_init__(self):
        if self.terminated and self.reason is None:
            raise SimContractError("terminated step result must carry a reason")


def _foot_state(x, z, pitch, q, qd, vx, vz, om, leg, cfg):
    """World ankle position and velocity of one foot (leg 0 front, 1 rear)."""
    qh, qk = q[2 * leg], q[2 * leg + 1]
    qdh, qdk = qd[2 * leg], qd[2 * leg + 1]
    sp, cp = math.sin(pitch), math.cos(pitch)
    # hip pivot sits at body-frame (+-hip_sep, -hip_drop)
    off = cfg.hip_sep if leg == 0 else -cfg.hip_sep
    hx = x + off * cp + cfg.hip_drop * sp
    hz = z + off * sp - cfg.hip_drop * cp
    a1 = pitch + qh
    a2 = a1 + qk
    s1, c1 = math.sin(a1), math.cos(a1)
    s2, c2 = math.sin(a2), math.cos(a2)
    px = hx + cfg.thigh_len * s1 + cfg.shank_len * s2
    pz = hz - cfg.thigh_len * c1 - cfg.shank_len * c2
    # hip velocity from base motion: omega x r with r the hip offset
    hvx = vx + om * (-(hz - z))
    hvz = vz + om * (hx - x)
    r1x, r1z = cfg.thigh_len * c1, cfg.thigh_len * s1
    r2x, r2z = cfg.shank_len * c2, cfg.shank_len * s2
    pvx = hvx + (om + qdh) * r1x + (om + qdh + qdk) * r2x
    pvz = hvz + (om + qdh) * r1z + (om + qdh + qdk) * r2z
    return px, pz, pvx, pvz


def substep(state: RobotState, torques: np.ndarray, profile: TerrainProfile,
            cfg: SimConfig = DEFAULT_CONFIG) -> RobotState:
    """One 200 Hz physics substep under explicit joint torques."""
    x, z, pitch = state.x, state.z, state.pitch
    vx, vz, om = state.vx, state.vz, state.omega
    q, qd = state.q, state.qd

    fx, fz, torque = 0.0, 0.0, 0.0
    contacts = [False, False]
    anchors = state.anchors.copy()
    sp, cp = math.sin(pitch), math.cos(pitch)
    for leg in (0, 1):
        ax_, az_, avx, avz = _foot_state(x, z, pitch, q, qd, vx, vz, om, leg, cfg)
        for side, sgn in enumerate((-1.0, 1.0)):
            k = 2 * leg + side
            # heel/toe at the ends of a body-parallel foot plate
            px = ax_ + sgn * cfg.foot_half * cp
            pz = az_ + sgn * cfg.foot_half * sp
            pvx = avx - om * sgn * cfg.foot_half * sp
            pvz = avz + om * sgn * cfg.foot_half * cp
            i = profile.cell_index(px)
            if profile.gaps[i]:
                anchors[k] = np.nan
                continue
            pen = float(profile.heights[i]) - pz
            if pen <= 0.0:
                anchors[k] = np.nan
                continue
            fn = cfg.contact_kn * pen - cfg.contact_dn * pvz
            if fn < 0.0:
                fn = 0.0
            if math.isnan(anchors[k]):
                anchors[k] = px
            ft = -cfg.contact_kt * (px - anchors[k]) - cfg.contact_dt * pvx
            cap = cfg.friction_mu * fn
            if ft > cap:
                ft = cap
                anchors[k] = px + ft / cfg.contact_kt  # anchor slides at the cone
            elif ft < -cap:
                ft = -cap
                anchors[k] = px + ft / cfg.contact_kt
            fx += ft
            fz += fn
            torque += (px - x) * fn - (pz - z) * ft
            contacts[leg] = contacts[leg] or fn > 0.0

    dt = cfg.dt_sub
    ax = fx / cfg.base_mass
    az = fz / cfg.base_mass - cfg.gravity
    aom = torque / cfg.base_inertia

    vx += ax * dt
    vz += az * dt
    om += aom * dt
    x += vx * dt
    z += vz * dt
    pitch += om * dt

    qd = qd + (torques / cfg.joint_inertia) * dt
    q = q + qd * dt

    return RobotState(
        x=x, z=z, pitch=pitch, vx=vx, vz=vz, omega=om, q=q, qd=qd,
        prev_action=state.prev_action, foot_contact=tuple(contacts),
        anchors=anchors,
    )


def pd_torques(state: RobotState, action: np.ndarray, cfg: SimConfig) -> np.ndarray:
    target = np.asarray(cfg.nominal_pose) + cfg.action_scale * np.clip(
        action, -cfg.action_clip, cfg.action_clip
    )
    return cfg.kp * (target - state.q) - cfg.kd * state.qd


def mechanical_energy(state: RobotState, cfg: SimConfig = DEFAULT_CONFIG) -> float:
    """Kinetic plus gravitational energy (datum at world z = 0)."""
    lin = 0.5 * cfg.base_mass * (state.vx**2 + state.vz**2)
    rot = 0.5 * cfg.base_inertia * state.omega**2
    joints = 0.5 * cfg.joint_inertia * float(np.sum(state.qd**2))
    return lin + rot + joints + cfg.base_mass * cfg.gravity * state.z


def observe(state: RobotState, command: float) -> np.ndarray:
    g_p = (-math.sin(state.pitch), -math.cos(state.pitch))
    return obs_vector(state.omega, g_p, command, state.q, state.qd, state.prev_action)


def motion_state(state: RobotState) -> np.ndarray:
    g_p = (-math.sin(state.pitch), -math.cos(state.pitch))
    return amp_state(g_p, state.q, state.qd, state.vx, state.omega)


def depth_scan(state: RobotState, profile: TerrainProfile,
               cfg: SimConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Ray-cast distances from the base at fixed body-frame angles."""
    angles = np.linspace(
        math.radians(cfg.ray_min_deg), math.radians(cfg.ray_max_deg), cfg.rays
    )
    out = np.empty(cfg.rays, dtype=np.float64)
    for i, a in enumerate(angles):
        b = state.pitch + a
        out[i] = _ray_distance(
            state.x, state.z, math.cos(b), math.sin(b), profile, cfg.ray_max_dist
        )
    return out


def _ray_distance(ox, oz, dx, dz, profile, smax):
    heights = profile.heights
    gaps = profile.gaps
    res = profile.resolution
    x0 = profile.x_origin
    n = len(heights)

    if abs(dx) < 1e-12:
        i = profile.cell_index(ox)
        if not gaps[i]:
            h = heights[i]
            if oz <= h:
                return 0.0
            if dz < 0.0:
                return min((h - oz) / dz, smax)
        return smax

    step = 1 if dx > 0 else -1
    i = int(math.floor((ox - x0) / res))
    s = 0.0
    while True:
        if i < 0:
            if step < 0:
                return smax
        elif i >= n:
            if step > 0:
                return smax
        elif not gaps[i]:
            h = heights[i]
            z_enter = oz + dz * s
            if z_enter <= h:
                return min(s, smax)  # entered through the cell's side wall
            if dz < 0.0:
                s_hit = (h - oz) / dz
                x_hi = x0 + (i + 1) * res
                x_lo = x0 + i * res
                s_exit = (x_hi - ox) / dx if step > 0 else (x_lo - ox) / dx
                if s <= s_hit <= s_exit:
                    return min(s_hit, smax)
        x_hi = x0 + (i + 1) * res
        x_lo = x0 + i * res
        s = (x_hi - ox) / dx if step > 0 else (x_lo - ox) / dx
        if s > smax:
            return smax
        i += step


def step(state: RobotState, action: np.ndarray, profile: TerrainProfile,
         command: float, cfg: SimConfig = DEFAULT_CONFIG):
    """Advance one 50 Hz control step. Returns (new_state, StepResult).

    Timeout is the caller's concern; this detects fall, bounds and success.
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (N_JOINTS,):
        raise SimContractError(f"action must have shape ({N_JOINTS},), got {action.shape}")
    if not np.isfinite(action).all():
        raise SimContractError("non-finite action")

    s = state.copy()
    for _ in range(cfg.substeps):
        tau = pd_torques(s, action, cfg)
        s = substep(s, tau, profile, cfg)
    s.prev_action = np.clip(action, -cfg.action_clip, cfg.action_clip)

    local_h = profile.height_at(s.x)
    terminated, reason = False, None
    if (s.z - local_h) < cfg.fall_height or abs(s.pitch) > cfg.fall_pitch:
        terminated, reason = True, "fall"
    elif s.x < profile.x_origin + 0.3 or s.x > profile.x_end - 0.3:
        terminated, reason = True, "out_of_bounds"
    elif s.x >= profile.goal_x:
        terminated, reason = True, "success"

    tracking = cfg.reward_vel_weight * math.exp(
        -((s.vx - command) ** 2) / cfg.vel_sigma_sq
    )
    reward = TaskReward(
        tracking=tracking,
        alive=cfg.reward_alive,
        termination=-cfg.reward_term if reason == "fall" else 0.0,
    )
    result = StepResult(
        obs=observe(s, command),
        amp=motion_state(s),
        scan=depth_scan(s, profile, cfg),
        reward=reward,
        terminated=terminated,
        reason=reason,
    )
    return s, result


def initial_state(profile: TerrainProfile, cfg: SimConfig, rng: np.random.Generator,
                  perturbation: float | None = None) -> RobotState:
    pert = cfg.reset_perturbation if perturbation is None else perturbation
    q = np.asarray(cfg.nominal_pose, dtype=np.float64)
    if pert > 0:
        q = q + rng.uniform(-pert, pert, size=N_JOINTS)
    ground = profile.height_at(0.0)
    return RobotState(
        x=0.0,
        z=ground + cfg.stand_height + 0.002,
        pitch=0.0,
        vx=0.0, vz=0.0, omega=0.0,
        q=q,
        qd=np.zeros(N_JOINTS, dtype=np.float64),
        prev_action=np.zeros(N_JOINTS, dtype=np.float64),
    )


class PlanarEnv:
    """Stateful wrapper: episode bookkeeping, observation history, reset."""

    def __init__(self, profile: TerrainProfile, cfg: SimConfig = DEFAULT_CONFIG,
                 seed: int = 0):
        self.profile = profile
        self.cfg = cfg
        self.dims = PLANAR
        self._rng = np.random.default_rng(seed)
        self.state: RobotState | None = None
        self.command = 0.0
        self.phase0 = 0.0
        self.t = 0
        self.history = np.zeros((HISTORY_LEN, PLANAR.obs_dim), dtype=np.float64)
        self.amp_history = np.zeros((HISTORY_LEN, PLANAR.amp_dim), dtype=np.float64)

    def reset(self, seed=None) -> StepResult:
        rng = np.random.default_rng(seed) if seed is not None else self._rng
        self.state = initial_state(self.profile, self.cfg, rng)
        self.command = float(rng.uniform(*self.cfg.command_range))
        self.phase0 = float(rng.uniform(0.0, 1.0))
        self.t = 0
        obs = observe(self.state, self.command)
        amp = motion_state(self.state)
        self.history[:] = 0.0
        self.history[-1] = obs
        self.amp_history[:] = 0.0
        self.amp_history[-1] = amp
        return StepResult(
            obs=obs, amp=amp, scan=depth_scan(self.state, self.profile, self.cfg)
        )

    @property
    def phase(self) -> float:
        """Reference-gait phase aligned with episode time."""
        return (self.phase0 + self.t * self.cfg.control_dt * GAIT_FREQ) % 1.0

    def step(self, action) -> StepResult:
        if self.state is None:
            raise SimContractError("step before reset")
        self.state, result = step(self.state, action, self.profile, self.command, self.cfg)
        self.t += 1
        if not result.terminated and self.t >= self.cfg.episode_cap:
            result.terminated = True
            result.reason = "timeout"
        self.history = np.roll(self.history, -1, axis=0)
        self.history[-1] = result.obs
        self.amp_history = np.roll(self.amp_history, -1, axis=0)
        self.amp_history[-1] = result.amp
        return result
