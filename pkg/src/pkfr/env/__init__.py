"""Planar legged simulator: terrains, dynamics, sensing, reference gait."""

from .gait import GAIT_FREQ, joint_targets, reference_motion
from .sim import (
    DEFAULT_CONFIG,
    PlanarEnv,
    RobotState,
    SimConfig,
    SimContractError,
    StepResult,
    TaskReward,
    depth_scan,
    initial_state,
    mechanical_energy,
    motion_state,
    observe,
    pd_torques,
    step,
    substep,
)
from .terrain import (
    FAMILIES,
    TerrainError,
    TerrainProfile,
    export_heightfield,
    generate_terrain,
    load_heightfield,
)

__all__ = [
    "GAIT_FREQ",
    "joint_targets",
    "reference_motion",
    "DEFAULT_CONFIG",
    "PlanarEnv",
    "RobotState",
    "SimConfig",
    "SimContractError",
    "StepResult",
    "TaskReward",
    "depth_scan",
    "initial_state",
    "mechanical_energy",
    "motion_state",
    "observe",
    "pd_torques",
    "step",
    "substep",
    "FAMILIES",
    "TerrainError",
    "TerrainProfile",
    "export_heightfield",
    "generate_terrain",
    "load_heightfield",
]
