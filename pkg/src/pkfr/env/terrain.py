"""Procedural 1-D heightfield terrains, nine families, seeded and repeatable.

All profiles share a fixed grid: cells of RESOLUTION meters starting at
X_ORIGIN. The start zone (x < FEATURE_START) is always flat at the family's
starting elevation so the robot resets on solid, level ground; features live
in [FEATURE_START, FEATURE_END] and the final elevation holds to the edge.
Gap cells keep the surrounding height value in ``heights`` (used as the fall
reference) but provide no support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = (
    "Boxes",
    "WalkOverObstacles",
    "ClimbSlope",
    "RoughGround",
    "UpStairs",
    "ClimbDown",
    "DownStairs",
    "ClimbUp",
    "GapsCrossing",
)

RESOLUTION = 0.05
X_ORIGIN = -2.0
N_CELLS = 256  # grid spans [-2.0, 10.8)
FEATURE_START = 1.0
FEATURE_END = 9.0
GOAL_X = 8.0

# family feature scales at difficulty 1.0 (meters)
BOX_HEIGHT = 0.28
OBSTACLE_HEIGHT = 0.22
SLOPE_GRADE = 0.35
ROUGH_AMP = 0.10
STAIR_RISE = 0.16
STAIR_WIDTH = 0.35
LEDGE_HEIGHT = 0.38
GAP_WIDTH = 0.50


class TerrainError(ValueError):
    """Unknown family or invalid difficulty."""


@dataclass(frozen=True)
class TerrainProfile:
    family: str
    difficulty: float
    seed: int
    heights: np.ndarray = field(repr=False)
    gaps: np.ndarray = field(repr=False)
    resolution: float = RESOLUTION
    x_origin: float = X_ORIGIN
    goal_x: float = GOAL_X

    def cell_index(self, x: float) -> int:
        i = int(math.floor((x - self.x_origin) / self.resolution))
        return min(max(i, 0), len(self.heights) - 1)

    def height_at(self, x: float) -> float:
        """Stored surface height (gap cells report the surrounding level)."""
        return float(self.heights[self.cell_index(x)])

    def support_at(self, x: float) -> float:
        """Supporting surface height; -inf over a gap (nothing to stand on)."""
        i = self.cell_index(x)
        if self.gaps[i]:
            return -math.inf
        return float(self.heights[i])

    @property
    def x_end(self) -> float:
        return self.x_origin + len(self.heights) * self.resolution


def _cell_range(x_lo: float, x_hi: float) -> slice:
    lo = int(math.floor((x_lo - X_ORIGIN) / RESOLUTION))
    hi = int(math.ceil((x_hi - X_ORIGIN) / RESOLUTION))
    return slice(max(lo, 0), min(hi, N_CELLS))


def generate_terrain(family: str, difficulty: float, seed: int) -> TerrainProfile:
    """Build the seeded heightfield for one family at the given difficulty."""
    if family not in FAMILIES:
        raise TerrainError(f"unknown terrain family {family!r}; expected one of {FAMILIES}")
    if not 0.0 <= difficulty <= 1.0:
        raise TerrainError(f"difficulty must lie in [0, 1], got {difficulty}")

    rng = np.random.default_rng(seed)
    heights = np.zeros(N_CELLS, dtype=np.float64)
    gaps = np.zeros(N_CELLS, dtype=bool)
    xs = X_ORIGIN + (np.arange(N_CELLS) + 0.5) * RESOLUTION
    d = float(difficulty)

    if family == "Boxes":
        cursor = FEATURE_START
        while cursor < FEATURE_END:
            length = rng.uniform(0.6, 1.4)
            level = rng.uniform(0.0, BOX_HEIGHT) * d
            heights[_cell_range(cursor, min(cursor + length, FEATURE_END))] = level
            cursor += length

    elif family == "WalkOverObstacles":
        cursor = FEATURE_START + 0.4
        while cursor < FEATURE_END - 0.4:
            width = rng.uniform(0.15, 0.35)
            bump = rng.uniform(0.5, 1.0) * OBSTACLE_HEIGHT * d
            heights[_cell_range(cursor, cursor + width)] = bump
            cursor += width + rng.uniform(1.0, 1.8)

    elif family == "ClimbSlope":
        ramp = np.clip(xs - FEATURE_START, 0.0, FEATURE_END - FEATURE_START)
        heights[:] = SLOPE_GRADE * d * ramp

    elif family == "RoughGround":
        noise = rng.uniform(-1.0, 1.0, size=N_CELLS) * ROUGH_AMP * d
        # 3-cell smoothing keeps slopes finite at the grid scale
        noise = np.convolve(noise, np.ones(3) / 3.0, mode="same")
        zone = (xs >= FEATURE_START) & (xs <= FEATURE_END)
        heights[zone] = noise[zone]

    elif family == "UpStairs":
        span = (xs >= FEATURE_START) & (xs <= FEATURE_END)
        steps = np.floor((xs - FEATURE_START) / STAIR_WIDTH)
        heights[span] = STAIR_RISE * d * steps[span]
        top = STAIR_RISE * d * math.floor((FEATURE_END - FEATURE_START) / STAIR_WIDTH)
        heights[xs > FEATURE_END] = top

    elif family == "DownStairs":
        n_steps = int(math.floor((FEATURE_END - FEATURE_START) / STAIR_WIDTH))
        start_level = STAIR_RISE * d * n_steps
        heights[xs < FEATURE_START] = start_level
        span = (xs >= FEATURE_START) & (xs <= FEATURE_END)
        steps = np.floor((xs - FEATURE_START) / STAIR_WIDTH) + 1
        heights[span] = np.maximum(start_level - STAIR_RISE * d * steps[span], 0.0)

    elif family == "ClimbDown":
        heights[xs < 5.0] = LEDGE_HEIGHT * d

    elif family == "ClimbUp":
        heights[xs >= 4.0] = LEDGE_HEIGHT * d

    elif family == "GapsCrossing":
        width = GAP_WIDTH * d
        if width >= RESOLUTION:
            cursor = FEATURE_START + 0.5
            while cursor + width < FEATURE_END - 0.5:
                gaps[_cell_range(cursor, cursor + width)] = True
                cursor += width + rng.uniform(1.2, 2.0)

    return TerrainProfile(
        family=family, difficulty=d, seed=int(seed), heights=heights, gaps=gaps
    )


def export_heightfield(profile: TerrainProfile, path) -> None:
    """Plain-text dump: header line 'family difficulty seed resolution',
    then one height (or 'GAP') per cell."""
    lines = [
        f"{profile.family} {profile.difficulty!r} {profile.seed} {profile.resolution!r}"
    ]
    for h, g in zip(profile.heights, profile.gaps):
        lines.append("GAP" if g else repr(float(h)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_heightfield(path) -> TerrainProfile:
    """Read a profile written by ``export_heightfield``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    family, difficulty, seed, resolution = lines[0].split()
    heights = np.zeros(len(lines) - 1, dtype=np.float64)
    gaps = np.zeros(len(lines) - 1, dtype=bool)
    for i, line in enumerate(lines[1:]):
        if line == "GAP":
            gaps[i] = True
        else:
            heights[i] = float(line)
    return TerrainProfile(
        family=family,
        difficulty=float(difficulty),
        seed=int(seed),
        heights=heights,
        gaps=gaps,
        resolution=float(resolution),
    )
