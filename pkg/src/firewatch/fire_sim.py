"""Ground-truth fire propagation using the simplified FARSITE spread model.

Firespots are points on the firefront. Each one advances with velocity
``C(R, U) * [sin(theta), cos(theta)]`` per step. The world can also spawn
children and prune spots that walk into already-burnt ground.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# Child placement ring around the parent (grid units).
SPAWN_RADIUS_MIN = 0.5
SPAWN_RADIUS_MAX = 1.5


def length_to_breadth(U: float) -> float:
    """Length-to-breadth ratio LB(U) of the elliptical fire shape."""
    return 0.936 * math.exp(0.256 * U) + 0.461 * math.exp(-0.154 * U) - 0.397


def length_to_breadth_slope(U: float) -> float:
    return 0.936 * 0.256 * math.exp(0.256 * U) - 0.461 * 0.154 * math.exp(-0.154 * U)


def gb_term(lb: float) -> float:
    """GB = LB^2 - 1, clamped at zero (LB dips below 1 only through rounding or U < 0)."""
    return max(lb * lb - 1.0, 0.0)


LBTransform = Callable[[float], float]


def spread_speed(R: float, U: float, lb_transform: Optional[LBTransform] = None) -> float:
    """Firespot speed ``C(R, U) = R * (1 - LB / (LB + sqrt(GB)))``.

    ``lb_transform`` rewrites LB before GB and C are formed; the model-mismatch
    experiment uses it to perturb the ground truth only.
    """
    lb = length_to_breadth(U)
    if lb_transform is not None:
        lb = lb_transform(lb)
    root = math.sqrt(gb_term(lb))
    denom = lb + root
    if denom <= 0.0:
        return 0.0
    return R * (1.0 - lb / denom)


@dataclass
class EnvParams:
    """Spread rate R, mid-flame wind speed U and wind azimuth theta, plus random-walk stds."""

    R: float
    U: float
    theta: float
    sigma_R: float = 0.0
    sigma_U: float = 0.0
    sigma_theta: float = 0.0

    def __post_init__(self) -> None:
        if self.R < 0 or self.U < 0:
            raise ValueError(f"R and U must be non-negative, got R={self.R}, U={self.U}")
        self.theta = self.theta % TWO_PI

    def velocity(self, lb_transform: Optional[LBTransform] = None) -> np.ndarray:
        c = spread_speed(self.R, self.U, lb_transform)
        return np.array([c * math.sin(self.theta), c * math.cos(self.theta)])

    def drift(self, rng: np.random.Generator) -> "EnvParams":
        """One step of the independent Gaussian random walks (R and U reflected at 0)."""
        if self.sigma_R == 0 and self.sigma_U == 0 and self.sigma_theta == 0:
            return self
        dR, dU, dth = rng.normal(0.0, 1.0, 3)
        return replace(
            self,
            R=abs(self.R + self.sigma_R * dR),
            U=abs(self.U + self.sigma_U * dU),
            theta=self.theta + self.sigma_theta * dth,
        )


class Case(enum.IntEnum):
    STATIONARY = 1
    MOVING = 2
    MOVING_SPREADING = 3

    @classmethod
    def parse(cls, value) -> "Case":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().lower().replace("-", "_")
            aliases = {
                "stationary": cls.STATIONARY,
                "moving": cls.MOVING,
                "moving_spreading": cls.MOVING_SPREADING,
                "movingspreading": cls.MOVING_SPREADING,
            }
            if key in aliases:
                return aliases[key]
            value = int(key)
        return cls(int(value))


@dataclass(frozen=True)
class ScenarioCase:
    case: Case
    spawn_prob: float = 0.0
    spawn_max: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.spawn_prob <= 1.0:
            raise ValueError(f"spawn_prob must lie in [0, 1], got {self.spawn_prob}")
        if self.spawn_max < 0:
            raise ValueError(f"spawn_max must be >= 0, got {self.spawn_max}")
        if self.case != Case.MOVING_SPREADING and self.spawn_prob != 0.0:
            raise ValueError(f"{self.case.name} scenarios cannot spawn (spawn_prob={self.spawn_prob})")


@dataclass
class FireSpot:
    id: int
    pos: np.ndarray
    alive: bool = True
    born_at: int = 0
    area: int = 0
    cell: tuple = field(default=(-1, -1), repr=False)


class BurntRaster:
    """Boolean burn map at one-cell-per-grid-unit resolution. Cells never un-burn."""

    def __init__(self, width: float, height: float):
        self.width = float(width)
        self.height = float(height)
        self.grid = np.zeros((int(math.ceil(width)), int(math.ceil(height))), dtype=bool)

    def cell_of(self, pos: Sequence[float]) -> tuple:
        i = min(max(int(math.floor(pos[0])), 0), self.grid.shape[0] - 1)
        j = min(max(int(math.floor(pos[1])), 0), self.grid.shape[1] - 1)
        return i, j

    def is_burnt(self, cell: tuple) -> bool:
        return bool(self.grid[cell])

    def mark(self, cell: tuple) -> None:
        self.grid[cell] = True

    @property
    def burnt_count(self) -> int:
        return int(self.grid.sum())


def step_spot(q: np.ndarray, env: EnvParams, dt: float = 1.0,
              lb_transform: Optional[LBTransform] = None) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return np.asarray(q, dtype=float) + env.velocity(lb_transform) * dt


def _clamp(pos: np.ndarray, width: float, height: float, spot_id: int) -> np.ndarray:
    clamped = np.array([min(max(pos[0], 0.0), width), min(max(pos[1], 0.0), height)])
    if clamped[0] != pos[0] or clamped[1] != pos[1]:
        log.debug("spot %d left the terrain at (%.3f, %.3f); clamped", spot_id, pos[0], pos[1])
    return clamped


def step_world(spots: list[FireSpot], env, scenario: ScenarioCase, burnt: BurntRaster,
               rng: np.random.Generator, t: int = 0, next_id: Optional[int] = None,
               lb_transform: Optional[LBTransform] = None, dt: float = 1.0) -> list[FireSpot]:
    """Advance every alive spot one step and return the new spot list.

    ``env`` is either one EnvParams shared by all spots or a mapping from area id
    to EnvParams. Dead spots are carried through unchanged. Spawned children get
    fresh ids starting at ``next_id`` (default: one past the largest id seen).
    Burnt-ground pruning only runs for the moving-spreading case so that the
    other two cases keep a constant spot count.
    """
    if next_id is None:
        next_id = max((s.id for s in spots), default=-1) + 1
    width, height = burnt.width, burnt.height
    spreading = scenario.case == Case.MOVING_SPREADING
    moving = scenario.case != Case.STATIONARY

    def env_for(area: int) -> EnvParams:
        return env[area] if isinstance(env, dict) else env

    out: list[FireSpot] = []
    born: list[FireSpot] = []
    for spot in spots:
        if not spot.alive:
            out.append(spot)
            continue
        pos = spot.pos
        if moving:
            pos = _clamp(step_spot(pos, env_for(spot.area), dt, lb_transform), width, height, spot.id)
        moved = replace(spot, pos=pos)
        out.append(moved)
        if spreading and scenario.spawn_max > 0 and scenario.spawn_prob > 0:
            n_children = int(rng.binomial(scenario.spawn_max, scenario.spawn_prob))
            for _ in range(n_children):
                radius = rng.uniform(SPAWN_RADIUS_MIN, SPAWN_RADIUS_MAX)
                angle = rng.uniform(0.0, TWO_PI)
                child_pos = pos + radius * np.array([math.cos(angle), math.sin(angle)])
                child_pos = _clamp(child_pos, width, height, next_id)
                born.append(FireSpot(id=next_id, pos=child_pos, born_at=t + 1, area=spot.area))
                next_id += 1

    if spreading:
        for spot in out:
            if not spot.alive:
                continue
            cell = burnt.cell_of(spot.pos)
            if cell != spot.cell and burnt.is_burnt(cell):
                spot.alive = False
            spot.cell = cell
        for child in born:
            cell = burnt.cell_of(child.pos)
            child.cell = cell
            if burnt.is_burnt(cell):
                child.alive = False
    out.extend(born)
    if spreading:
        for spot in out:
            if spot.alive:
                burnt.mark(spot.cell)
    return out


class FireWorld:
    """Mutable ground-truth world: spots, per-area environment, burn map and rng."""

    def __init__(self, spots: list[FireSpot], env: dict, scenario: ScenarioCase,
                 width: float, height: float, rng: np.random.Generator,
                 lb_transform: Optional[LBTransform] = None):
        self.spots = spots
        self.env = dict(env)
        self.scenario = scenario
        self.burnt = BurntRaster(width, height)
        self.rng = rng
        self.lb_transform = lb_transform
        self.t = 0
        self._next_id = max((s.id for s in spots), default=-1) + 1
        for spot in spots:
            spot.cell = self.burnt.cell_of(spot.pos)

    @property
    def alive(self) -> list[FireSpot]:
        return [s for s in self.spots if s.alive]

    def set_scenario(self, scenario: ScenarioCase) -> None:
        self.scenario = scenario

    def true_velocity(self, spot: FireSpot) -> np.ndarray:
        if self.scenario.case == Case.STATIONARY:
            return np.zeros(2)
        return self.env[spot.area].velocity(self.lb_transform)

    def step(self) -> list[FireSpot]:
        """Advance one step; returns the spots born during it."""
        before = len(self.spots)
        self.spots = step_world(self.spots, self.env, self.scenario, self.burnt, self.rng,
                                t=self.t, next_id=self._next_id, lb_transform=self.lb_transform)
        born = self.spots[before:]
        self._next_id += len(born)
        self.env = {area: p.drift(self.rng) for area, p in sorted(self.env.items())}
        self.t += 1
        return born
