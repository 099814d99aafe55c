"""Scenario configuration: strict JSON documents mapped onto nested dataclasses.

Unknown keys and out-of-range values are collected into a single
:class:`ConfigError` that lists every offending field.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .fire_sim import Case


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass
class Terrain:
    width: float = 500.0
    height: float = 500.0


@dataclass
class Area:
    center: list = field(default_factory=lambda: [250.0, 250.0])
    n_spots: list = field(default_factory=lambda: [20, 30])
    radius: float = 15.0
    arc: float = 2.0  # angular extent of the front, radians
    jitter: float = 1.0
    prioritized: bool = True


@dataclass
class Mismatch:
    x1_mean: float = 10.0
    x1_std: float = 3.0
    x2_mean: float = 0.0
    x2_std: float = 3.0


@dataclass
class Phase:
    t: int = 0
    case: str = "stationary"


@dataclass
class Fire:
    case: str = "stationary"
    speed: Optional[float] = None  # when set, R0 is derived so that C(R0, U0) = speed
    R0: float = 0.0
    U0: float = 5.0
    theta0: float = 0.0
    sigma_R: float = 0.0
    sigma_U: float = 0.0
    sigma_theta: float = 0.0
    spawn_prob: float = 0.0
    spawn_max: int = 0
    schedule: list = field(default_factory=list)  # list of Phase
    mismatch: Optional[Mismatch] = None


@dataclass
class Uavs:
    count: int = 5
    v_max: float = 500.0
    altitude: float = 20.0
    half_angle: float = math.pi / 4
    meas_noise: list = field(default_factory=lambda: [0.01, 0.01, 0.02, 0.2, 0.02])
    base: list = field(default_factory=lambda: [0.0, 0.0])


@dataclass
class Planner:
    alpha: float = 0.05
    mc_samples: int = 4096
    gamma_step: float = 0.95
    two_opt_budget: int = 50
    steiner_delta: Optional[float] = None
    k_max: int = 5
    eps_v: float = 1e-3
    spawn_window: int = 10
    dismissal_period: int = 20
    literal_bounds: bool = False
    urr_threshold: float = 1.0
    P0: float = 1.0
    Lam0: float = 1e-3
    Gam0: float = 1e-2
    prior_pos_std: float = 0.5
    prior_param_std: list = field(default_factory=lambda: [0.05, 0.5, 0.05])


@dataclass
class Sim:
    steps: int = 100
    seed: Optional[int] = None
    burn_in: int = 10


@dataclass
class ScenarioConfig:
    terrain: Terrain = field(default_factory=Terrain)
    areas: list = field(default_factory=lambda: [Area()])
    fire: Fire = field(default_factory=Fire)
    uavs: Uavs = field(default_factory=Uavs)
    planner: Planner = field(default_factory=Planner)
    sim: Sim = field(default_factory=Sim)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, overrides: dict) -> "ScenarioConfig":
        return from_dict(deep_merge(self.to_dict(), overrides))


_NESTED = {"terrain": Terrain, "fire": Fire, "uavs": Uavs, "planner": Planner, "sim": Sim}
_LISTS = {("areas",): Area, ("fire", "schedule"): Phase}
_OPTIONAL = {("fire", "mismatch"): Mismatch}


def deep_merge(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build(cls, data: Any, path: tuple, problems: list[str]):
    where = ".".join(path) or "<root>"
    if not isinstance(data, dict):
        problems.append(f"{where}: expected an object")
        return cls()
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in sorted(set(data) - set(names)):
        problems.append(f"{where}.{key}: unknown key" if path else f"{key}: unknown key")
    kwargs = {}
    for name, value in data.items():
        if name not in names:
            continue
        sub = path + (name,)
        if name in _NESTED and cls is ScenarioConfig:
            kwargs[name] = _build(_NESTED[name], value, sub, problems)
        elif sub in _LISTS:
            if not isinstance(value, list):
                problems.append(f"{'.'.join(sub)}: expected a list")
                continue
            kwargs[name] = [_build(_LISTS[sub], v, sub + (str(i),), problems) for i, v in enumerate(value)]
        elif sub in _OPTIONAL:
            kwargs[name] = None if value is None else _build(_OPTIONAL[sub], value, sub, problems)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _positive(problems, name, value, strict=True):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if not ok or (value <= 0 if strict else value < 0):
        problems.append(f"{name}: must be {'> 0' if strict else '>= 0'}, got {value!r}")


def validate(cfg: ScenarioConfig, problems: list[str]) -> None:
    _positive(problems, "terrain.width", cfg.terrain.width)
    _positive(problems, "terrain.height", cfg.terrain.height)
    if not cfg.areas:
        problems.append("areas: at least one area is required")
    for i, a in enumerate(cfg.areas):
        p = f"areas.{i}"
        if not (isinstance(a.center, list) and len(a.center) == 2):
            problems.append(f"{p}.center: expected [x, y]")
        if not (isinstance(a.n_spots, list) and len(a.n_spots) == 2 and all(isinstance(n, int) for n in a.n_spots)
                and 1 <= a.n_spots[0] <= a.n_spots[1]):
            problems.append(f"{p}.n_spots: expected [lo, hi] integers with 1 <= lo <= hi")
        _positive(problems, f"{p}.radius", a.radius)
        _positive(problems, f"{p}.arc", a.arc)
        _positive(problems, f"{p}.jitter", a.jitter, strict=False)
    f = cfg.fire
    for name in ("case",):
        try:
            Case.parse(getattr(f, name))
        except (ValueError, KeyError):
            problems.append(f"fire.{name}: unknown case {getattr(f, name)!r}")
    for i, ph in enumerate(f.schedule):
        try:
            Case.parse(ph.case)
        except (ValueError, KeyError):
            problems.append(f"fire.schedule.{i}.case: unknown case {ph.case!r}")
        _positive(problems, f"fire.schedule.{i}.t", ph.t, strict=False)
    if f.speed is not None:
        _positive(problems, "fire.speed", f.speed, strict=False)
    for name in ("R0", "U0", "sigma_R", "sigma_U", "sigma_theta"):
        _positive(problems, f"fire.{name}", getattr(f, name), strict=False)
    if f.speed and f.U0 <= 0:
        problems.append("fire.U0: must be > 0 when fire.speed is set")
    if not 0.0 <= f.spawn_prob <= 1.0:
        problems.append(f"fire.spawn_prob: must lie in [0, 1], got {f.spawn_prob!r}")
    _positive(problems, "fire.spawn_max", f.spawn_max, strict=False)
    u = cfg.uavs
    if not isinstance(u.count, int) or u.count < 0:
        problems.append(f"uavs.count: must be a non-negative integer, got {u.count!r}")
    for name in ("v_max", "altitude", "half_angle"):
        _positive(problems, f"uavs.{name}", getattr(u, name))
    if isinstance(u.half_angle, (int, float)) and u.half_angle >= math.pi / 2:
        problems.append("uavs.half_angle: must be < pi/2")
    if not (isinstance(u.meas_noise, list) and len(u.meas_noise) == 5):
        problems.append("uavs.meas_noise: expected 5 standard deviations")
    pl = cfg.planner
    if not 0.0 < pl.alpha < 1.0:
        problems.append(f"planner.alpha: must lie in (0, 1), got {pl.alpha!r}")
    if not 0.0 < pl.gamma_step <= 1.0:
        problems.append(f"planner.gamma_step: must lie in (0, 1], got {pl.gamma_step!r}")
    for name in ("mc_samples", "dismissal_period", "spawn_window", "urr_threshold", "eps_v", "P0", "Lam0", "Gam0"):
        _positive(problems, f"planner.{name}", getattr(pl, name))
    if not isinstance(pl.k_max, int) or pl.k_max < 2:
        problems.append("planner.k_max: must be an integer >= 2")
    _positive(problems, "planner.two_opt_budget", pl.two_opt_budget, strict=False)
    if pl.steiner_delta is not None:
        _positive(problems, "planner.steiner_delta", pl.steiner_delta)
    if not (isinstance(pl.prior_param_std, list) and len(pl.prior_param_std) == 3):
        problems.append("planner.prior_param_std: expected 3 standard deviations")
    s = cfg.sim
    if not isinstance(s.steps, int) or s.steps < 0:
        problems.append(f"sim.steps: must be a non-negative integer, got {s.steps!r}")
    if not isinstance(s.seed, int) or isinstance(s.seed, bool):
        problems.append("sim.seed: an integer seed is required")
    if not isinstance(s.burn_in, int) or s.burn_in < 0:
        problems.append("sim.burn_in: must be a non-negative integer")


def from_dict(data: dict) -> ScenarioConfig:
    problems: list[str] = []
    cfg = _build(ScenarioConfig, data, (), problems)
    if not problems:
        try:
            validate(cfg, problems)
        except TypeError as exc:  # wrong value types in numeric comparisons
            problems.append(f"type error: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    return from_dict(data)


def default_config(seed: int = 0, **overrides) -> ScenarioConfig:
    return from_dict(deep_merge({"sim": {"seed": seed}}, overrides))
