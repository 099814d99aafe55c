"""Deterministic simulation driver.

One step of :func:`run_scenario`:

1. the ground truth advances (move, spawn, prune) and the environment drifts;
2. filters are created for newborn spots, dropped for dead ones and every
   tracked filter runs a prediction;
3. the coordinator plans over prioritized spots, coverage over the rest;
4. UAVs fly their tours at no more than ``v_max`` per step, sensing at every
   waypoint they reach and at their end pose;
5. one metrics row is appended.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import aekf
from .config import ScenarioConfig
from .coordinator import Coordinator, PlannerConfig, UavAgent, UavStatus
from .coverage import CoveragePlan, coverage_residual, coverage_step
from .fire_sim import (Case, EnvParams, FireSpot, FireWorld, ScenarioCase,
                       spread_speed)

log = logging.getLogger(__name__)

ARRIVAL_RADIUS = 0.5

COLUMNS = (
    "t", "alive", "allocated", "unallocated", "subgraphs", "insufficient",
    "mean_t_ub", "max_t_ub", "max_urr", "coverage_residual", "cumulative_residual",
    "uncertainty", "cumulative_uncertainty", "max_displacement",
)


def rng_stream(seed: int, trial: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, trial, stream name)."""
    return np.random.default_rng(np.random.SeedSequence([seed, trial, zlib.crc32(name.encode())]))


@dataclass
class MetricsRecord:
    columns: tuple = COLUMNS
    rows: list = field(default_factory=list)
    insufficient_rounds: int = 0
    events: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def append(self, row: dict) -> None:
        if self.rows and row["t"] <= self.rows[-1][0]:
            raise ValueError("metrics rows must be strictly time-ordered")
        self.rows.append(tuple(row[c] for c in self.columns))


def fire_shape(U: float) -> float:
    """C / R at wind speed U."""
    return spread_speed(1.0, U)


def base_env(cfg: ScenarioConfig) -> EnvParams:
    f = cfg.fire
    R = f.R0
    if f.speed is not None:
        R = f.speed / fire_shape(f.U0) if f.speed > 0 else 0.0
    return EnvParams(R, f.U0, f.theta0, f.sigma_R, f.sigma_U, f.sigma_theta)


def scenario_for(cfg: ScenarioConfig, case) -> ScenarioCase:
    case = Case.parse(case)
    if case == Case.MOVING_SPREADING:
        return ScenarioCase(case, cfg.fire.spawn_prob, cfg.fire.spawn_max)
    return ScenarioCase(case)


def place_spots(cfg: ScenarioConfig, rng: np.random.Generator) -> list[FireSpot]:
    """Spots along a jittered arc of the front in each area."""
    spots: list[FireSpot] = []
    w, h = cfg.terrain.width, cfg.terrain.height
    for k, area in enumerate(cfg.areas):
        n = int(rng.integers(area.n_spots[0], area.n_spots[1] + 1))
        start = rng.uniform(0.0, 2.0 * math.pi)
        angles = np.sort(start + rng.uniform(0.0, area.arc, n))
        radii = area.radius + rng.normal(0.0, area.jitter, n)
        cx, cy = area.center
        for a, r in zip(angles, radii):
            pos = np.array([min(max(cx + r * math.cos(a), 0.0), w), min(max(cy + r * math.sin(a), 0.0), h)])
            spots.append(FireSpot(id=len(spots), pos=pos, area=k))
    return spots


def mismatch_transform(cfg: ScenarioConfig, rng: np.random.Generator):
    m = cfg.fire.mismatch
    if m is None:
        return None
    x1 = float(rng.normal(m.x1_mean, m.x1_std))
    x2 = float(rng.normal(m.x2_mean, m.x2_std))
    return lambda lb: x1 * lb + x2


@dataclass
class _Truth:
    ids: list
    pts: np.ndarray
    area: list


class Simulation:
    """State of one scenario run; :meth:`step` advances it by one time step."""

    def __init__(self, cfg: ScenarioConfig, trial: int = 0):
        self.cfg = cfg
        seed = cfg.sim.seed
        self.rng_world = rng_stream(seed, trial, "world")
        self.rng_sense = rng_stream(seed, trial, "sense")
        self.rng_prior = rng_stream(seed, trial, "prior")
        layout = rng_stream(seed, trial, "layout")
        spots = place_spots(cfg, layout)
        env0 = base_env(cfg)
        env = {k: EnvParams(env0.R, env0.U, env0.theta, env0.sigma_R, env0.sigma_U, env0.sigma_theta)
               for k in range(len(cfg.areas))}
        self.case = Case.parse(cfg.fire.case)
        self.world = FireWorld(spots, env, scenario_for(cfg, self.case), cfg.terrain.width,
                               cfg.terrain.height, self.rng_world,
                               lb_transform=mismatch_transform(cfg, rng_stream(seed, trial, "mismatch")))
        self.prioritized_areas = {k for k, a in enumerate(cfg.areas) if a.prioritized}
        u = cfg.uavs
        base = np.array([u.base[0], u.base[1], u.altitude], dtype=float)
        self.uavs = [UavAgent(i, base.copy(), u.v_max, u.half_angle) for i in range(u.count)]
        self.gam_true = np.diag(np.square(np.asarray(u.meas_noise, dtype=float)))
        pl = cfg.planner
        self.pcfg = PlannerConfig(alpha=pl.alpha, mc_samples=pl.mc_samples, two_opt_budget=pl.two_opt_budget,
                                  steiner_delta=pl.steiner_delta, k_max=pl.k_max, eps_v=pl.eps_v,
                                  spawn_window=pl.spawn_window, dismissal_period=pl.dismissal_period,
                                  literal_bounds=pl.literal_bounds, urr_threshold=pl.urr_threshold,
                                  urr_warmup=cfg.sim.burn_in, seed=seed * 1009 + trial)
        self.coordinator = Coordinator(self.pcfg)
        self.cover_plan: Optional[CoveragePlan] = None
        self.cover_history: list[int] = []
        self.filters: dict[int, aekf.FilterState] = {}
        self.snapshots: dict[int, aekf.FilterState] = {}
        self.cursor: dict[int, tuple] = {}  # uav id -> (tour identity, next node index)
        self.record = MetricsRecord(info={"trial": trial, "seed": seed})
        self.cum_residual = 0.0
        self.cum_uncertainty = 0.0
        self.t = 0
        self._schedule = sorted(((ph.t, Case.parse(ph.case)) for ph in cfg.fire.schedule), key=lambda x: x[0])
        for spot in self.world.alive:
            self._new_filter(spot)

    # ------------------------------------------------------------------ filters
    def _new_filter(self, spot: FireSpot) -> None:
        pl = self.cfg.planner
        rng = self.rng_prior
        env = self.world.env[spot.area]
        q = spot.pos + rng.normal(0.0, pl.prior_pos_std, 2)
        sR, sU, sT = pl.prior_param_std
        R = abs(env.R + rng.normal(0.0, sR))
        U = abs(env.U + rng.normal(0.0, sU))
        th = env.theta + rng.normal(0.0, sT)
        base = self.uavs[0].pose if self.uavs else np.array([0.0, 0.0, self.cfg.uavs.altitude])
        fs = aekf.new_filter(q, base, R, U, th, P0=pl.P0, Lam0=pl.Lam0, Gam0=pl.Gam0, gamma_step=pl.gamma_step)
        self.filters[spot.id] = fs
        self.snapshots[spot.id] = fs.copy()

    def _sync_filters(self, born: list[FireSpot]) -> None:
        alive = {s.id for s in self.world.alive}
        for spot in born:
            if spot.alive:
                self._new_filter(spot)
        for sid in [i for i in self.filters if i not in alive]:
            del self.filters[sid]
            self.snapshots.pop(sid, None)

    # ------------------------------------------------------------------ sensing
    def _sense(self, uav: UavAgent, pose: np.ndarray, sensed: set, truth: "_Truth") -> list[int]:
        hit = np.flatnonzero(np.hypot(*(truth.pts - pose[:2]).T) <= uav.fov / 2.0)
        seen = []
        for k in hit:
            i = truth.ids[k]
            if i in sensed:
                continue
            spot_env = self.world.env[truth.area[k]]
            z = aekf.measure(pose, truth.pts[k], (spot_env.R, spot_env.U, spot_env.theta),
                             self.gam_true, self.rng_sense)
            try:
                fs = aekf.update(self.filters[i], z, pose)
            except aekf.FilterDivergence:
                log.warning("filter for spot %d diverged at t=%d; skipping update", i, self.t)
                continue
            self.filters[i] = fs
            self.snapshots[i] = fs.copy()
            sensed.add(i)
            seen.append(i)
        return seen

    # ------------------------------------------------------------------ motion
    def _waypoints(self, uav: UavAgent) -> tuple[Optional[tuple], Optional[np.ndarray]]:
        a = self.coordinator.assignment_of(uav.id)
        graph = None
        if a is not None:
            graph = a.graph
        elif self.cover_plan is not None:
            graph = self.cover_plan.tour_for(uav.id)
        if graph is None or graph.n_nodes == 0:
            return None, None
        groups = [graph.members[n] for n in graph.cycle]
        pts = np.array([np.mean([self.filters[i].position for i in g], axis=0) for g in groups])
        return (id(graph), tuple(graph.cycle)), pts

    def _fly(self, uav: UavAgent, sensed: set, truth: _Truth) -> float:
        key, pts = self._waypoints(uav)
        start = uav.pose.copy()
        seen: list[int] = []
        if pts is not None:
            prev = self.cursor.get(uav.id)
            if prev is None or prev[0] != key:
                nxt = int(np.argmin(np.hypot(*(pts - uav.ground).T)))
            else:
                nxt = prev[1] % len(pts)
            budget = uav.v_max
            reached = 0
            while reached < len(pts):
                target = pts[nxt]
                d = float(np.hypot(*(target - uav.ground)))
                if d > ARRIVAL_RADIUS:
                    if d > budget:
                        uav.pose[:2] += (target - uav.ground) * (budget / d)
                        budget = 0.0
                        break
                    uav.pose[:2] = target
                    budget -= d
                reached += 1
                if uav.status == UavStatus.IN_TRANSIT:
                    uav.status = UavStatus.ALLOCATED
                seen += self._sense(uav, uav.pose, sensed, truth)
                nxt = (nxt + 1) % len(pts)
                if budget <= 0.0:
                    break
            self.cursor[uav.id] = (key, nxt)
        seen += self._sense(uav, uav.pose, sensed, truth)
        if seen:
            self.coordinator.record_visit(uav.id, seen)
        return float(np.hypot(*(uav.pose[:2] - start[:2])))

    # ------------------------------------------------------------------ loop
    def _apply_schedule(self) -> None:
        for t, case in self._schedule:
            if t == self.t and case != self.case:
                self.case = case
                self.world.set_scenario(scenario_for(self.cfg, case))

    def step(self) -> dict:
        self._apply_schedule()
        born = self.world.step()
        self._sync_filters(born)
        for i in sorted(self.filters):
            self.filters[i] = aekf.predict(self.filters[i], 1.0)
        alive = self.world.alive
        truth = _Truth([s.id for s in alive], np.array([s.pos for s in alive]).reshape(-1, 2),
                       [s.area for s in alive])
        prio = [s.id for s in alive if s.area in self.prioritized_areas]
        rest = [s.id for s in alive if s.area not in self.prioritized_areas]

        rec = self.coordinator.round(self.t, prio, self.filters, self.snapshots, self.uavs,
                                     alive_count=len(alive))
        if rec.insufficient:
            self.record.insufficient_rounds += 1
        self.record.events += [(self.t,) + tuple(e) for e in rec.events]
        free = [u for u in self.uavs if u.status == UavStatus.UNALLOCATED]
        self.cover_history.append(len(rest))
        self.cover_plan = coverage_step({i: self.filters[i] for i in rest}, free, self.t, self.cover_plan,
                                        self.pcfg, self.cover_history, self.coordinator.quantiles,
                                        snapshots=self.snapshots)

        sensed: set = set()
        moves = [self._fly(u, sensed, truth) for u in self.uavs]

        residual = coverage_residual(dict(zip(truth.ids, truth.pts)), self.uavs, self.filters)
        uncertainty = sum(float(np.trace(aekf.residual_covariance(f.x, f.P, f.Gam))) for f in self.filters.values())
        self.cum_residual += residual
        self.cum_uncertainty += uncertainty
        t_ubs = [a.assessment.t_ub for a in rec.assignments if a.assessment is not None]
        finite = [x for x in t_ubs if math.isfinite(x)]
        urrs = [a.assessment.urr for a in rec.assignments if a.assessment is not None]
        allocated = sum(u.status != UavStatus.UNALLOCATED for u in self.uavs)
        row = {
            "t": self.t,
            "alive": len(alive),
            "allocated": allocated,
            "unallocated": len(self.uavs) - allocated,
            "subgraphs": len(rec.assignments),
            "insufficient": rec.insufficient,
            "mean_t_ub": float(np.mean(finite)) if finite else (math.inf if t_ubs else 0.0),
            "max_t_ub": max(t_ubs) if t_ubs else 0.0,
            "max_urr": max(urrs) if urrs else 0.0,
            "coverage_residual": residual,
            "cumulative_residual": self.cum_residual,
            "uncertainty": uncertainty,
            "cumulative_uncertainty": self.cum_uncertainty,
            "max_displacement": max(moves) if moves else 0.0,
        }
        self.record.append(row)
        self.t += 1
        return row


def run_scenario(cfg: ScenarioConfig, trial: int = 0) -> MetricsRecord:
    """Run ``cfg.sim.steps`` steps and return the per-step metrics."""
    sim = Simulation(cfg, trial)
    for _ in range(cfg.sim.steps):
        sim.step()
    return sim.record
