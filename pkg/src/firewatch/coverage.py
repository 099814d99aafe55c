"""Coverage of non-prioritized fire areas by the UAVs the planner is not using.

Spots are clustered into one partition per free UAV, partitions are matched
to UAVs greedily by centroid distance, and each UAV loops a tour over its own
partition. The plan is rebuilt once it is older than the shortest partition
bound (or, when every bound is infinite, the shortest static loop time), or as
soon as the set of free UAVs or of spots changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .aekf import FilterState, residual_covariance
from .coordinator import PlannerConfig, SpeedQuantiles, UavAgent, make_graph, subgraph_bound
from .tour_graph import TourGraph, kmeans_partition


@dataclass
class CoveragePlan:
    epoch: int = 0
    uav_ids: tuple = ()
    spot_ids: frozenset = frozenset()
    partitions: dict = field(default_factory=dict)  # uav id -> spot ids
    tours: dict = field(default_factory=dict)  # uav id -> TourGraph
    t_ub: dict = field(default_factory=dict)  # uav id -> bound
    loop_time: dict = field(default_factory=dict)  # uav id -> static tour time, used when no bound is finite

    @property
    def empty(self) -> bool:
        return not self.partitions

    @property
    def min_t_ub(self) -> float:
        return min(self.t_ub.values(), default=math.inf)

    def tour_for(self, uav_id: int) -> Optional[TourGraph]:
        return self.tours.get(uav_id)

    @property
    def horizon(self) -> float:
        """Steps the plan stays valid: the shortest bound, else the shortest loop time."""
        if math.isfinite(self.min_t_ub):
            return self.min_t_ub
        return min(self.loop_time.values(), default=1.0)

    def is_stale(self, t: int) -> bool:
        # Round the horizon up to whole steps so a sub-step bound means "every step".
        return t - self.epoch >= max(1, math.ceil(self.horizon - 1e-9))


def greedy_match(uav_points: Mapping[int, np.ndarray], centroids: np.ndarray) -> dict[int, int]:
    """Nearest-centroid matching: repeatedly take the closest (UAV, partition) pair.

    Ties go to the lower UAV id, then the lower partition index.
    """
    pairs = sorted((float(np.hypot(*(p - centroids[c]))), uid, c)
                   for uid, p in uav_points.items() for c in range(len(centroids)))
    out: dict[int, int] = {}
    used: set[int] = set()
    for _, uid, c in pairs:
        if uid in out or c in used:
            continue
        out[uid] = c
        used.add(c)
    return out


def coverage_step(estimates: Mapping[int, FilterState], uavs: Sequence[UavAgent], t: int,
                  plan: Optional[CoveragePlan], cfg: PlannerConfig,
                  alive_history: Sequence[int] = (), quantiles: Optional[SpeedQuantiles] = None,
                  snapshots: Optional[Mapping[int, FilterState]] = None) -> CoveragePlan:
    """Return the coverage plan for time ``t``, rebuilding it only when a trigger fires.

    ``estimates`` holds the unassigned spots; ``uavs`` the free UAVs.
    """
    uav_ids = tuple(sorted(u.id for u in uavs))
    spot_ids = frozenset(estimates)
    if not uav_ids or not spot_ids:
        return CoveragePlan(epoch=t, uav_ids=uav_ids, spot_ids=spot_ids)
    if (plan is not None and not plan.empty and plan.uav_ids == uav_ids
            and plan.spot_ids == spot_ids and not plan.is_stale(t)):
        return plan
    snapshots = estimates if snapshots is None else snapshots
    quantiles = quantiles or SpeedQuantiles(cfg.alpha, cfg.mc_samples, cfg.seed)
    ids = sorted(spot_ids)
    pts = np.array([estimates[i].position for i in ids])
    k = min(len(uav_ids), len(ids))
    rng = np.random.default_rng([cfg.seed, 15485863, t, len(ids)])
    part = kmeans_partition(pts, k, rng)
    by_id = {u.id: u for u in uavs}
    match = greedy_match({u: by_id[u].ground for u in uav_ids}, part.centroids)
    new = CoveragePlan(epoch=t, uav_ids=uav_ids, spot_ids=spot_ids)
    for uid, c in sorted(match.items()):
        members = [i for i, lab in zip(ids, part.labels) if lab == c]
        uav = by_id[uid]
        graph = make_graph(members, estimates, uav.fov, cfg)
        _, _, t_ub = subgraph_bound(graph, snapshots, uav.v_max, uav.fov, cfg, alive_history, quantiles)
        new.partitions[uid] = members
        new.tours[uid] = graph
        new.t_ub[uid] = t_ub
        new.loop_time[uid] = graph.length / uav.v_max
    return new


def in_any_fov(points: np.ndarray, uavs: Sequence[UavAgent]) -> np.ndarray:
    """Mask of points inside at least one UAV's FOV (inscribed disk of radius w/2)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    mask = np.zeros(len(points), dtype=bool)
    for u in uavs:
        mask |= np.hypot(*(points - u.ground).T) <= u.fov / 2.0
    return mask


def coverage_residual(truth: Mapping[int, np.ndarray], uavs: Sequence[UavAgent],
                      filters: Mapping[int, FilterState]) -> float:
    """Sum of Tr(S) over alive spots (``truth``: id -> position) that no UAV sees this step."""
    ids = sorted(truth)
    if not ids:
        return 0.0
    seen = in_any_fov(np.array([truth[i] for i in ids]), uavs)
    total = 0.0
    for i, covered in zip(ids, seen):
        if not covered:
            fs = filters[i]
            total += float(np.trace(residual_covariance(fs.x, fs.P, fs.Gam)))
    return total
