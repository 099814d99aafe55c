"""Guaranteed-performance planning over prioritized fire areas.

Each planning round assesses every subgraph (tour bound and uncertainty
residual ratio), splits infeasible subgraphs in two with k-means and recruits
the nearest unallocated UAV for the new half, and periodically tries to hand
a UAV back by merging the two closest subgraphs.

URR values are computed from per-spot filter snapshots taken at the most
recent measurement. A spot the assigned UAV has not sensed yet is *pending*:
its URR is not counted until the UAV has arrived.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .aekf import FilterState
from .fire_sim import Case
from .qos_bounds import (QosAssessment, classify_case, fov_width,
                         service_time_bound, spot_speed_quantile, urr)
from .tour_graph import TourGraph, build_tour_graph, kmeans_partition

log = logging.getLogger(__name__)


class InsufficientAgents(RuntimeError):
    """The UAV pool ran dry while some subgraph was still infeasible."""

    def __init__(self, needed: int):
        super().__init__(f"{needed} more UAV(s) needed")
        self.needed = needed


class UavStatus(enum.Enum):
    UNALLOCATED = "unallocated"
    ALLOCATED = "allocated"
    IN_TRANSIT = "in_transit"


@dataclass
class UavAgent:
    id: int
    pose: np.ndarray
    v_max: float
    half_angle: float
    status: UavStatus = UavStatus.UNALLOCATED
    # Subgraph id while allocated or in transit.
    target: Optional[int] = None

    def __post_init__(self) -> None:
        self.pose = np.asarray(self.pose, dtype=float)
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if self.pose.shape != (3,) or self.pose[2] <= 0:
            raise ValueError("pose must be [px, py, pz] with pz > 0")

    @property
    def ground(self) -> np.ndarray:
        return self.pose[:2].copy()

    @property
    def fov(self) -> float:
        return fov_width(self.pose[2], self.half_angle)

    def allocate(self, subgraph_id: int) -> None:
        self.status = UavStatus.IN_TRANSIT
        self.target = subgraph_id

    def release(self) -> None:
        self.status = UavStatus.UNALLOCATED
        self.target = None


@dataclass(frozen=True)
class PlannerConfig:
    alpha: float = 0.05
    mc_samples: int = 4096
    two_opt_budget: int = 50
    steiner_delta: Optional[float] = None  # default: half the FOV width
    k_max: int = 5
    eps_v: float = 1e-3
    spawn_window: int = 10
    dismissal_period: int = 20
    literal_bounds: bool = False
    urr_threshold: float = 1.0
    # Filters with fewer updates than this are still settling; their URR is not tested.
    urr_warmup: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.dismissal_period < 1:
            raise ValueError("dismissal_period must be >= 1")
        if self.urr_threshold <= 0:
            raise ValueError("urr_threshold must be positive")
        if self.urr_warmup < 0:
            raise ValueError("urr_warmup must be non-negative")

    def delta(self, fov: float) -> float:
        return self.steiner_delta if self.steiner_delta is not None else fov / 2.0


class SpeedQuantiles:
    """Per-spot speed quantiles, cached per filter snapshot.

    All spots share one seeded block of standard normals (common random
    numbers), so a value depends only on the snapshot and never on the order
    in which subgraphs are assessed.
    """

    def __init__(self, alpha: float, mc_samples: int, seed: int = 0):
        self.alpha = alpha
        self.mc_samples = mc_samples
        self.seed = seed
        self.normals = np.random.default_rng([seed, 7919]).standard_normal((mc_samples, 2))
        self._cache: dict[tuple[int, int], float] = {}

    def __call__(self, spot_id: int, fs: FilterState) -> float:
        key = (spot_id, fs.updates)
        if key not in self._cache:
            self._cache[key] = spot_speed_quantile(fs, self.alpha, normals=self.normals)
        return self._cache[key]

    def forget(self, keep: Iterable[int]) -> None:
        keep = set(keep)
        self._cache = {k: v for k, v in self._cache.items() if k[0] in keep}


@dataclass
class Assignment:
    uav_id: int
    subgraph_id: int
    graph: TourGraph
    assessment: Optional[QosAssessment] = None
    node_urr: list = field(default_factory=list)
    visited: set = field(default_factory=set)

    @property
    def cycle(self) -> list[int]:
        return self.graph.cycle

    @property
    def spot_ids(self) -> list[int]:
        return self.graph.spot_ids

    @property
    def feasible(self) -> bool:
        return self.assessment is not None and self.assessment.feasible


@dataclass
class PlanResult:
    assignments: list[Assignment]
    insufficient: int = 0
    events: list = field(default_factory=list)


def feasibility_test(assessments: Iterable[QosAssessment]) -> bool:
    """True iff every subgraph has a finite bound and every node URR is within its threshold (1 by default)."""
    return all(a.feasible for a in assessments)


def make_graph(spot_ids: Sequence[int], estimates: Mapping[int, FilterState],
               fov: float, cfg: PlannerConfig) -> TourGraph:
    ids = sorted(spot_ids)
    pts = np.array([estimates[i].position for i in ids]).reshape(-1, 2)
    return build_tour_graph(pts, ids, cfg.delta(fov), cfg.k_max, cfg.two_opt_budget)


def subgraph_bound(graph: TourGraph, snapshots: Mapping[int, FilterState], v_max: float,
                   fov: float, cfg: PlannerConfig, alive_history: Sequence[int],
                   quantiles: SpeedQuantiles) -> tuple[Case, float, float]:
    """Scenario case, confidence speed and T_UB of one subgraph.

    The stationary bound ignores the speed, so the Monte Carlo is skipped
    there and 0 is reported.
    """
    members = [snapshots[i] for i in graph.spot_ids]
    case = classify_case(members, alive_history, cfg.eps_v, cfg.spawn_window)
    if case == Case.STATIONARY:
        zeta = 0.0
    else:
        zeta = max(quantiles(i, snapshots[i]) for i in graph.spot_ids)
    t_ub = service_time_bound(case, graph.mst_weight, v_max, zeta, graph.n_nodes, fov,
                              literal=cfg.literal_bounds)
    return case, zeta, t_ub


def assess(graph: TourGraph, snapshots: Mapping[int, FilterState], uav: UavAgent,
           cfg: PlannerConfig, alive_history: Sequence[int], quantiles: SpeedQuantiles,
           pending: Iterable[int] = ()) -> tuple[QosAssessment, list]:
    """Bound plus per-node URR (max over the node's non-pending members).

    Spots whose snapshot has fewer than ``cfg.urr_warmup`` updates count as
    pending too. Node URR entries are ``None`` when every member is pending. The subgraph
    URR is the largest non-pending node value, or 0 when nothing is due yet.
    """
    case, zeta, t_ub = subgraph_bound(graph, snapshots, uav.v_max, uav.fov, cfg,
                                      alive_history, quantiles)
    pending = set(pending)
    node_urr = []
    for group in graph.members:
        due = [i for i in group if i not in pending and snapshots[i].updates >= cfg.urr_warmup]
        node_urr.append(max(urr(snapshots[i], t_ub) for i in due) if due else None)
    known = [u for u in node_urr if u is not None]
    worst = max(known) if known else 0.0
    return QosAssessment(case, zeta, t_ub, worst, graph.n_nodes, cfg.urr_threshold), node_urr


def _nearest_uav(pool: Sequence[UavAgent], point: np.ndarray) -> Optional[UavAgent]:
    free = [u for u in pool if u.status == UavStatus.UNALLOCATED]
    if not free:
        return None
    return min(free, key=lambda u: (float(np.hypot(*(u.ground - point))), u.id))


def _partition_rng(cfg: PlannerConfig, spot_ids: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 104729, len(spot_ids), *sorted(spot_ids)])


def split_and_recruit(assignment: Assignment, uav_pool: Sequence[UavAgent],
                      estimates: Mapping[int, FilterState], cfg: PlannerConfig,
                      next_subgraph_id: int, rng: Optional[np.random.Generator] = None
                      ) -> tuple[Assignment, Assignment]:
    """Split a subgraph in two with k-means and recruit a UAV for the new half.

    The current UAV keeps the half whose spot centroid is nearer to it; the
    nearest unallocated UAV (lowest id on ties) takes the other half, which
    gets ``next_subgraph_id``. Raises InsufficientAgents when nobody is free.
    """
    ids = sorted(assignment.spot_ids)
    if len(ids) < 2:
        raise ValueError("cannot split a subgraph with fewer than two spots")
    by_id = {u.id: u for u in uav_pool}
    owner = by_id[assignment.uav_id]
    pts = np.array([estimates[i].position for i in ids])
    part = kmeans_partition(pts, 2, rng if rng is not None else _partition_rng(cfg, ids))
    halves = [[i for i, lab in zip(ids, part.labels) if lab == c] for c in range(2)]
    d_owner = [float(np.hypot(*(owner.ground - part.centroids[c]))) for c in range(2)]
    keep = 0 if d_owner[0] <= d_owner[1] else 1
    recruit = _nearest_uav(uav_pool, part.centroids[1 - keep])
    if recruit is None:
        raise InsufficientAgents(1)
    recruit.allocate(next_subgraph_id)
    fov_keep, fov_new = owner.fov, recruit.fov
    kept = Assignment(owner.id, assignment.subgraph_id, make_graph(halves[keep], estimates, fov_keep, cfg),
                      visited=assignment.visited & set(halves[keep]))
    new = Assignment(recruit.id, next_subgraph_id, make_graph(halves[1 - keep], estimates, fov_new, cfg))
    return kept, new


def _centroid(a: Assignment, estimates: Mapping[int, FilterState]) -> np.ndarray:
    return np.mean([estimates[i].position for i in a.spot_ids], axis=0)


def try_dismiss(assignments: Sequence[Assignment], uav_pool: Sequence[UavAgent],
                estimates: Mapping[int, FilterState], snapshots: Mapping[int, FilterState],
                cfg: PlannerConfig, alive_history: Sequence[int], quantiles: SpeedQuantiles
                ) -> tuple[list[Assignment], Optional[int]]:
    """Merge the two subgraphs with the closest centroids if the merge stays feasible.

    Returns the new assignment list and the dismissed UAV id (or None). The
    UAV nearer to the merged centroid keeps the merged subgraph.
    """
    assignments = list(assignments)
    if len(assignments) < 2:
        return assignments, None
    by_id = {u.id: u for u in uav_pool}
    cents = [_centroid(a, estimates) for a in assignments]
    best = None
    for i in range(len(assignments)):
        for j in range(i + 1, len(assignments)):
            d = float(np.hypot(*(cents[i] - cents[j])))
            key = (d, min(assignments[i].subgraph_id, assignments[j].subgraph_id),
                   max(assignments[i].subgraph_id, assignments[j].subgraph_id))
            if best is None or key < best[0]:
                best = (key, i, j)
    _, i, j = best
    a, b = assignments[i], assignments[j]
    ids = sorted(set(a.spot_ids) | set(b.spot_ids))
    centre = np.mean([estimates[k].position for k in ids], axis=0)
    ua, ub = by_id[a.uav_id], by_id[b.uav_id]
    keeper, leaver = sorted((ua, ub), key=lambda u: (float(np.hypot(*(u.ground - centre))), u.id))
    src = a if keeper.id == a.uav_id else b
    graph = make_graph(ids, estimates, keeper.fov, cfg)
    visited = a.visited | b.visited
    qa, node_urr = assess(graph, snapshots, keeper, cfg, alive_history, quantiles,
                          pending=set(ids) - visited)
    if not qa.feasible:
        return assignments, None
    merged = Assignment(keeper.id, src.subgraph_id, graph, qa, node_urr, visited)
    leaver.release()
    out = [merged if k == i else x for k, x in enumerate(assignments) if k != j]
    return out, leaver.id


def _resolve(work: list[Assignment], uav_pool: Sequence[UavAgent], estimates, snapshots,
             cfg: PlannerConfig, alive_history, quantiles: SpeedQuantiles,
             next_id: int, events: list) -> tuple[list[Assignment], int, int]:
    """Assess and split until every subgraph passes or the pool is exhausted."""
    by_id = {u.id: u for u in uav_pool}
    done: list[Assignment] = []
    insufficient = 0
    queue = list(work)
    while queue:
        a = queue.pop(0)
        uav = by_id[a.uav_id]
        a.assessment, a.node_urr = assess(a.graph, snapshots, uav, cfg, alive_history, quantiles,
                                          pending=set(a.spot_ids) - a.visited)
        if a.feasible or len(a.spot_ids) < 2:
            done.append(a)
            continue
        try:
            kept, new = split_and_recruit(a, uav_pool, estimates, cfg, next_id)
        except InsufficientAgents:
            insufficient += 1
            done.append(a)
            continue
        events.append(("split", a.subgraph_id, next_id, new.uav_id))
        next_id += 1
        queue.extend([kept, new])
    done.sort(key=lambda x: x.subgraph_id)
    return done, insufficient, next_id


def plan_step(estimates: Mapping[int, FilterState], uavs: Sequence[UavAgent],
              config: PlannerConfig, snapshots: Optional[Mapping[int, FilterState]] = None,
              alive_history: Sequence[int] = (), pending: Iterable[int] = (),
              quantiles: Optional[SpeedQuantiles] = None) -> PlanResult:
    """One planning pass from scratch over all prioritized spots.

    All spots start in one subgraph flown by the UAV nearest to their centroid.
    ``snapshots`` default to ``estimates``; ids in ``pending`` are excluded
    from URR accounting. When the pool runs dry the result carries the number
    of subgraphs still infeasible in ``insufficient``.
    """
    if not estimates:
        raise ValueError("plan_step needs at least one estimate")
    if not uavs:
        raise ValueError("plan_step needs at least one UAV")
    snapshots = estimates if snapshots is None else snapshots
    quantiles = quantiles or SpeedQuantiles(config.alpha, config.mc_samples, config.seed)
    ids = sorted(estimates)
    centre = np.mean([estimates[i].position for i in ids], axis=0)
    first = _nearest_uav(uavs, centre)
    if first is None:
        return PlanResult([], insufficient=1)
    first.allocate(0)
    start = Assignment(first.id, 0, make_graph(ids, estimates, first.fov, config),
                       visited=set(ids) - set(pending))
    events: list = [("recruit", 0, first.id)]
    done, insufficient, _ = _resolve([start], uavs, estimates, snapshots, config,
                                     alive_history, quantiles, 1, events)
    return PlanResult(done, insufficient, events)


@dataclass
class RoundRecord:
    t: int
    assignments: list[Assignment]
    insufficient: int
    events: list


class Coordinator:
    """Stateful planner across rounds.

    Tours are rebuilt only when a subgraph's membership changes or it fails
    the feasibility test; dismissal is attempted every ``dismissal_period``
    rounds.
    """

    def __init__(self, config: PlannerConfig):
        self.cfg = config
        self.assignments: list[Assignment] = []
        self.alive_history: list[int] = []
        self.quantiles = SpeedQuantiles(config.alpha, config.mc_samples, config.seed)
        self._next_id = 0

    def record_visit(self, uav_id: int, spot_ids: Iterable[int]) -> None:
        for a in self.assignments:
            if a.uav_id == uav_id:
                a.visited.update(i for i in spot_ids if i in set(a.spot_ids))

    def assignment_of(self, uav_id: int) -> Optional[Assignment]:
        for a in self.assignments:
            if a.uav_id == uav_id:
                return a
        return None

    def _sync_membership(self, spot_ids: set, uavs, estimates, events) -> None:
        by_id = {u.id: u for u in uavs}
        live = []
        for a in self.assignments:
            keep = [i for i in a.spot_ids if i in spot_ids]
            if not keep:
                by_id[a.uav_id].release()
                events.append(("release", a.subgraph_id, a.uav_id))
                continue
            if len(keep) != len(a.spot_ids):
                a.graph = make_graph(keep, estimates, by_id[a.uav_id].fov, self.cfg)
                a.visited &= set(keep)
            live.append(a)
        self.assignments = live
        covered = {i for a in self.assignments for i in a.spot_ids}
        new = sorted(spot_ids - covered)
        if not new:
            return
        if not self.assignments:
            centre = np.mean([estimates[i].position for i in new], axis=0)
            uav = _nearest_uav(uavs, centre)
            if uav is None:
                return
            uav.allocate(self._next_id)
            self.assignments.append(Assignment(uav.id, self._next_id,
                                               make_graph(new, estimates, uav.fov, self.cfg)))
            events.append(("recruit", self._next_id, uav.id))
            self._next_id += 1
            return
        cents = [_centroid(a, estimates) for a in self.assignments]
        grow: dict[int, list[int]] = {}
        for i in new:
            p = estimates[i].position
            k = min(range(len(cents)), key=lambda c: (float(np.hypot(*(cents[c] - p))), c))
            grow.setdefault(k, []).append(i)
        for k, extra in grow.items():
            a = self.assignments[k]
            a.graph = make_graph(a.spot_ids + extra, estimates, by_id[a.uav_id].fov, self.cfg)

    def round(self, t: int, spot_ids: Iterable[int], estimates: Mapping[int, FilterState],
              snapshots: Mapping[int, FilterState], uavs: Sequence[UavAgent],
              alive_count: Optional[int] = None) -> RoundRecord:
        """Run one planning round at time ``t`` over the given prioritized spots."""
        spot_ids = set(spot_ids)
        self.alive_history.append(len(spot_ids) if alive_count is None else alive_count)
        events: list = []
        self._sync_membership(spot_ids, uavs, estimates, events)
        if not self.assignments:
            return RoundRecord(t, [], 1 if spot_ids else 0, events)
        self.assignments, insufficient, self._next_id = _resolve(
            self.assignments, uavs, estimates, snapshots, self.cfg, self.alive_history,
            self.quantiles, self._next_id, events)
        if t > 0 and t % self.cfg.dismissal_period == 0 and not insufficient:
            self.assignments, gone = try_dismiss(self.assignments, uavs, estimates, snapshots,
                                                 self.cfg, self.alive_history, self.quantiles)
            if gone is not None:
                events.append(("dismiss", gone))
        if t % 50 == 0:
            self.quantiles.forget(spot_ids)
        return RoundRecord(t, list(self.assignments), insufficient, events)
