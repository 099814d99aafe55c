"""Tour construction over estimated firespot positions.

Pipeline: close-enough node merging -> Prim MST -> double-tree Hamiltonian
cycle -> 2-opt improvement. All distances are straight-line Euclidean, so the
graph is the complete metric graph over the nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

KMEANS_MAX_ITER = 100


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 2)
    return pts


def distance_matrix(points) -> np.ndarray:
    pts = _as_points(points)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def build_mst(points) -> list[tuple[int, int, float]]:
    """Prim's algorithm on the complete Euclidean graph.

    Returns edges ``(u, v, w)`` with ``u < v`` in insertion order. Equal-weight
    candidates are resolved by the lowest ``(min id, max id)`` pair, so the tree
    is fully deterministic.
    """
    pts = _as_points(points)
    n = len(pts)
    if n <= 1:
        return []
    dist = distance_matrix(pts)
    idx = np.arange(n)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = dist[0].copy()
    parent = np.zeros(n, dtype=int)
    edges = []
    for _ in range(n - 1):
        out = idx[~in_tree]
        lo = np.minimum(parent[out], out)
        hi = np.maximum(parent[out], out)
        v = int(out[np.lexsort((hi, lo, best[out]))[0]])
        u = int(parent[v])
        edges.append((min(u, v), max(u, v), float(dist[u, v])))
        in_tree[v] = True
        cand_lo = np.minimum(v, idx)
        cur_lo = np.minimum(parent, idx)
        tie_better = (dist[v] == best) & ((cand_lo < cur_lo) | ((cand_lo == cur_lo) & (np.maximum(v, idx) < np.maximum(parent, idx))))
        closer = ~in_tree & ((dist[v] < best) | tie_better)
        best[closer] = dist[v][closer]
        parent[closer] = v
    return edges


def mst_weight(edges) -> float:
    return float(sum(w for _, _, w in edges))


def hamiltonian_from_mst(edges, n: Optional[int] = None, root: int = 0) -> list[int]:
    """Double-tree cycle: preorder walk of the tree (children in id order) with shortcuts."""
    if n is None:
        n = 1 + max((max(u, v) for u, v, _ in edges), default=0)
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for u, v, _ in edges:
        adj[u].append(v)
        adj[v].append(u)
    order, seen, stack = [], set(), [root]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        order.append(node)
        stack.extend(sorted((c for c in adj[node] if c not in seen), reverse=True))
    return order


def path_length(cycle: Sequence[int], points) -> float:
    """Closed-cycle Euclidean length."""
    if len(cycle) < 2:
        return 0.0
    pts = _as_points(points)[list(cycle)]
    seg = pts - np.roll(pts, -1, axis=0)
    return float(np.sqrt((seg ** 2).sum(axis=1)).sum())


def two_opt(cycle: Sequence[int], points, budget: int = 50) -> list[int]:
    """First-improvement 2-opt.

    One pass scans edge pairs ``(i, j)`` lexicographically and applies every
    improving reversal as soon as it is found. Stops after a pass with no
    improvement (a local optimum) or after ``budget`` passes.
    """
    tour = list(cycle)
    n = len(tour)
    if n < 4 or budget <= 0:
        return tour
    dist = distance_matrix(points)
    for _ in range(budget):
        improved = False
        for i in range(n - 1):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                a, b = tour[i], tour[i + 1]
                c, d = tour[j], tour[(j + 1) % n]
                if dist[a, c] + dist[b, d] < dist[a, b] + dist[c, d] - 1e-12:
                    tour[i + 1:j + 1] = tour[i + 1:j + 1][::-1]
                    improved = True
        if not improved:
            break
    return tour


@dataclass
class MergedNode:
    pos: np.ndarray
    members: list[int]


def _group_ok(pts: np.ndarray, radius: float) -> bool:
    if len(pts) < 2:
        return True
    d = distance_matrix(pts)
    if d.max() > 2.0 * radius + 1e-12:
        return False
    centroid = pts.mean(axis=0)
    return bool(np.all(np.hypot(*(pts - centroid).T) <= radius + 1e-12))


def steiner_merge(points, radius: float, k_max: int = 5,
                  ids: Optional[Sequence[int]] = None) -> list[MergedNode]:
    """Greedy close-enough grouping of points whose ``radius``-disks overlap.

    Seeds are taken in input order; each seed absorbs its nearest unassigned
    neighbours (distance, then index) while every pair of disks in the group
    still overlaps and the group centroid stays within ``radius`` of every
    member, so a UAV over the centroid sees the whole group. At most ``k_max``
    points per group. Whole groups are then coalesced while the same test holds.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    pts = _as_points(points)
    ids = list(range(len(pts))) if ids is None else list(ids)
    dist = distance_matrix(pts) if len(pts) else np.zeros((0, 0))
    taken = np.zeros(len(pts), dtype=bool)
    groups: list[list[int]] = []
    for seed in range(len(pts)):
        if taken[seed]:
            continue
        group = [seed]
        taken[seed] = True
        order = sorted((float(dist[seed, j]), j) for j in range(len(pts))
                       if not taken[j] and dist[seed, j] <= 2.0 * radius)
        for _, j in order:
            if len(group) >= k_max:
                break
            if _group_ok(pts[group + [j]], radius):
                group.append(j)
                taken[j] = True
        groups.append(group)
    groups = coalesce_groups(pts, groups, radius, k_max)
    return [MergedNode(pts[g].mean(axis=0), [ids[i] for i in g]) for g in groups]


def coalesce_groups(pts: np.ndarray, groups: list[list[int]], radius: float,
                    k_max: int) -> list[list[int]]:
    """Merge whole groups whose centroids are within ``2 * radius`` until nothing changes.

    A merge is accepted under the same member-level test as the greedy pass,
    so a fixed point of this function is also a fixed point of re-merging.
    """
    groups = [list(g) for g in groups]
    changed = True
    while changed:
        changed = False
        cents = np.array([pts[g].mean(axis=0) for g in groups]).reshape(-1, 2)
        for a in range(len(groups)):
            d = np.hypot(*(cents - cents[a]).T)
            for b in sorted(range(a + 1, len(groups)), key=lambda b: (d[b], b)):
                if d[b] > 2.0 * radius:
                    break
                union = groups[a] + groups[b]
                if len(union) <= k_max and _group_ok(pts[union], radius):
                    groups[a] = union
                    del groups[b]
                    changed = True
                    break
            if changed:
                break
    return groups


@dataclass
class Partition:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int = 0


def _kmeans_pp(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(pts)
    centers = [pts[int(rng.integers(n))]]
    closest = ((pts - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0, total), side="right"))
            idx = min(idx, n - 1)
        centers.append(pts[idx])
        closest = np.minimum(closest, ((pts - pts[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans_partition(points, k: int, rng: np.random.Generator,
                     max_iter: int = KMEANS_MAX_ITER) -> Partition:
    """Seeded k-means++ followed by Lloyd iterations.

    Empty clusters are re-seeded with the point farthest from its centroid.
    """
    pts = _as_points(points)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= {n}, got {k}")
    if k == n:
        return Partition(np.arange(n), pts.copy(), 0.0, 0)
    centroids = _kmeans_pp(pts, k, rng)
    labels = np.full(n, -1)
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
        new_labels = d2.argmin(axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                far = int(d2[np.arange(n), new_labels].argmax())
                new_labels[far] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = np.array([pts[labels == c].mean(axis=0) for c in range(k)])
    inertia = float(((pts - centroids[labels]) ** 2).sum())
    return Partition(labels, centroids, inertia, it)


@dataclass
class TourGraph:
    """Merged nodes with their MST, double-tree cycle (2-opt improved) and lengths."""

    nodes: np.ndarray
    members: list[list[int]]
    mst_edges: list[tuple[int, int, float]] = field(default_factory=list)
    cycle: list[int] = field(default_factory=list)
    length: float = 0.0
    mst_weight: float = 0.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def spot_ids(self) -> list[int]:
        return [i for group in self.members for i in group]

    @property
    def centroid(self) -> np.ndarray:
        return self.nodes.mean(axis=0)

    def waypoints(self) -> np.ndarray:
        return self.nodes[self.cycle]


def build_tour_graph(points, ids: Sequence[int], radius: float, k_max: int = 5,
                     budget: int = 50) -> TourGraph:
    """Merge -> MST -> double tree -> 2-opt over the given spot positions."""
    merged = steiner_merge(points, radius, k_max, ids)
    nodes = np.array([m.pos for m in merged]).reshape(-1, 2)
    members = [m.members for m in merged]
    edges = build_mst(nodes)
    cycle = hamiltonian_from_mst(edges, len(nodes))
    cycle = two_opt(cycle, nodes, budget)
    return TourGraph(nodes, members, edges, cycle, path_length(cycle, nodes), mst_weight(edges))
