"""Exhaustive ground-truth service time for small moving-target sets.

A UAV starts on spot 0 at time 0, flies straight to where each next target
will be when it gets there, and finally returns to spot 0. Interception times
come from a fixed-point iteration; the best of all visiting orders is T*.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

MAX_ORACLE_SPOTS = 8
FIXED_POINT_TOL = 1e-9
FIXED_POINT_ITERS = 100


def intercept(p: np.ndarray, t: np.ndarray, q0: np.ndarray, vel: np.ndarray, v_max: float,
              tol: float = FIXED_POINT_TOL, max_iter: int = FIXED_POINT_ITERS) -> np.ndarray:
    """Flight time from ``p`` (at time ``t``) to a target at ``q0 + vel * time``.

    Vectorized over the leading axis. Iterates ``tau <- |q(t + tau) - p| / v_max``
    until the intercept point moves less than ``tol``; entries that do not
    settle within ``max_iter`` iterations come back as inf.
    """
    p, q0, vel = np.atleast_2d(p), np.atleast_2d(q0), np.atleast_2d(vel)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tau = np.hypot(*(q0 + vel * t[:, None] - p).T) / v_max
    done = np.zeros(len(tau), dtype=bool)
    for _ in range(max_iter):
        nxt = np.hypot(*(q0 + vel * (t + tau)[:, None] - p).T) / v_max
        # Displacement of the intercept point between iterations.
        moved = np.hypot(*vel.T) * np.abs(nxt - tau)
        tau = np.where(done, tau, nxt)
        done |= moved < tol
        if done.all():
            break
    return np.where(done, tau, math.inf)


def pursuit_time(p, q0, vel, v_max: float) -> float:
    """Closed-form interception time (the positive root of |d + v tau| = V tau)."""
    d = np.asarray(q0, dtype=float) - np.asarray(p, dtype=float)
    v = np.asarray(vel, dtype=float)
    a = v_max * v_max - v @ v
    b = -2.0 * (d @ v)
    c = -(d @ d)
    if c == 0.0:
        return 0.0
    if a <= 0.0:
        return math.inf
    return float((-b + math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a))


def tour_completion_times(spots: np.ndarray, velocities: np.ndarray, v_max: float,
                          orders: np.ndarray) -> np.ndarray:
    """Completion time of each closed tour ``0 -> orders[k] -> 0``."""
    m = len(orders)
    pos = np.repeat(spots[:1], m, axis=0).astype(float)
    t = np.zeros(m)
    legs = [orders[:, j] for j in range(orders.shape[1])] + [np.zeros(m, dtype=int)]
    for idx in legs:
        live = np.isfinite(t)
        tau = np.full(m, math.inf)
        if live.any():
            tau[live] = intercept(pos[live], t[live], spots[idx[live]], velocities[idx[live]], v_max)
        t = t + tau
        finite = np.isfinite(t)
        pos = np.where(finite[:, None], spots[idx] + velocities[idx] * np.where(finite, t, 0.0)[:, None], pos)
    return t


def t_star_oracle(spots, velocities, v_max: float) -> float:
    """Minimum closed-tour completion time over all visiting orders (n <= 8)."""
    spots = np.asarray(spots, dtype=float).reshape(-1, 2)
    velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
    n = len(spots)
    if n > MAX_ORACLE_SPOTS:
        raise ValueError(f"t_star_oracle is exhaustive; n_q must be <= {MAX_ORACLE_SPOTS}, got {n}")
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    if n <= 1:
        return 0.0
    orders = np.array(list(itertools.permutations(range(1, n))), dtype=int)
    return float(tour_completion_times(spots, velocities, v_max, orders).min())
