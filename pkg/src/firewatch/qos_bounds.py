"""Service-time upper bounds, the uncertainty residual ratio and helpers.

Conventions: one simulation step is the time unit, lengths are grid units and
velocities are grid units per step. A bound of ``math.inf`` means the tour is
infeasible for one UAV and the graph must be split.

Two ways of assembling the service time are supported (see
:func:`service_time_bound`):

* combined (default): the moving-target term is a surcharge on the static tour
  (``T1 + T2``), with the target speed expressed as a fraction of the UAV
  speed in the self-referencing expansion term; the spreading case adds the
  quadratic root on top of ``T1``.
* literal: the three closed forms are used verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .aekf import FilterState, project_residual
from .fire_sim import Case, spread_speed

INFEASIBLE = math.inf
ROOT_TOL = 1e-9


@dataclass(frozen=True)
class ConfidenceConfig:
    alpha: float = 0.05
    mc_samples: int = 4096

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")


@dataclass
class QosAssessment:
    case: Case
    zeta_alpha: float
    t_ub: float
    urr: float
    n_q: int = 0
    urr_threshold: float = 1.0

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.t_ub) and self.urr <= self.urr_threshold


def speed_array(R: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Vectorized spot speed for sampled parameters.

    Gaussian draws can go negative; the speed law is applied to |R| and |U|
    since the sign of R only flips the heading, not the magnitude.
    """
    R, U = np.abs(np.asarray(R, dtype=float)), np.abs(np.asarray(U, dtype=float))
    lb = 0.936 * np.exp(0.256 * U) + 0.461 * np.exp(-0.154 * U) - 0.397
    root = np.sqrt(np.clip(lb * lb - 1.0, 0.0, None))
    return R * root / (lb + root)


def _signed_speed(R: float, U: float) -> float:
    return spread_speed(abs(R), abs(U))


def _sample_params(mean: np.ndarray, cov: np.ndarray, normals: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = V * np.sqrt(np.clip(w, 0.0, None))
    return mean + normals @ scale.T


def spot_speed_quantile(fs: FilterState, alpha: float, rng: Optional[np.random.Generator] = None,
                        mc_samples: int = 4096, normals: Optional[np.ndarray] = None) -> float:
    """Empirical (1 - alpha) quantile of the spot speed under the filter's parameter marginal.

    The speed magnitude does not depend on theta, so only the (R, U) block is
    sampled. ``normals`` (shape ``(m, 2)``) supplies pre-drawn standard normal
    variates instead of drawing ``mc_samples`` from ``rng``.
    """
    if normals is None:
        normals = rng.standard_normal((mc_samples, 2))
    draws = _sample_params(fs.params[:2], fs.param_cov[:2, :2], normals)
    speeds = speed_array(draws[:, 0], draws[:, 1])
    return float(np.quantile(speeds, 1.0 - alpha))


def zeta_alpha(estimates: Iterable[FilterState], alpha: float, rng: np.random.Generator,
               mc_samples: int = 4096) -> float:
    """Confidence-level speed: the largest per-spot (1 - alpha) speed quantile."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("zeta_alpha needs at least one estimate")
    return max(spot_speed_quantile(fs, alpha, rng, mc_samples) for fs in estimates)


def fov_width(altitude: float, half_angle: float) -> float:
    if altitude <= 0:
        raise ValueError("altitude must be positive")
    if not 0.0 < half_angle < math.pi / 2:
        raise ValueError(f"half_angle must lie in (0, pi/2), got {half_angle}")
    return 2.0 * altitude * math.tan(half_angle)


def tub_case1(path_len: float, v_max: float) -> float:
    """Stationary targets: twice the tree length at full speed (double-tree walk)."""
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    return 2.0 * path_len / v_max


def tub_case2(path_len: float, v_max: float, zeta: float, n_q: int) -> float:
    """Moving targets: ``8 z (n-1) L / (v (1 - 4 z (n-1)))``; inf when the denominator is <= 0."""
    if n_q < 1:
        raise ValueError("n_q must be >= 1")
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    growth = 4.0 * zeta * (n_q - 1)
    if growth == 0.0:
        return 0.0
    if 1.0 - growth <= 0.0:
        return INFEASIBLE
    return 2.0 * growth * path_len / (v_max * (1.0 - growth))


@dataclass(frozen=True)
class Case3Quadratic:
    """Coefficients of ``quad * T^2 - lin * T + const = 0``."""

    quad: float
    lin: float
    const: float

    def residual(self, t: float) -> float:
        return self.quad * t * t - self.lin * t + self.const


def case3_coefficients(path_len: float, v_max: float, zeta: float, n_q: int, w: float,
                       delta: Optional[float] = None) -> Case3Quadratic:
    if w <= 0:
        raise ValueError("FOV width must be positive")
    if delta is None:
        delta = tub_case2(path_len, v_max, zeta, n_q)
    return Case3Quadratic(quad=4.0 * n_q * zeta * zeta / (w * v_max),
                          lin=1.0 - 2.0 * n_q * zeta / v_max,
                          const=delta)


def tub_case3(path_len: float, v_max: float, zeta: float, n_q: int, w: float,
              delta: Optional[float] = None) -> float:
    """Moving-spreading targets: smaller positive root of the spreading quadratic.

    ``delta`` overrides the constant term (the moving-target time); by default
    it is :func:`tub_case2` of the same inputs. Returns inf when the linear
    coefficient is non-positive, the discriminant is negative, or the
    moving-target time is itself infeasible.
    """
    if n_q < 1:
        raise ValueError("n_q must be >= 1")
    q = case3_coefficients(path_len, v_max, zeta, n_q, w, delta)
    if not math.isfinite(q.const) or q.lin <= 0.0:
        return INFEASIBLE
    disc = q.lin * q.lin - 4.0 * q.quad * q.const
    if disc < 0.0:
        return INFEASIBLE
    # 2c / (b + sqrt(disc)) equals (b - sqrt(disc)) / (2a) without the cancellation.
    t = 2.0 * q.const / (q.lin + math.sqrt(disc))
    scale = max(1.0, q.quad * t * t, q.lin * t, abs(q.const))
    assert abs(q.residual(t)) <= ROOT_TOL * scale, "case-3 root does not satisfy its quadratic"
    return t


def service_time_bound(case: Case, path_len: float, v_max: float, zeta: float, n_q: int,
                       fov: float, literal: bool = False) -> float:
    """T_UB for a tour whose tree length is ``path_len``."""
    case = Case.parse(case)
    t1 = tub_case1(path_len, v_max)
    if case == Case.STATIONARY:
        return t1
    if literal:
        if case == Case.MOVING:
            return tub_case2(path_len, v_max, zeta, n_q)
        return tub_case3(path_len, v_max, zeta, n_q, fov)
    t2 = tub_case2(path_len, v_max, zeta / v_max, n_q)
    if case == Case.MOVING:
        return t1 + t2
    return t1 + tub_case3(path_len, v_max, zeta, n_q, fov, delta=t2)


def _mean_speed(fs: FilterState) -> float:
    R, U, _ = fs.params
    return abs(_signed_speed(R, U))


def classify_case(estimates: Sequence[FilterState], alive_history: Sequence[int],
                  eps_v: float = 1e-3, window: int = 10) -> Case:
    """Stationary / moving / moving-spreading from the estimates and the alive-count history."""
    if not estimates:
        raise ValueError("classify_case needs at least one estimate")
    recent = list(alive_history)[-(window + 1):]
    if len(recent) >= 2 and max(recent[1:]) > recent[0]:
        return Case.MOVING_SPREADING
    if max(_mean_speed(fs) for fs in estimates) < eps_v:
        return Case.STATIONARY
    return Case.MOVING


def projection_steps(t_ub: float) -> int:
    return max(0, math.ceil(t_ub - 1e-9))


def urr(fs: FilterState, t_ub: float) -> float:
    """Trace of the residual projected over ``ceil(t_ub)`` steps over the prior residual ``fs.S``.

    The projection uses the observation-noise covariance that formed ``fs.S``,
    so both traces share the same Γ and the ratio only reflects state
    uncertainty.
    """
    if not math.isfinite(t_ub):
        return math.inf
    denom = float(np.trace(fs.S))
    if denom <= 0.0:
        raise ValueError("degenerate filter: zero-trace residual covariance")
    return float(np.trace(project_residual(fs, projection_steps(t_ub), gam=fs.Gam_prior))) / denom


def bound_confidence(alpha: float, n_q: int) -> float:
    """``1 - (1 - alpha)^n_q``: chance that at least one of ``n_q`` spots beats its speed quantile."""
    if n_q < 1:
        raise ValueError("n_q must be >= 1")
    return 1.0 - (1.0 - alpha) ** n_q
