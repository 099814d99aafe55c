"""Adaptive extended Kalman filter for a single firespot.

State vector (8): ``[qx, qy, px, py, pz, R, U, theta]`` -- spot position, observing
UAV pose, and the spread-model parameters. Observation vector (5):
``[phi_x, phi_y, R, U, theta]`` where the two angles are the UAV's looking
angles to the spot (``atan(pz/r)`` and ``atan(r/pz)`` with ``r`` the planar
offset) and the parameter channels are direct weather-station readings.

The generic Kalman pieces (:func:`kf_predict`, :func:`kf_update`) work for any
dimension; the firespot filter is a thin layer that supplies the process map,
observation map and Jacobians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .fire_sim import TWO_PI, gb_term, length_to_breadth, length_to_breadth_slope

QX, QY, PX, PY, PZ, R_, U_, TH = range(8)
STATE_DIM = 8
OBS_DIM = 5
PARAMS = slice(R_, TH + 1)

EPS_GEOM = 1e-6


class FilterDivergence(RuntimeError):
    """Residual covariance became singular."""


# ---------------------------------------------------------------------------
# Generic Kalman steps
# ---------------------------------------------------------------------------

def kf_predict(x: np.ndarray, P: np.ndarray, F: np.ndarray, Lam: np.ndarray,
               fx: Callable[[np.ndarray], np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    P_pred = F @ P @ F.T + Lam
    return fx(x), 0.5 * (P_pred + P_pred.T)


@dataclass
class UpdateResult:
    x: np.ndarray
    P: np.ndarray
    Lam: np.ndarray
    Gam: np.ndarray
    S: np.ndarray
    K: np.ndarray
    innovation: np.ndarray
    residual: np.ndarray


def kf_update(x: np.ndarray, P: np.ndarray, z: np.ndarray, H: np.ndarray,
              hx: Callable[[np.ndarray], np.ndarray], Lam: np.ndarray, Gam: np.ndarray,
              gamma_step: float,
              wrap: Optional[Callable[[np.ndarray], np.ndarray]] = None,
              normalize: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> UpdateResult:
    """Joseph-form update followed by innovation/residual noise adaptation.

    ``wrap`` folds measurement differences (angle channels); ``normalize`` folds
    the corrected state.
    """
    wrap = wrap or (lambda v: v)
    normalize = normalize or (lambda v: v)
    innovation = wrap(z - hx(x))
    S = H @ P @ H.T + Gam
    S = 0.5 * (S + S.T)
    try:
        K = np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence("residual covariance is singular") from exc
    if not np.all(np.isfinite(K)):
        raise FilterDivergence("non-finite Kalman gain")
    x_post = normalize(x + K @ innovation)
    I_KH = np.eye(P.shape[0]) - K @ H
    P_post = I_KH @ P @ I_KH.T + K @ Gam @ K.T
    P_post = 0.5 * (P_post + P_post.T)
    residual = wrap(z - hx(x_post))
    Kd = K @ innovation
    Lam_new = gamma_step * Lam + (1.0 - gamma_step) * np.outer(Kd, Kd)
    Gam_new = gamma_step * Gam + (1.0 - gamma_step) * (np.outer(residual, residual) + H @ P @ H.T)
    return UpdateResult(x_post, P_post, 0.5 * (Lam_new + Lam_new.T), 0.5 * (Gam_new + Gam_new.T),
                        S, K, innovation, residual)


# ---------------------------------------------------------------------------
# Firespot process and observation models
# ---------------------------------------------------------------------------

def _speed_and_partials(R: float, U: float) -> tuple[float, float, float]:
    """Return C, dC/dR and dC/dU for the FARSITE speed."""
    lb = length_to_breadth(U)
    root = math.sqrt(gb_term(lb))
    denom = lb + root
    shape = root / denom if denom > 0 else 0.0
    if root > 0.0:
        # d/dU [sqrt(GB)/(LB + sqrt(GB))] = LB' / (sqrt(GB) (LB + sqrt(GB))^2), using LB^2 - GB = 1
        dshape = length_to_breadth_slope(U) / (root * denom * denom)
    else:
        dshape = 0.0
    return R * shape, shape, R * dshape


def process_model(x: np.ndarray, dt: float = 1.0, uav_pose: Optional[np.ndarray] = None) -> np.ndarray:
    """Advance the spot by one spread step.

    The UAV pose is an exogenous input: the next pose is ``uav_pose`` when given
    and otherwise the current one carried forward. Parameters are held constant.
    """
    out = np.array(x, dtype=float)
    c, _, _ = _speed_and_partials(x[R_], x[U_])
    out[QX] += c * math.sin(x[TH]) * dt
    out[QY] += c * math.cos(x[TH]) * dt
    if uav_pose is not None:
        out[PX:PZ + 1] = uav_pose
    out[TH] = x[TH] % TWO_PI
    return out


def process_jacobian(x: np.ndarray, dt: float = 1.0) -> np.ndarray:
    F = np.zeros((STATE_DIM, STATE_DIM))
    F[QX, QX] = F[QY, QY] = 1.0
    F[R_, R_] = F[U_, U_] = F[TH, TH] = 1.0
    c, dc_dR, dc_dU = _speed_and_partials(x[R_], x[U_])
    s, co = math.sin(x[TH]), math.cos(x[TH])
    F[QX, R_], F[QY, R_] = dc_dR * s * dt, dc_dR * co * dt
    F[QX, U_], F[QY, U_] = dc_dU * s * dt, dc_dU * co * dt
    F[QX, TH], F[QY, TH] = c * co * dt, -c * s * dt
    return F


def _planar_offset(x: np.ndarray, eps: float = EPS_GEOM) -> tuple[np.ndarray, float, bool]:
    d = np.array([x[QX] - x[PX], x[QY] - x[PY]])
    r = math.hypot(d[0], d[1])
    if r <= eps:
        return np.array([eps, 0.0]), eps, True
    return d, r, False


def observation_model(x: np.ndarray, eps: float = EPS_GEOM) -> np.ndarray:
    _, r, _ = _planar_offset(x, eps)
    pz = x[PZ]
    return np.array([math.atan2(pz, r), math.atan2(r, pz), x[R_], x[U_], x[TH]])


def observation_jacobian(x: np.ndarray, eps: float = EPS_GEOM) -> tuple[np.ndarray, bool]:
    """Return ``(H, degenerate)``; ``degenerate`` is set when the planar offset was regularized."""
    d, r, degenerate = _planar_offset(x, eps)
    pz = x[PZ]
    rho2 = r * r + pz * pz
    grad_q_phix = -pz * d / (r * rho2)
    grad_q_phiy = pz * d / (r * rho2)
    H = np.zeros((OBS_DIM, STATE_DIM))
    H[0, QX:QY + 1] = grad_q_phix
    H[0, PX:PY + 1] = -grad_q_phix
    H[0, PZ] = r / rho2
    H[1, QX:QY + 1] = grad_q_phiy
    H[1, PX:PY + 1] = -grad_q_phiy
    H[1, PZ] = -r / rho2
    H[2, R_] = H[3, U_] = H[4, TH] = 1.0
    return H, degenerate


def wrap_angle_residual(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float)
    out[4] = (out[4] + math.pi) % TWO_PI - math.pi
    return out


def _normalize_state(x: np.ndarray) -> np.ndarray:
    x[TH] = x[TH] % TWO_PI
    return x


# ---------------------------------------------------------------------------
# Filter state and per-spot operations
# ---------------------------------------------------------------------------

@dataclass
class FilterState:
    """Per-spot AEKF state.

    ``S`` is the residual covariance formed at the most recent update (or at
    initialization), i.e. the ``S_{t|t-1}`` used as the URR denominator.
    """

    x: np.ndarray
    P: np.ndarray
    Lam: np.ndarray
    Gam: np.ndarray
    S: np.ndarray
    gamma_step: float = 0.95
    degenerate: bool = False
    updates: int = 0
    # Observation-noise covariance that formed ``S`` (before this update adapted it).
    Gam_prior: Optional[np.ndarray] = None

    @property
    def position(self) -> np.ndarray:
        return self.x[QX:QY + 1].copy()

    @property
    def params(self) -> np.ndarray:
        return self.x[PARAMS].copy()

    @property
    def param_cov(self) -> np.ndarray:
        return self.P[PARAMS, PARAMS].copy()

    def copy(self) -> "FilterState":
        return FilterState(self.x.copy(), self.P.copy(), self.Lam.copy(), self.Gam.copy(),
                           self.S.copy(), self.gamma_step, self.degenerate, self.updates,
                           None if self.Gam_prior is None else self.Gam_prior.copy())


def residual_covariance(x: np.ndarray, P: np.ndarray, Gam: np.ndarray) -> np.ndarray:
    H, _ = observation_jacobian(x)
    S = H @ P @ H.T + Gam
    return 0.5 * (S + S.T)


def new_filter(q, uav_pose, R: float, U: float, theta: float, P0: float = 1.0,
               Lam0: float = 1e-3, Gam0: float = 1e-2, gamma_step: float = 0.95) -> FilterState:
    """Fresh filter; scalar covariance arguments are multiplied by the identity."""
    if not 0.0 < gamma_step <= 1.0:
        raise ValueError(f"gamma_step must lie in (0, 1], got {gamma_step}")
    x = np.array([q[0], q[1], uav_pose[0], uav_pose[1], uav_pose[2], R, U, theta % TWO_PI], dtype=float)
    P = _as_cov(P0, STATE_DIM)
    Lam = _as_cov(Lam0, STATE_DIM)
    Gam = _as_cov(Gam0, OBS_DIM)
    return FilterState(x, P, Lam, Gam, residual_covariance(x, P, Gam), gamma_step)


def _as_cov(value, dim: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1:
        return np.diag(arr)
    return arr.copy()


def predict(fs: FilterState, dt: float = 1.0, uav_pose: Optional[np.ndarray] = None) -> FilterState:
    F = process_jacobian(fs.x, dt)
    x, P = kf_predict(fs.x, fs.P, F, fs.Lam, lambda v: process_model(v, dt, uav_pose))
    return replace(fs, x=x, P=P)


def update(fs: FilterState, z: np.ndarray, uav_pose: Optional[np.ndarray] = None) -> FilterState:
    """Measurement update. ``uav_pose`` (known from the autopilot) overwrites the pose block first."""
    x = fs.x.copy()
    if uav_pose is not None:
        x[PX:PZ + 1] = uav_pose
    H, degenerate = observation_jacobian(x)
    res = kf_update(x, fs.P, np.asarray(z, dtype=float), H, observation_model, fs.Lam, fs.Gam,
                    fs.gamma_step, wrap=wrap_angle_residual, normalize=_normalize_state)
    return FilterState(res.x, res.P, res.Lam, res.Gam, res.S, fs.gamma_step, degenerate, fs.updates + 1,
                       fs.Gam.copy())


def project_residual(fs: FilterState, k: int, dt: float = 1.0,
                     gam: Optional[np.ndarray] = None) -> np.ndarray:
    """Residual covariance after ``k`` emulated prediction steps, without touching ``fs``.

    Noise covariances stay frozen: Λ at its current value, Γ at ``gam`` if
    given and otherwise at its current value.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    x, P = fs.x.copy(), fs.P.copy()
    for _ in range(int(k)):
        F = process_jacobian(x, dt)
        x, P = kf_predict(x, P, F, fs.Lam, lambda v: process_model(v, dt))
    return residual_covariance(x, P, fs.Gam if gam is None else gam)


def measure(uav_pose, spot_pos, env_params, gam_true, rng: np.random.Generator) -> np.ndarray:
    """Noisy observation of a spot from ``uav_pose``.

    ``env_params`` is ``(R, U, theta)`` of the true environment; ``gam_true``
    is the 5x5 measurement-noise covariance (or a scalar / diagonal).
    """
    x = np.array([spot_pos[0], spot_pos[1], uav_pose[0], uav_pose[1], uav_pose[2],
                  env_params[0], env_params[1], env_params[2]], dtype=float)
    z = observation_model(x)
    cov = _as_cov(gam_true, OBS_DIM)
    if np.any(cov):
        z = z + _gaussian(cov, rng)
    z[4] = z[4] % TWO_PI
    return z


def _gaussian(cov: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        return rng.normal(0.0, 1.0, cov.shape[0]) * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    w, V = np.linalg.eigh(cov)
    return V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.normal(0.0, 1.0, cov.shape[0]))
