"""The named experiment grids.

Every experiment expands into a list of :class:`TrialSpec`; trials are
independent (own config, own rng streams) and may run on several worker
processes. Results are merged in trial order, so the worker count never
changes the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import aekf
from .config import ScenarioConfig, deep_merge, default_config
from .fire_sim import Case, EnvParams
from .harness import fire_shape, rng_stream, run_scenario
from .oracle import t_star_oracle
from .qos_bounds import bound_confidence, fov_width, service_time_bound, zeta_alpha
from .tour_graph import build_mst, mst_weight

CASE_SPEED = {Case.STATIONARY: 0.0, Case.MOVING: 0.5, Case.MOVING_SPREADING: 1.0}
CASE_NAMES = {Case.STATIONARY: "stationary", Case.MOVING: "moving", Case.MOVING_SPREADING: "moving_spreading"}


@dataclass
class TrialSpec:
    experiment: str
    trial: int
    seed: int
    group: dict
    params: dict = field(default_factory=dict)


@dataclass
class TrialResult:
    trial: int
    group: dict
    metrics: dict
    series: dict = field(default_factory=dict)


# ---------------------------------------------------------------- scenarios

def area_centers(n: int, rng: np.random.Generator, width: float = 500.0, height: float = 500.0,
                 margin: float = 50.0, min_gap: float = 80.0) -> list[list[float]]:
    """``n`` area centres, uniformly placed with a minimum spacing (rejection sampling)."""
    out: list[np.ndarray] = []
    gap = min_gap
    tries = 0
    while len(out) < n:
        c = rng.uniform([margin, margin], [width - margin, height - margin])
        if all(np.hypot(*(c - o)) >= gap for o in out):
            out.append(c)
        tries += 1
        if tries % 1000 == 0:
            gap *= 0.8
    return [[round(float(x), 6) for x in c] for c in out]


def fire_block(case: Case, spawn_prob: float = 0.02, spawn_max: int = 3) -> dict:
    fire = {"case": CASE_NAMES[case], "speed": CASE_SPEED[case], "U0": 5.0}
    if case == Case.MOVING_SPREADING:
        fire.update(spawn_prob=spawn_prob, spawn_max=spawn_max)
    return fire


def field_config(seed: int, trial: int, n_areas: int, case: Case, **overrides) -> ScenarioConfig:
    """Full-size field: 500 x 500 terrain, 20-30 spots per area."""
    centers = area_centers(n_areas, rng_stream(seed, trial, "areas"))
    base = {
        "areas": [{"center": c} for c in centers],
        "fire": fire_block(case),
        "uavs": {"count": 30, "v_max": 500.0},
        "planner": {"eps_v": 0.02, "urr_threshold": 1.03},
        "sim": {"seed": seed * 10007 + trial, "steps": 30},
    }
    return default_config(**deep_merge(base, overrides))


# ---------------------------------------------------------------- trial bodies

def _tightness_trial(spec: TrialSpec) -> TrialResult:
    p = spec.params
    case = Case.parse(spec.group["case"])
    rng = rng_stream(spec.seed, spec.trial, "tightness")
    n = int(rng.integers(p["n_min"], p["n_max"] + 1))
    speed = CASE_SPEED[case]
    U = p["U0"]
    R = speed / fire_shape(U) if speed > 0 else 0.0
    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    vel = EnvParams(R, U, theta).velocity()
    # Spots on a jittered arc of the front.
    start = rng.uniform(0.0, 2.0 * math.pi)
    ang = np.sort(start + rng.uniform(0.0, p["arc"], n))
    rad = p["radius"] + rng.normal(0.0, p["jitter"], n)
    spots = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    velocities = np.repeat(vel[None, :], n, axis=0)
    # Track each spot from a hovering UAV for a short while to get the parameter posterior.
    noise = np.diag(np.square(p["meas_noise"]))
    filters = []
    for q in spots:
        pose = np.array([q[0] + 3.0, q[1] + 3.0, p["altitude"]])
        prior = (abs(R + rng.normal(0, 0.05)), abs(U + rng.normal(0, 0.5)), theta + rng.normal(0, 0.05))
        fs = aekf.new_filter(q + rng.normal(0, 0.5, 2), pose, *prior)
        pos = q.copy()
        for _ in range(p["track_steps"]):
            pos = pos + vel
            pose = np.array([pos[0] + 3.0, pos[1] + 3.0, p["altitude"]])
            fs = aekf.predict(fs, 1.0, pose)
            fs = aekf.update(fs, aekf.measure(pose, pos, (R, U, theta), noise, rng), pose)
        filters.append(fs)
    est = np.array([f.position for f in filters])
    # The estimated tour starts where the tracked spots are now; the oracle uses the truth there.
    truth_now = spots + vel * p["track_steps"]
    L = mst_weight(build_mst(est))
    zeta = zeta_alpha(filters, p["alpha"], rng, p["mc_samples"])
    w = fov_width(p["altitude"], p["half_angle"])
    t_ub = service_time_bound(case, L, p["v_max"], zeta, n, w)
    t_star = t_star_oracle(truth_now, velocities, p["v_max"])
    ratio = t_ub / t_star if t_star > 0 else math.nan
    return TrialResult(spec.trial, spec.group, {
        "n_q": n, "mst": L, "zeta_alpha": zeta, "t_ub": t_ub, "t_star": t_star, "ratio": ratio,
        "violated": int(t_ub < t_star), "bound_confidence": bound_confidence(p["alpha"], n),
    })


TIGHTNESS_DEFAULTS = dict(n_min=3, n_max=8, radius=20.0, arc=2.0, jitter=1.0, U0=5.0, v_max=100.0,
                          altitude=20.0, half_angle=math.pi / 4, alpha=0.05, mc_samples=4096,
                          track_steps=10, meas_noise=[0.01, 0.01, 0.02, 0.2, 0.02])


def _scenario_trial(spec: TrialSpec) -> TrialResult:
    cfg = default_config(**spec.params["config"])
    rec = run_scenario(cfg, trial=spec.trial)
    keep = spec.params.get("series", ())
    series = {name: rec.column(name).tolist() for name in keep}
    summarize: Callable = SUMMARIZERS[spec.experiment]
    return TrialResult(spec.trial, spec.group, summarize(rec, spec), series)


def _requirements_summary(rec, spec) -> dict:
    need = rec.column("allocated") + rec.column("insufficient")
    return {"required_uavs": float(need.max()) if len(need) else 0.0,
            "final_subgraphs": float(rec.column("subgraphs")[-1]) if rec.rows else 0.0,
            "insufficient_rounds": rec.insufficient_rounds,
            "max_alive": float(rec.column("alive").max()) if rec.rows else 0.0}


def _coverage_summary(rec, spec) -> dict:
    cum = rec.column("cumulative_residual")
    res = rec.column("coverage_residual")
    w = spec.params["slope_window"]
    return {"cumulative_residual": float(cum[-1]) if len(cum) else 0.0,
            "initial_slope": float(res[:w].mean()) if len(res) else 0.0,
            "final_slope": float(res[-w:].mean()) if len(res) else 0.0}


def _convergence_summary(rec, spec) -> dict:
    tub = rec.column("mean_t_ub")
    finite = tub[np.isfinite(tub)]
    return {"first_t_ub": float(tub[0]) if len(tub) else 0.0,
            "final_t_ub": float(finite[-1]) if len(finite) else math.inf,
            "max_urr": float(rec.column("max_urr").max()) if rec.rows else 0.0}


def _evolving_summary(rec, spec) -> dict:
    return {"cumulative_residual": float(rec.column("cumulative_residual")[-1]),
            "cumulative_uncertainty": float(rec.column("cumulative_uncertainty")[-1]),
            "max_alive": float(rec.column("alive").max()),
            "insufficient_rounds": rec.insufficient_rounds}


def _mismatch_summary(rec, spec) -> dict:
    return {"cumulative_uncertainty": float(rec.column("cumulative_uncertainty")[-1]),
            "cumulative_residual": float(rec.column("cumulative_residual")[-1])}


SUMMARIZERS = {
    "uav_requirements": _requirements_summary,
    "coverage_vs_n": _coverage_summary,
    "tub_convergence": _convergence_summary,
    "evolving_fire": _evolving_summary,
    "model_mismatch": _mismatch_summary,
}


# ---------------------------------------------------------------- grids

def _cfg_dict(cfg: ScenarioConfig) -> dict:
    return cfg.to_dict()


def uav_requirements_specs(seeds: int = 10, base_seed: int = 0, max_areas: int = 10,
                           steps: int = 30, mc_samples: int = 1024) -> list[TrialSpec]:
    specs = []
    for case in Case:
        for n_areas in range(1, max_areas + 1):
            for s in range(seeds):
                cfg = field_config(base_seed + s, n_areas, n_areas, case,
                                   planner={"mc_samples": mc_samples}, sim={"steps": steps})
                specs.append(TrialSpec("uav_requirements", len(specs), base_seed + s,
                                       {"case": CASE_NAMES[case], "n_areas": n_areas},
                                       {"config": _cfg_dict(cfg)}))
    return specs


def coverage_vs_n_specs(seeds: int = 10, base_seed: int = 0, max_uavs: int = 5, n_areas: int = 5,
                        steps: int = 100, v_max: float = 25.0, mc_samples: int = 1024) -> list[TrialSpec]:
    specs = []
    for case in Case:
        for n_uavs in range(1, max_uavs + 1):
            for s in range(seeds):
                cfg = field_config(base_seed + s, 0, n_areas, case,
                                   uavs={"count": n_uavs, "v_max": v_max, "base": [250.0, 250.0]},
                                   planner={"mc_samples": mc_samples}, sim={"steps": steps})
                d = _cfg_dict(cfg)
                for a in d["areas"]:
                    a["prioritized"] = False
                specs.append(TrialSpec("coverage_vs_n", len(specs), base_seed + s,
                                       {"case": CASE_NAMES[case], "n_uavs": n_uavs},
                                       {"config": d, "slope_window": 10,
                                        "series": ("cumulative_residual",)}))
    return specs


def tub_convergence_specs(seeds: int = 10, base_seed: int = 0, n_areas: int = 3, steps: int = 100,
                          mc_samples: int = 1024) -> list[TrialSpec]:
    specs = []
    for case in Case:
        for s in range(seeds):
            cfg = field_config(base_seed + s, 0, n_areas, case, uavs={"count": 15},
                               planner={"mc_samples": mc_samples}, sim={"steps": steps})
            specs.append(TrialSpec("tub_convergence", len(specs), base_seed + s, {"case": CASE_NAMES[case]},
                                   {"config": _cfg_dict(cfg), "series": ("mean_t_ub", "subgraphs")}))
    return specs


def tub_tightness_specs(seeds: int = 10, base_seed: int = 0, trials: int = 500, **params) -> list[TrialSpec]:
    """``trials`` oracle comparisons per case; ``seeds`` is unused (each trial has its own stream)."""
    p = dict(TIGHTNESS_DEFAULTS, **params)
    specs = []
    for case in Case:
        for k in range(trials):
            specs.append(TrialSpec("tub_tightness", len(specs), base_seed + 1000 * int(case) + k,
                                   {"case": CASE_NAMES[case]}, p))
    return specs


def evolving_fire_specs(seeds: int = 10, base_seed: int = 0, steps: int = 350, n_areas: int = 2,
                        mc_samples: int = 1024) -> list[TrialSpec]:
    specs = []
    for s in range(seeds):
        cfg = field_config(base_seed + s, 0, n_areas, Case.STATIONARY,
                           fire={"schedule": [{"t": 50, "case": "moving"}, {"t": 150, "case": "moving_spreading"}],
                                 "speed": 0.5, "spawn_prob": 0.01, "spawn_max": 1},
                           uavs={"count": 5}, planner={"mc_samples": mc_samples}, sim={"steps": steps})
        specs.append(TrialSpec("evolving_fire", len(specs), base_seed + s, {"scenario": "evolving"},
                               {"config": _cfg_dict(cfg),
                                "series": ("alive", "allocated", "mean_t_ub", "cumulative_residual")}))
    return specs


def model_mismatch_specs(seeds: int = 10, base_seed: int = 0, n_areas: int = 3, steps: int = 100,
                         n_uavs: int = 3, v_max: float = 25.0, U0: float = 1.0,
                         mc_samples: int = 1024) -> list[TrialSpec]:
    specs = []
    for s in range(seeds):
        for label, mismatch in (("matched", None), ("mismatched", {})):
            cfg = field_config(base_seed + s, 0, n_areas, Case.MOVING,
                               fire={"U0": U0, "mismatch": mismatch},
                               uavs={"count": n_uavs, "v_max": v_max, "base": [250.0, 250.0]},
                               planner={"mc_samples": mc_samples}, sim={"steps": steps})
            d = _cfg_dict(cfg)
            for a in d["areas"]:
                a["prioritized"] = False
            specs.append(TrialSpec("model_mismatch", len(specs), base_seed + s,
                                   {"model": label, "seed": base_seed + s}, {"config": d}))
    return specs


@dataclass(frozen=True)
class Experiment:
    name: str
    specs: Callable[..., list]
    body: Callable[[TrialSpec], TrialResult]
    metrics: tuple


EXPERIMENTS = {
    "uav_requirements": Experiment("uav_requirements", uav_requirements_specs, _scenario_trial,
                                   ("required_uavs", "final_subgraphs", "insufficient_rounds", "max_alive")),
    "coverage_vs_n": Experiment("coverage_vs_n", coverage_vs_n_specs, _scenario_trial,
                                ("cumulative_residual", "initial_slope", "final_slope")),
    "tub_convergence": Experiment("tub_convergence", tub_convergence_specs, _scenario_trial,
                                  ("first_t_ub", "final_t_ub", "max_urr")),
    "tub_tightness": Experiment("tub_tightness", tub_tightness_specs, _tightness_trial,
                                ("n_q", "mst", "zeta_alpha", "t_ub", "t_star", "ratio", "violated",
                                 "bound_confidence")),
    "evolving_fire": Experiment("evolving_fire", evolving_fire_specs, _scenario_trial,
                                ("cumulative_residual", "cumulative_uncertainty", "max_alive",
                                 "insufficient_rounds")),
    "model_mismatch": Experiment("model_mismatch", model_mismatch_specs, _scenario_trial,
                                 ("cumulative_uncertainty", "cumulative_residual")),
}


def get_experiment(name: str) -> Experiment:
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}; valid names: {', '.join(sorted(EXPERIMENTS))}")
    return EXPERIMENTS[name]


def run_trials(exp: Experiment, specs: list[TrialSpec], workers: int = 1) -> list[TrialResult]:
    if workers <= 1:
        return [exp.body(s) for s in specs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(exp.body, specs, chunksize=max(1, len(specs) // (4 * workers))))


def run_experiment(name: str, seeds: int = 10, workers: int = 1, base_seed: int = 0,
                   **grid) -> tuple[list[TrialResult], dict]:
    """Run one named experiment; returns per-trial results and the aggregate summary."""
    from .metrics import summarize_trials
    exp = get_experiment(name)
    specs = exp.specs(seeds=seeds, base_seed=base_seed, **grid)
    results = run_trials(exp, specs, workers)
    return results, summarize_trials(name, exp.metrics, results, {"seeds": seeds, "base_seed": base_seed, **grid})
