"""Acceptance checks AC1-AC10.

Each check prints one ``ACn PASS|FAIL`` line and then asserts; ``conftest.py`` repeats the
lines in the terminal summary so they survive output capture. The experiment-backed checks
are slow: the whole file takes roughly 20 minutes on one core.
"""

import itertools
import math
import sys
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.stats import spearmanr

from firewatch import metrics
from firewatch.aekf import (kf_predict, kf_update, observation_jacobian, observation_model, process_jacobian,
                            process_model)
from firewatch.experiments import field_config, get_experiment, run_experiment, run_trials
from firewatch.fire_sim import Case
from firewatch.harness import run_scenario
from firewatch.qos_bounds import case3_coefficients, tub_case3
from firewatch.tour_graph import build_mst, hamiltonian_from_mst, mst_weight, path_length, two_opt

CASES = ("stationary", "moving", "moving_spreading")
LINES = []


def report(ac, ok, detail):
    line = f"AC{ac} {'PASS' if ok else 'FAIL'}: {detail}"
    LINES.append(line)
    print(line)
    return ok


def by_group(results, key):
    out = {}
    for r in results:
        out.setdefault(tuple(r.group[k] for k in key), []).append(r)
    return out


def mean_of(rs, name):
    return float(np.mean([r.metrics[name] for r in rs]))


# ---------------------------------------------------------------- AC1, AC2

@lru_cache(maxsize=None)
def tightness():
    t0 = time.perf_counter()
    results, _ = run_experiment("tub_tightness", trials=500)
    return results, time.perf_counter() - t0


BANDS = {"stationary": (1.0, 1.4), "moving": (1.0, 1.6), "moving_spreading": (1.1, 2.2)}


def test_ac1_bound_tightness():
    results, elapsed = tightness()
    groups = by_group(results, ("case",))
    ok, parts = elapsed < 600, []
    for case in CASES:
        rs = groups[(case,)]
        ratios = np.array([r.metrics["ratio"] for r in rs])
        lo, hi = BANDS[case]
        mean = float(ratios.mean())
        viol = float(np.mean([r.metrics["violated"] for r in rs]))
        # bound_confidence is the per-trial failure chance 1 - (1 - alpha)^n_q; allow 3 binomial sigmas.
        p = float(np.mean([r.metrics["bound_confidence"] for r in rs]))
        allowed = p + 3.0 * math.sqrt(p * (1.0 - p) / len(rs))
        good = len(rs) >= 500 and lo <= mean <= hi and viol <= allowed
        ok &= good
        parts.append(f"{case} n={len(rs)} mean={mean:.3f} in [{lo}, {hi}] viol={viol:.3f}<={allowed:.3f}")
    assert report(1, ok, "; ".join(parts) + f"; {elapsed:.0f}s")


def test_ac2_bound_validity_floor():
    results, _ = tightness()
    groups = by_group(results, ("case",))
    means = {c: mean_of(groups[(c,)], "ratio") for c in CASES}
    ok = all(m >= 1.0 for m in means.values())
    assert report(2, ok, ", ".join(f"{c}={m:.3f}" for c, m in means.items()))


# ---------------------------------------------------------------- AC3

def test_ac3_uav_requirements():
    results, _ = run_experiment("uav_requirements", seeds=10)
    groups = by_group(results, ("case", "n_areas"))
    ok, parts = True, []
    means = {c: [mean_of(groups[(c, n)], "required_uavs") for n in range(1, 11)] for c in CASES}
    for c in CASES:
        xs = [n for n in range(1, 11) for _ in groups[(c, n)]]
        ys = [r.metrics["required_uavs"] for n in range(1, 11) for r in groups[(c, n)]]
        rho = spearmanr(xs, ys).statistic
        ok &= rho > 0.8
        parts.append(f"{c} rho={rho:.3f}")
    bad = [n for n in range(1, 11) if not means["stationary"][n - 1] <= means["moving"][n - 1]
           <= means["moving_spreading"][n - 1]]
    ok &= not bad
    parts.append(f"case order violated at N_h={bad}" if bad else "case order holds at every N_h")
    parts.append("means " + " | ".join(c + " " + "/".join(f"{m:.1f}" for m in means[c]) for c in CASES))
    assert report(3, ok, "; ".join(parts))


# ---------------------------------------------------------------- AC4

def test_ac4_coverage_monotone():
    results, _ = run_experiment("coverage_vs_n", seeds=10)
    groups = by_group(results, ("case", "n_uavs"))
    ok, parts = True, []
    for c in CASES:
        cum = [mean_of(groups[(c, n)], "cumulative_residual") for n in range(1, 6)]
        dec = all(b < a for a, b in zip(cum, cum[1:]))
        ok &= dec
        parts.append(f"{c} " + "/".join(f"{v:.3g}" for v in cum))
    # Boundedness is a property of the full team; smaller teams leave areas unpatrolled and
    # keep accruing residual at a steady rate, which is reported but not required to plateau.
    shares = [mean_of(groups[("stationary", n)], "final_slope") / mean_of(groups[("stationary", n)], "initial_slope")
              for n in range(1, 6)]
    ok &= shares[-1] < 0.05
    parts.append("stationary final/initial slope by team size " + "/".join(f"{s:.3f}" for s in shares))
    assert report(4, ok, "; ".join(parts))


# ---------------------------------------------------------------- AC5

def test_ac5_tub_convergence():
    _, summary = run_experiment("tub_convergence", seeds=10)
    ok, parts = True, []
    for c in CASES:
        series = np.array(summary["groups"][f"case={c}"]["mean_series"]["mean_t_ub"])
        quarters = [float(np.nanmean(q)) for q in np.array_split(series, 4)]
        start_above = series[0] > quarters[-1]
        near_min = quarters[-1] <= 1.1 * min(quarters)
        ok &= start_above and near_min
        parts.append(f"{c} start={series[0]:.3g} quartiles=" + "/".join(f"{q:.3g}" for q in quarters))
    assert report(5, ok, "; ".join(parts))


# ---------------------------------------------------------------- AC6

def test_ac6_model_mismatch():
    results, _ = run_experiment("model_mismatch", seeds=10)
    groups = by_group(results, ("model",))
    matched = mean_of(groups[("matched",)], "cumulative_uncertainty")
    mismatched = mean_of(groups[("mismatched",)], "cumulative_uncertainty")
    ratio = mismatched / matched
    assert report(6, 1.05 <= ratio <= 2.5, f"cumulative uncertainty ratio {ratio:.3f} (matched {matched:.4g})")


# ---------------------------------------------------------------- AC7

def random_state(rng):
    q = rng.uniform(-50, 50, 2)
    a = rng.uniform(0, 2 * math.pi)
    p = np.r_[q - rng.uniform(0.5, 40) * np.array([math.cos(a), math.sin(a)]), rng.uniform(2, 40)]
    return np.r_[q, p, rng.uniform(0.05, 3), rng.uniform(0.2, 15), rng.uniform(0.1, 2 * math.pi - 0.1)]


def fd_jacobian(f, x, h=1e-6):
    eye = np.eye(len(x)) * h
    return np.column_stack([(f(x + e) - f(x - e)) / (2 * h) for e in eye])


def test_ac7_jacobians():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        x = random_state(rng)
        pose = x[2:5].copy()
        F = process_jacobian(x)
        H, _ = observation_jacobian(x)
        bad += not np.allclose(F, fd_jacobian(lambda v: process_model(v, 1.0, pose), x), rtol=1e-4, atol=1e-7)
        bad += not np.allclose(H, fd_jacobian(observation_model, x), rtol=1e-4, atol=1e-7)
    elapsed = time.perf_counter() - t0
    assert report(7, bad == 0 and elapsed < 30, f"{bad} mismatches over 1000 states in {elapsed:.1f}s")


# ---------------------------------------------------------------- AC8

def brute_tsp(pts):
    n = len(pts)
    return min(path_length((0, *p), pts) for p in itertools.permutations(range(1, n))) if n > 1 else 0.0


def test_ac8_tours():
    rng = np.random.default_rng(8)
    worse = 0
    for k in range(10_000):
        pts = rng.uniform(0, 100, (4 + k % 9, 2))
        cyc = list(rng.permutation(len(pts)))
        worse += path_length(two_opt(cyc, pts), pts) > path_length(cyc, pts) + 1e-9
    over_mst = over_opt = 0
    for k in range(200):
        n = 2 + k % 7
        pts = rng.uniform(0, 100, (n, 2))
        edges = build_mst(pts)
        length = path_length(hamiltonian_from_mst(edges, n), pts)
        over_mst += length > 2 * mst_weight(edges) + 1e-9
        over_opt += length > 2 * brute_tsp(pts) + 1e-9
    ok = worse == over_mst == over_opt == 0
    assert report(8, ok, f"two_opt increases {worse}/10000, >2*MST {over_mst}/200, >2*OPT {over_opt}/200")


# ---------------------------------------------------------------- AC9

def test_ac9_oracles():
    rng = np.random.default_rng(9)
    a, h, g = 0.98, 1.7, 0.9
    x, p, lam, gam = 0.3, 2.0, 0.05, 0.2
    X, P = np.array([x]), np.array([[p]])
    Lam, Gam = np.array([[lam]]), np.array([[gam]])
    F, H = np.array([[a]]), np.array([[h]])
    err = 0.0
    for z in rng.normal(0.0, 1.0, 100):
        x, p = a * x, a * p * a + lam
        d = z - h * x
        k = p * h / (h * p * h + gam)
        x_new = x + k * d
        p_new = (1 - k * h) ** 2 * p + k * k * gam
        lam = g * lam + (1 - g) * (k * d) ** 2
        gam = g * gam + (1 - g) * ((z - h * x_new) ** 2 + h * p * h)
        x, p = x_new, p_new
        X, P = kf_predict(X, P, F, Lam, lambda v: a * v)
        res = kf_update(X, P, np.array([z]), H, lambda v: h * v, Lam, Gam, g)
        X, P, Lam, Gam = res.x, res.P, res.Lam, res.Gam
        err = max(err, abs(X[0] - x), abs(P[0, 0] - p), abs(Lam[0, 0] - lam), abs(Gam[0, 0] - gam))
    worst, calls = 0.0, 0
    for _ in range(10_000):
        n = int(rng.integers(1, 60))
        L, v, w = rng.uniform(0, 1000), rng.uniform(1, 500), rng.uniform(1, 50)
        zeta = rng.uniform(0, 0.24) / max(n - 1, 1)
        t = tub_case3(L, v, zeta, n, w)
        if math.isfinite(t):
            calls += 1
            worst = max(worst, abs(case3_coefficients(L, v, zeta, n, w).residual(t)))
    ok = err < 1e-10 and worst < 1e-9
    assert report(9, ok, f"scalar filter max error {err:.2e}; root residual {worst:.2e} over {calls} calls")


# ---------------------------------------------------------------- AC10

def test_ac10_determinism():
    cfg = field_config(3, 0, 3, Case.MOVING_SPREADING, sim={"steps": 20})
    a = metrics.record_csv(run_scenario(cfg))
    b = metrics.record_csv(run_scenario(cfg))
    exp = get_experiment("uav_requirements")
    specs = exp.specs(seeds=2, max_areas=2, steps=10)
    one = metrics.trials_csv(run_trials(exp, specs, 1), exp.metrics)
    four = metrics.trials_csv(run_trials(exp, specs, 4), exp.metrics)
    ok = a == b and one == four
    assert report(10, ok, f"rerun identical={a == b}, 1-vs-4 workers identical={one == four}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
