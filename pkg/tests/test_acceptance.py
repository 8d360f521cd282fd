"""End-to-end acceptance checks, one test per criterion.

Each test records a ``PASS``/``FAIL`` line that is printed in the terminal
summary. Thresholds are the stated ones; nothing is loosened here.
"""
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import gp_naive, matrix_corner_min_vec, qp_enumerate
from robust_cbf.cbf import ensemble_constraints, nominal_ensemble_constraints
from robust_cbf.config import ExperimentConfig, load_config
from robust_cbf.gpdisturb import GpHyperParams, fit, predict_batch
from robust_cbf.harness import SafetyFilter, run_explore, run_swap, swap_formation
from robust_cbf.hullset import HullSet, IntervalMatrix, min_support, orthotope_vertices
from robust_cbf.qpsolve import QpProblem, kkt_residuals, solve
from robust_cbf.unisim import DisturbanceField, lookahead_controller_batch, step

SEEDS = range(20)
CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_c01_orthotope_equals_matrix_corners():
    rng = np.random.default_rng(101)
    worst, t0 = 0.0, time.perf_counter()
    for _ in range(1000):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        a, b = rng.uniform(-1, 1, (2, n, m))
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        g, u = rng.uniform(-2, 2, n), rng.uniform(-2, 2, m)
        got = float((orthotope_vertices(g, IntervalMatrix(lo, hi)) @ u).min())
        worst = max(worst, abs(got - matrix_corner_min_vec(g, lo, hi, u)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10.0
    record(1, "orthotope vs matrix corners", ok, f"max |diff| {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_c02_hull_minimum():
    rng = np.random.default_rng(102)
    bad, t0 = 0, time.perf_counter()
    for _ in range(1000):
        n, p = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        V = rng.uniform(-5, 5, (p, n))
        d = rng.uniform(-3, 3, n)
        val, idx = min_support(d, HullSet(V))
        w = rng.dirichlet(np.ones(p), size=20)
        scale = 1e-12 * (1 + np.abs(d).sum() * np.abs(V).max())
        # witness and reported value differ only by summation order
        if abs(val - float(d @ V[idx])) > scale or np.any((w @ V) @ d < val - scale):
            bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 5.0
    record(2, "hull minimum", ok, f"{bad} failures / 1000, {elapsed:.2f} s")
    assert ok


def test_c03_qp_matches_enumeration():
    rng = np.random.default_rng(103)
    worst_u, worst_kkt, missing, solver_time = 0.0, 0.0, 0, 0.0
    for _ in range(500):
        dim, rows = int(rng.integers(1, 4)), int(rng.integers(0, 7))
        w = rng.uniform(0.1, 2.0, dim)
        u_nom = rng.uniform(-2, 2, dim)
        u_max = rng.uniform(0.5, 2.0, dim)
        A = rng.normal(size=(rows, dim))
        b = A @ (rng.uniform(-0.5, 0.5, dim) * u_max) - rng.uniform(0, 0.5, rows)
        prob = QpProblem(w, u_nom, A, b, u_max)
        t0 = time.perf_counter()
        sol = solve(prob)
        solver_time += time.perf_counter() - t0
        ref, _ = qp_enumerate(w, u_nom, A, b, u_max)
        if ref is None or not sol.ok:
            missing += 1
            continue
        worst_u = max(worst_u, float(np.abs(sol.u_star - ref).max()))
        worst_kkt = max(worst_kkt, max(kkt_residuals(prob, sol.u_star, sol.multipliers).values()))
    ok = missing == 0 and worst_u <= 1e-6 and worst_kkt <= 1e-6 and solver_time < 30.0
    record(3, "QP vs enumeration", ok,
           f"max |du| {worst_u:.1e}, max KKT {worst_kkt:.1e}, unsolved {missing}, solver {solver_time:.2f} s")
    assert ok


def test_c04_gp_numerics():
    rng = np.random.default_rng(104)
    worst, var_ok, mono_ok = 0.0, True, True
    for _ in range(50):
        h = GpHyperParams(sigma_s=rng.uniform(0.05, 1.0), sigma_n=rng.uniform(0.01, 0.3),
                          widths=tuple(rng.uniform(0.5, 20.0, 3)))
        n = int(rng.integers(2, 21))
        X = rng.uniform(-1, 1, (n, 3))
        y = rng.normal(size=n) * h.sigma_s
        Q = rng.uniform(-1.2, 1.2, (10, 3))
        mu, var = predict_batch(fit(X, y, h), Q)
        mu0, var0 = gp_naive(X, y, Q, h.sigma_s, h.sigma_n, h.widths)
        worst = max(worst, float(np.abs(mu - mu0).max()), float(np.abs(var - var0).max()))
        var_ok &= bool(np.all(var >= 0) and np.all(var <= h.sigma_s ** 2))
        k = int(rng.integers(1, n))
        _, v_small = predict_batch(fit(X[:k], y[:k], h), Q)
        mono_ok &= bool(np.all(var <= v_small + 1e-12))
    ok = worst <= 1e-8 and var_ok and mono_ok
    record(4, "GP numerics", ok, f"max |diff| vs naive {worst:.1e}, variance bounds {var_ok}, monotone {mono_ok}")
    assert ok


def test_c05_zero_disturbance_reduces_to_nominal():
    cfg = replace(ExperimentConfig(), experiment="swap", robots=5).validate()
    params = cfg.barrier()
    bounds = (cfg.u_max, cfg.omega_max)
    x0, goals = swap_formation(cfg, np.random.default_rng(5))
    zero = np.zeros((cfg.robots, 3, 2))
    robust = SafetyFilter(cfg.robots, params, bounds, "robust")
    nominal = SafetyFilter(cfg.robots, params, bounds, "nominal")
    clean = DisturbanceField.none()
    xr, xn = x0.copy(), x0.copy()
    row_err, identical, engaged = 0.0, True, 0
    for _ in range(1000):
        A, b = ensemble_constraints(xr, zero, zero, params)
        An, bn = nominal_ensemble_constraints(xr, params)
        reps = A.shape[0] // An.shape[0]
        row_err = max(row_err, float(np.abs(A - np.repeat(An, reps, axis=0)).max()),
                      float(np.abs(b - np.repeat(bn, reps)).max()))
        ur_nom = lookahead_controller_batch(xr, goals, cfg.l_p, cfg.k_v, bounds, cfg.circulation)
        un_nom = lookahead_controller_batch(xn, goals, cfg.l_p, cfg.k_v, bounds, cfg.circulation)
        ur, _ = robust(xr, ur_nom, zero, zero)
        un, _ = nominal(xn, un_nom)
        identical &= bool(np.array_equal(ur, un))
        engaged += int(np.any(ur != ur_nom))
        xr, xn = step(xr, ur, clean, cfg.dt), step(xn, un, clean, cfg.dt)
    ok = row_err <= 1e-12 and identical and engaged > 0
    record(5, "zero-disturbance reduction", ok,
           f"max row diff {row_err:.1e}, bitwise equal {identical}, filter active on {engaged}/1000 steps")
    assert ok


def test_c06_oracle_disturbance_swap_is_safe():
    base = replace(ExperimentConfig(), experiment="swap", robots=5, duration=120.0, oracle_disturbance=True)
    t0 = time.perf_counter()
    results = [run_swap(replace(base, seed=s).validate()).report for s in SEEDS]
    elapsed = time.perf_counter() - t0
    vt = max(r.violation_time for r in results)
    worst = min(r.min_h for r in results)
    ok = vt == 0.0 and worst >= -1e-3 and elapsed < 300.0
    record(6, "oracle-disturbance swap safety", ok,
           f"max violation_time {vt}, worst min h {worst:.4f}, {elapsed:.0f} s for 20 seeds")
    assert ok


@pytest.fixture(scope="module")
def explore_runs():
    base = replace(ExperimentConfig(), experiment="explore", robots=3, duration=300.0, k_c=2.0)
    return [run_explore(replace(base, seed=s).validate()) for s in SEEDS]


def test_c07_learned_disturbance_safety(explore_runs):
    clean = sum(r.report.violation_count == 0 for r in explore_runs)
    worst = min(r.report.min_h for r in explore_runs)
    ok = clean >= 19
    record(7, "learned-disturbance explore safety", ok, f"{clean}/20 seeds without violation, worst min h {worst:.4f}")
    assert ok


def test_c08_estimation_coverage(explore_runs):
    covered, total, per_seed = 0, 0, []
    for run in explore_runs:
        recs = [r for r in run.log.probe_records if r["n_samples"] >= 200]
        assert recs, "fewer than 200 samples collected"
        last = max(r["batch"] for r in recs)
        rows = sorted((r for r in recs if r["batch"] == last), key=lambda r: (r["probe"], r["entry"]))
        inside = np.array([r["lo"] <= r["truth"] <= r["hi"] for r in rows]).reshape(-1, 3).all(axis=1)
        covered += int(inside.sum())
        total += inside.size
        per_seed.append(inside.mean())
    frac = covered / total
    ok = frac >= 0.9
    record(8, "estimation coverage", ok,
           f"{frac:.3f} of {total} probe states inside mu +- 2 sigma, worst seed {min(per_seed):.3f}")
    assert ok


def test_c09_robust_vs_nominal_separation():
    base = load_config(CONFIGS / "adversarial_swap.cfg")
    sep, dev_nom, dev_rob = 0, [], []
    for s in SEEDS:
        nom = run_swap(replace(base, seed=s, mode="nominal").validate()).report
        rob = run_swap(replace(base, seed=s, mode="robust").validate()).report
        sep += int(nom.violation_time > 0 and rob.violation_time == 0)
        dev_nom.append(nom.mean_dev)
        dev_rob.append(rob.mean_dev)
    mn, mr = float(np.mean(dev_nom)), float(np.mean(dev_rob))
    ok = sep >= 18 and mr >= mn
    record(9, "robust vs nominal separation", ok,
           f"separated on {sep}/20 seeds, mean_dev robust {mr:.3f} vs nominal {mn:.3f}")
    assert ok


def test_c10_seven_robot_tick_time():
    cfg = replace(ExperimentConfig(), experiment="swap", robots=7, duration=20.0, oracle_disturbance=True).validate()
    x0, _ = swap_formation(cfg, np.random.default_rng(0))
    A, _ = ensemble_constraints(x0, np.zeros((7, 3, 2)), np.zeros((7, 3, 2)), cfg.barrier())
    result = run_swap(cfg)
    median = float(np.median(result.log.wct_ms))
    shape_ok = A.shape == (336, 14) and result.log.u_star.shape[1:] == (7, 2)
    ok = shape_ok and median <= 5.0
    record(10, "N = 7 build + solve time", ok,
           f"{A.shape[0]} + 28 rows, 14 vars, median {median:.3f} ms over {result.log.n_steps} ticks")
    assert ok
