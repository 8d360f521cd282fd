"""Closed-loop experiments: safety filter, exploration, circle swap, metrics and outputs."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cbf import BarrierParams, ensemble_constraints, nominal_ensemble_constraints
from .config import ExperimentConfig, dump_config
from .gpdisturb import (
    DisturbanceEstimator,
    OnlineLearner,
    Sample,
    disturbance_bounds,
    multiplicative_labels,
    read_dataset_csv,
    refit,
    state_grid,
    write_dataset_csv,
)
from .qpsolve import OPTIMAL, QpProblem, QpSolver
from .unisim import (
    DisturbanceField,
    finite_difference,
    lookahead_controller_batch,
    noisy_pose,
    pairwise_h,
    proportional_controller_batch,
    step,
    wrap_angle,
    write_trajectory_csv,
)

__all__ = [
    "SCHEMA_VERSION",
    "SafetyFilter",
    "OracleIntervals",
    "EstimatorIntervals",
    "RunLog",
    "MetricsReport",
    "ExperimentResult",
    "compute_metrics",
    "run_explore",
    "run_swap",
    "run_experiment",
    "calibration_samples",
    "estimator_from_samples",
    "estimator_from_dataset",
    "write_outputs",
]

SCHEMA_VERSION = 1


class SafetyFilter:
    """Builds the ensemble rows and solves the filter QP for one tick.

    ``mode="robust"`` uses the interval rows, ``mode="nominal"`` the
    disturbance-free ones. The objective weights ``(v, omega)`` by
    ``(1, l_p)``, which measures the change of the look-ahead velocity.
    """

    def __init__(self, n_robots: int, params: BarrierParams, input_bounds, mode: str = "robust"):
        if mode not in ("robust", "nominal"):
            raise ValueError(f"unknown filter mode {mode!r}")
        self.n = n_robots
        self.params = params
        self.mode = mode
        self.weight = np.tile([1.0, params.l_p], n_robots)
        self.u_max = np.tile(np.asarray(input_bounds, dtype=float), n_robots)
        self.solver = QpSolver()
        self.fallbacks = 0

    def rows(self, states, dm_lo=None, dm_hi=None):
        if self.mode == "nominal":
            return nominal_ensemble_constraints(states, self.params)
        return ensemble_constraints(states, dm_lo, dm_hi, self.params)

    def __call__(self, states, u_nom, dm_lo=None, dm_hi=None):
        """Return ``(u_star (N, 2), solution)``."""
        A, b = self.rows(states, dm_lo, dm_hi)
        sol = self.solver.solve(QpProblem(self.weight, np.asarray(u_nom).reshape(-1), A, b, self.u_max))
        u = sol.u_star
        if sol.status != OPTIMAL:
            # keep the best iterate, inside the actuator box
            self.fallbacks += 1
            u = np.clip(u, -self.u_max, self.u_max)
        return u.reshape(self.n, 2), sol


class OracleIntervals:
    """Ground-truth intervals: degenerate at the true value, widened near the region edge.

    Within ``margin`` of the edge a robot may change sides during a tick, so
    the interval spans the inside and outside values there.
    """

    def __init__(self, field_: DisturbanceField, margin: float = 0.01):
        self.field = field_
        self.margin = margin

    def __call__(self, states):
        x = np.atleast_2d(states)
        d = self.field.true_dm(x)
        lo = d.copy()
        hi = d.copy()
        near = self.field.distance_to_boundary(x) <= self.margin
        if near.any():
            inside_val = _inside_value(x[near], self.field)
            lo[near] = np.minimum(inside_val, 0.0)
            hi[near] = np.maximum(inside_val, 0.0)
        return lo, hi


def _inside_value(x, field_: DisturbanceField):
    k = field_.gain - 1.0
    out = np.zeros((x.shape[0], 3, 2))
    out[:, 0, 0] = k * np.cos(x[:, 2])
    out[:, 1, 0] = k * np.sin(x[:, 2])
    out[:, 2, 1] = k
    return out


class EstimatorIntervals:
    """Intervals ``mu +- k_c sigma`` from an estimator snapshot (prior before the first fit)."""

    def __init__(self, estimator: DisturbanceEstimator):
        self.estimator = estimator

    def __call__(self, states):
        return disturbance_bounds(self.estimator, states)


@dataclass
class RunLog:
    dt: float
    states: np.ndarray  # (T + 1, N, 3)
    u_nom: np.ndarray  # (T, N, 2)
    u_star: np.ndarray  # (T, N, 2)
    min_h: np.ndarray  # (T + 1,) ground truth at every logged state
    wct_ms: np.ndarray  # (T,) constraint build + solve
    maneuvers: int = 0
    qp_fallbacks: int = 0
    samples: list = field(default_factory=list)
    probe_records: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.u_star.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class MetricsReport:
    min_h_series: np.ndarray
    violation_time: float
    violation_count: int
    maneuvers_completed: int
    mean_dev: float
    max_dev: float
    qp_wct_mean_ms: float
    qp_wct_var_ms2: float
    min_h: float = math.inf
    qp_fallbacks: int = 0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return x if math.isfinite(x) else None

        return {
            "schema_version": self.schema_version,
            "steps": int(self.min_h_series.shape[0]),
            "violation_time": self.violation_time,
            "violation_count": self.violation_count,
            "maneuvers_completed": self.maneuvers_completed,
            "mean_dev": self.mean_dev,
            "max_dev": self.max_dev,
            "qp_wct_mean_ms": self.qp_wct_mean_ms,
            "qp_wct_var_ms2": self.qp_wct_var_ms2,
            "min_h": num(self.min_h),
            "qp_fallbacks": self.qp_fallbacks,
        }


def compute_metrics(log: RunLog) -> MetricsReport:
    """Metrics over the ``T`` post-step states and the ``T`` applied inputs."""
    if log.n_steps == 0:
        raise ValueError("empty log")
    series = np.asarray(log.min_h[1:], dtype=float)
    bad = series < 0
    dev = ((log.u_star - log.u_nom) ** 2).reshape(log.n_steps, -1).sum(axis=1)
    wct = np.asarray(log.wct_ms, dtype=float)
    return MetricsReport(
        min_h_series=series,
        violation_time=float(bad.sum() * log.dt),
        violation_count=int(bad.sum()),
        maneuvers_completed=int(log.maneuvers),
        mean_dev=float(dev.mean()),
        max_dev=float(dev.max()),
        qp_wct_mean_ms=float(wct.mean()),
        qp_wct_var_ms2=float(wct.var()),
        min_h=float(series.min()),
        qp_fallbacks=int(log.qp_fallbacks),
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: MetricsReport
    log: RunLog
    estimator: DisturbanceEstimator | None = None


def _min_h(states, delta, l_p) -> float:
    if states.shape[0] < 2:
        return math.inf
    return float(pairwise_h(states, delta, l_p).min())


class _Loop:
    """Shared tick bookkeeping for both experiments."""

    def __init__(self, cfg: ExperimentConfig, x0: np.ndarray):
        self.cfg = cfg
        self.n = x0.shape[0]
        self.steps = int(round(cfg.duration / cfg.dt))
        self.field = cfg.field()
        self.filter = SafetyFilter(self.n, cfg.barrier(), (cfg.u_max, cfg.omega_max), cfg.mode)
        self.states = np.empty((self.steps + 1, self.n, 3))
        self.states[0] = x0
        self.u_nom = np.zeros((self.steps, self.n, 2))
        self.u_star = np.zeros((self.steps, self.n, 2))
        self.min_h = np.empty(self.steps + 1)
        self.min_h[0] = _min_h(x0, cfg.delta, cfg.l_p)
        self.wct = np.zeros(self.steps)

    def tick(self, k: int, u_nom, intervals) -> np.ndarray:
        x = self.states[k]
        lo = hi = None
        if self.cfg.mode == "robust":
            lo, hi = intervals(x)
        t0 = time.perf_counter()
        u, _ = self.filter(x, u_nom, lo, hi)
        self.wct[k] = (time.perf_counter() - t0) * 1e3
        self.u_nom[k] = u_nom
        self.u_star[k] = u
        nxt = step(x, u, self.field, self.cfg.dt, self.cfg.integrator)
        self.states[k + 1] = nxt
        self.min_h[k + 1] = _min_h(nxt, self.cfg.delta, self.cfg.l_p)
        return nxt

    def log(self, **extra) -> RunLog:
        return RunLog(dt=self.cfg.dt, states=self.states, u_nom=self.u_nom, u_star=self.u_star,
                      min_h=self.min_h, wct_ms=self.wct, qp_fallbacks=self.filter.fallbacks, **extra)


def _clip_inputs(u, cfg: ExperimentConfig):
    return np.stack([np.clip(u[:, 0], -cfg.u_max, cfg.u_max), np.clip(u[:, 1], -cfg.omega_max, cfg.omega_max)], axis=1)


def _scatter_start(cfg: ExperimentConfig, rng: np.random.Generator, min_sep: float = 0.4) -> np.ndarray:
    xmin, xmax, ymin, ymax = cfg.bounds
    pad = 0.2
    pts = []
    for _ in range(10000):
        p = rng.uniform([xmin + pad, ymin + pad], [xmax - pad, ymax - pad])
        if all(np.hypot(*(p - q)) >= min_sep for q in pts):
            pts.append(p)
            if len(pts) == cfg.robots:
                break
    else:
        raise ValueError(f"robots: cannot place {cfg.robots} robots {min_sep} m apart in the arena")
    th = rng.uniform(-math.pi, math.pi, cfg.robots)
    return np.column_stack([np.array(pts), th])


def _intervals_for(cfg: ExperimentConfig, estimator: DisturbanceEstimator | None):
    if cfg.oracle_disturbance:
        return OracleIntervals(cfg.field(), cfg.oracle_margin)
    return EstimatorIntervals(estimator if estimator is not None else cfg.estimator())


def probe_states(cfg: ExperimentConfig) -> np.ndarray:
    heading = cfg.grid_resolution[1]
    ths = np.arange(-math.pi, math.pi - 1e-9, heading)
    return np.array([(x, y, th) for x, y in cfg.probes() for th in ths])


def _probe_rows(estimator: DisturbanceEstimator, probes: np.ndarray, field_: DisturbanceField, batch: int):
    lo, hi = disturbance_bounds(estimator, probes)
    truth = field_.true_dm(probes)
    if estimator.fitted:
        mus, sds = estimator.entry_stats(probes)
    else:
        mus = np.zeros((probes.shape[0], len(estimator.entries)))
        sds = np.full_like(mus, np.nan)
    rows = []
    for q, x in enumerate(probes):
        for k, e in enumerate(estimator.entries):
            rows.append({
                "batch": batch, "n_samples": estimator.n_samples, "probe": q,
                "x1": x[0], "x2": x[1], "theta": x[2], "entry": f"y{e[0] + 1}{e[1] + 1}",
                "mu": mus[q, k], "sd": sds[q, k], "lo": lo[(q,) + tuple(e)], "hi": hi[(q,) + tuple(e)],
                "truth": truth[(q,) + tuple(e)],
            })
    return rows


def run_explore(cfg: ExperimentConfig) -> ExperimentResult:
    """Learn the disturbance online while driving to max-variance states under the robust filter."""
    cfg = cfg.validate()
    if cfg.mode != "robust":
        raise ValueError("mode: the explore experiment runs the robust filter only")
    rng = np.random.default_rng(cfg.seed)
    x0 = _scatter_start(cfg, rng)
    loop = _Loop(cfg, x0)
    n, dt = loop.n, cfg.dt
    learner = OnlineLearner(cfg.estimator())
    oracle = OracleIntervals(loop.field, cfg.oracle_margin) if cfg.oracle_disturbance else None
    grid = state_grid(cfg.bounds, *cfg.grid_resolution)
    probes = probe_states(cfg)
    probe_records = _probe_rows(learner.estimator, probes, loop.field, 0)

    period = max(1, int(round(cfg.sample_period / dt)))
    window = max(1, int(round(cfg.sample_window / dt)))
    offsets = [(i * period) // n for i in range(n)]
    timeout = int(round(cfg.target_timeout / dt))
    phase = 2 * math.pi * np.arange(n) / n

    grid_var = learner.estimator.total_variance(grid)
    targets = np.full((n, 3), np.nan)
    assigned = np.zeros(n, dtype=int)

    def assign(i: int, k: int):
        excl = np.hypot(grid[:, 0] - loop.states[k, i, 0], grid[:, 1] - loop.states[k, i, 1]) < cfg.target_exclusion
        for j in range(n):
            if j != i and np.isfinite(targets[j, 0]):
                excl |= np.hypot(grid[:, 0] - targets[j, 0], grid[:, 1] - targets[j, 1]) < cfg.target_exclusion
        var = np.where(excl, -np.inf, grid_var)
        if not np.isfinite(var).any():
            var = grid_var
        targets[i] = grid[int(np.argmax(var))]
        assigned[i] = k

    for i in range(n):
        assign(i, 0)

    for k in range(loop.steps):
        x = loop.states[k]
        for i in range(n):
            if np.hypot(*(x[i, :2] - targets[i, :2])) < cfg.target_tol or k - assigned[i] >= timeout:
                assign(i, k)
        u_nom = proportional_controller_batch(x, targets[:, :2], (cfg.k_v, cfg.k_omega), (cfg.u_max, cfg.omega_max))
        if cfg.dither_amp:
            u_nom[:, 1] += cfg.dither_amp * np.sin(2 * math.pi * k * dt / cfg.dither_period + phase)
        u_nom = _clip_inputs(u_nom, cfg)
        intervals = oracle if oracle is not None else EstimatorIntervals(learner.estimator)
        loop.tick(k, u_nom, intervals)

        kk = k + 1
        refit_now = False
        for i in range(n):
            if kk < window or (kk - offsets[i]) % period:
                continue
            a = noisy_pose(loop.states[kk - window, i], cfg.noise_sigma, rng)
            b = noisy_pose(loop.states[kk, i], cfg.noise_sigma, rng)
            mid = noisy_pose(loop.states[kk - window // 2, i], cfg.noise_sigma, rng)
            u_mean = loop.u_star[kk - window:kk, i].mean(axis=0)
            if abs(u_mean[0]) < cfg.sample_min_v or abs(u_mean[1]) < cfg.sample_min_omega:
                continue
            labels = multiplicative_labels(finite_difference(a, b, window * dt), mid, u_mean)
            if labels is None:
                continue
            refit_now |= learner.add(Sample(tuple(mid), tuple(u_mean), labels, kk * dt))
        if refit_now:
            # snapshot swap between ticks; new targets follow the new variance map
            grid_var = learner.estimator.total_variance(grid)
            probe_records += _probe_rows(learner.estimator, probes, loop.field, learner.batches)
            for i in range(n):
                assign(i, kk if kk <= loop.steps - 1 else k)

    log = loop.log(samples=list(learner.history), probe_records=probe_records)
    return ExperimentResult(cfg, compute_metrics(log), log, learner.estimator)


def swap_formation(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Start poses on a circle (facing the centre, jittered) and their antipodal goals."""
    n = cfg.robots
    phi = 2 * math.pi * np.arange(n) / n + rng.uniform(-0.5, 0.5, n) * cfg.start_jitter
    pos = cfg.circle_radius * np.column_stack([np.cos(phi), np.sin(phi)])
    th = wrap_angle(phi + math.pi + rng.uniform(-0.5, 0.5, n) * cfg.start_jitter)
    return np.column_stack([pos, th]), -pos


def run_swap(cfg: ExperimentConfig, estimator: DisturbanceEstimator | None = None) -> ExperimentResult:
    """Robots repeatedly drive to the antipode of their circle position.

    Robust mode takes its intervals from the oracle, from ``estimator``,
    from ``cfg.dataset``, from ``cfg.calibration_samples`` offline samples
    or from the prior, in that order.
    """
    cfg = cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    x0, goals = swap_formation(cfg, rng)
    if estimator is None and cfg.mode == "robust" and not cfg.oracle_disturbance:
        if cfg.dataset:
            estimator = estimator_from_dataset(cfg, cfg.dataset)
        elif cfg.calibration_samples:
            # separate stream so the formation does not depend on the calibration size
            cal_rng = np.random.default_rng([cfg.seed, 1])
            estimator = estimator_from_samples(cfg, calibration_samples(cfg, cfg.calibration_samples, cal_rng))
    intervals = _intervals_for(cfg, estimator)
    loop = _Loop(cfg, x0)
    gains, bounds = (cfg.k_v, cfg.k_omega), (cfg.u_max, cfg.omega_max)
    maneuvers = 0
    for k in range(loop.steps):
        x = loop.states[k]
        if cfg.swap_controller == "lookahead":
            u_nom = lookahead_controller_batch(x, goals, cfg.l_p, cfg.k_v, bounds, cfg.circulation)
        else:
            u_nom = proportional_controller_batch(x, goals, gains, bounds)
        nxt = loop.tick(k, u_nom, intervals)
        if np.all(np.hypot(nxt[:, 0] - goals[:, 0], nxt[:, 1] - goals[:, 1]) < cfg.goal_tol):
            maneuvers += 1
            goals = -goals
    log = loop.log(maneuvers=maneuvers)
    est = intervals.estimator if isinstance(intervals, EstimatorIntervals) else None
    return ExperimentResult(cfg, compute_metrics(log), log, est)


def calibration_samples(cfg: ExperimentConfig, n_samples: int, rng: np.random.Generator) -> list[Sample]:
    """Offline data set: short constant-input runs from random poses through the true field.

    Each run lasts ``sample_window`` and is labelled exactly like the online
    samples (noisy end poses, finite difference, midpoint pose).
    """
    cfg = cfg.validate()
    field_ = cfg.field()
    xmin, xmax, ymin, ymax = cfg.bounds
    window = max(1, int(round(cfg.sample_window / cfg.dt)))
    x = np.column_stack([rng.uniform(xmin, xmax, n_samples), rng.uniform(ymin, ymax, n_samples),
                         rng.uniform(-math.pi, math.pi, n_samples)])
    v = rng.uniform(max(cfg.sample_min_v, 0.5 * cfg.u_max), cfg.u_max, n_samples) * rng.choice([-1.0, 1.0], n_samples)
    w = rng.uniform(max(cfg.sample_min_omega, 0.25 * cfg.omega_max), cfg.omega_max, n_samples) * rng.choice([-1.0, 1.0], n_samples)
    u = np.column_stack([v, w])
    traj = [x]
    for _ in range(window):
        traj.append(step(traj[-1], u, field_, cfg.dt, cfg.integrator))
    out = []
    for i in range(n_samples):
        a = noisy_pose(traj[0][i], cfg.noise_sigma, rng)
        b = noisy_pose(traj[-1][i], cfg.noise_sigma, rng)
        mid = noisy_pose(traj[window // 2][i], cfg.noise_sigma, rng)
        labels = multiplicative_labels(finite_difference(a, b, window * cfg.dt), mid, u[i])
        if labels is not None:
            out.append(Sample(tuple(mid), tuple(u[i]), labels, float(i)))
    return out


def estimator_from_samples(cfg: ExperimentConfig, samples) -> DisturbanceEstimator:
    X = np.array([s.state for s in samples], dtype=float).reshape(-1, 3)
    Y = np.array([s.labels for s in samples], dtype=float).reshape(-1, 3)
    return refit(cfg.estimator(), X, Y)


def estimator_from_dataset(cfg: ExperimentConfig, path) -> DisturbanceEstimator:
    return estimator_from_samples(cfg, read_dataset_csv(path))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg = cfg.validate()
    return run_explore(cfg) if cfg.experiment == "explore" else run_swap(cfg)


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_outputs(result: ExperimentResult, out_dir) -> dict:
    """Write the trajectory, metrics, series and (explore) dataset files; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log, cfg = result.log, result.config
    stride = max(1, cfg.log_stride)
    idx = np.arange(0, log.n_steps, stride)
    paths = {
        "trajectory": out / "trajectory.csv",
        "metrics": out / "metrics.json",
        "min_h_series": out / "min_h_series.csv",
        "config": out / "config.txt",
    }
    write_trajectory_csv(paths["trajectory"], log.times[idx], log.states[idx], log.u_nom[idx], log.u_star[idx],
                         log.min_h[idx])
    _write_rows(paths["min_h_series"], ("t", "min_h"),
                ((f"{t:.2f}", repr(float(h))) for t, h in zip(log.times[1:], log.min_h[1:])))
    paths["config"].write_text(dump_config(cfg))
    if cfg.experiment == "explore":
        paths["dataset"] = out / "dataset.csv"
        paths["estimates"] = out / "estimate_series.csv"
        write_dataset_csv(paths["dataset"], log.samples)
        cols = ("batch", "n_samples", "probe", "x1", "x2", "theta", "entry", "mu", "sd", "lo", "hi", "truth")
        _write_rows(paths["estimates"], cols, ([r[c] for c in cols] for r in log.probe_records))
    metrics = result.report.to_dict()
    metrics.update({"experiment": cfg.experiment, "mode": cfg.mode, "seed": cfg.seed, "robots": cfg.robots,
                    "duration": cfg.duration, "oracle_disturbance": cfg.oracle_disturbance,
                    "n_samples": len(log.samples), "min_h_series_file": paths["min_h_series"].name})
    paths["metrics"].write_text(json.dumps(metrics, indent=2) + "\n")
    return {k: str(v) for k, v in paths.items()}
