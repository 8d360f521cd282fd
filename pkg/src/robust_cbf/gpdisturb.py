"""Exact Gaussian-process regression of disturbance entries.

One zero-mean GP with a Gaussian (squared-exponential) kernel is trained per
nonzero disturbance entry. The estimator turns posterior means and standard
deviations into interval disturbance sets ``mu +- k_c sigma`` that the
barrier generators consume.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .hullset import IntervalMatrix, IntervalVector

__all__ = [
    "GpHyperParams",
    "GpModel",
    "DisturbanceEstimator",
    "Sample",
    "OnlineLearner",
    "UNICYCLE_ENTRIES",
    "kernel",
    "fit",
    "fit_shared",
    "predict",
    "predict_batch",
    "log_marginal_likelihood",
    "optimize_hyperparameters",
    "disturbance_interval",
    "disturbance_bounds",
    "additive_labels",
    "multiplicative_labels",
    "batch_update",
    "max_variance_index",
    "max_variance_target",
    "state_grid",
    "write_dataset_csv",
    "read_dataset_csv",
    "DATASET_COLUMNS",
]

# nonzero entries (row, col) of the 3x2 unicycle input disturbance
UNICYCLE_ENTRIES = ((0, 0), (1, 0), (2, 1))

DATASET_COLUMNS = ("x1", "x2", "theta", "v", "omega", "y11", "y21", "y32", "timestamp_s")

_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


@dataclass(frozen=True)
class GpHyperParams:
    """``sigma_s`` signal std, ``sigma_n`` noise std, ``widths`` diagonal of W."""

    sigma_s: float = 0.1
    sigma_n: float = 0.05
    widths: tuple = (1 / 0.3 ** 2, 1 / 0.3 ** 2, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(float(w) for w in np.atleast_1d(self.widths)))
        if not self.sigma_s > 0:
            raise ValueError(f"sigma_s must be positive, got {self.sigma_s}")
        if not self.sigma_n >= 0:
            raise ValueError(f"sigma_n must be nonnegative, got {self.sigma_n}")
        if any(not w > 0 for w in self.widths):
            raise ValueError("kernel widths must be positive")


def kernel(X1, X2, hyper: GpHyperParams) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    w = np.asarray(hyper.widths)
    if X1.shape[1] != w.shape[0] or X2.shape[1] != w.shape[0]:
        raise ValueError(f"inputs must have dimension {w.shape[0]}")
    s1 = X1 * np.sqrt(w)
    s2 = X2 * np.sqrt(w)
    sq = (s1 * s1).sum(1)[:, None] + (s2 * s2).sum(1)[None, :] - 2.0 * s1 @ s2.T
    np.maximum(sq, 0.0, out=sq)
    return hyper.sigma_s ** 2 * np.exp(-0.5 * sq)


@dataclass(frozen=True, eq=False)
class GpModel:
    inputs: np.ndarray
    targets: np.ndarray
    hyper: GpHyperParams
    chol: np.ndarray
    alpha_vec: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def _factor(K: np.ndarray) -> tuple[np.ndarray, float]:
    try:
        return cholesky(K, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    jitter = _JITTER_START
    while jitter <= _JITTER_MAX * (1 + 1e-9):
        try:
            return cholesky(K + jitter * np.eye(K.shape[0]), lower=True, check_finite=False), jitter
        except LinAlgError:
            jitter *= 10.0
    raise ValueError("kernel matrix is not positive definite even with 1e-4 jitter")


def _prepare(inputs, hyper):
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if X.shape[0] < 1:
        raise ValueError("need at least one training point")
    K = kernel(X, X, hyper)
    K[np.diag_indices_from(K)] += hyper.sigma_n ** 2
    return X, K


def fit(inputs, targets, hyper: GpHyperParams) -> GpModel:
    """Factor ``K + sigma_n^2 I`` and cache ``alpha = (K + sigma_n^2 I)^-1 y``."""
    X, K = _prepare(inputs, hyper)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    L, jitter = _factor(K)
    return GpModel(X, y, hyper, L, cho_solve((L, True), y, check_finite=False), jitter)


def fit_shared(inputs, targets, hyper: GpHyperParams) -> list[GpModel]:
    """Fit one GP per column of ``targets`` on common inputs; the factor is computed once."""
    X, K = _prepare(inputs, hyper)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    L, jitter = _factor(K)
    alpha = cho_solve((L, True), Y, check_finite=False)
    return [GpModel(X, Y[:, k].copy(), hyper, L, alpha[:, k].copy(), jitter) for k in range(Y.shape[1])]


def predict_batch(model: GpModel, queries) -> tuple[np.ndarray, np.ndarray]:
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if Q.shape[1] != model.inputs.shape[1]:
        raise ValueError(f"query dimension {Q.shape[1]} != training dimension {model.inputs.shape[1]}")
    ks = kernel(model.inputs, Q, model.hyper)  # (N, q)
    mu = ks.T @ model.alpha_vec
    v = solve_triangular(model.chol, ks, lower=True, check_finite=False)
    var = model.hyper.sigma_s ** 2 - (v * v).sum(axis=0)
    return mu, np.maximum(var, 0.0)


def predict(model: GpModel, query) -> tuple[float, float]:
    """Posterior mean and variance at one query point."""
    mu, var = predict_batch(model, np.asarray(query, dtype=float).reshape(1, -1))
    return float(mu[0]), float(var[0])


def log_marginal_likelihood(inputs, targets, hyper: GpHyperParams) -> float:
    model = fit(inputs, targets, hyper)
    y = model.targets
    return float(
        -0.5 * y @ model.alpha_vec
        - np.log(np.diag(model.chol)).sum()
        - 0.5 * y.shape[0] * math.log(2 * math.pi)
    )


def optimize_hyperparameters(inputs, targets, candidates: Iterable[GpHyperParams]) -> GpHyperParams:
    """Grid search: the candidate with the largest exact log marginal likelihood."""
    if np.atleast_2d(np.asarray(inputs)).shape[0] < 2:
        raise ValueError("need at least two training points")
    best, best_ll = None, -np.inf
    for cand in candidates:
        try:
            ll = log_marginal_likelihood(inputs, targets, cand)
        except ValueError:
            continue
        if ll > best_ll:
            best, best_ll = cand, ll
    if best is None:
        raise ValueError("no candidate hyperparameters could be factored")
    return best


@dataclass(frozen=True, eq=False)
class DisturbanceEstimator:
    """Immutable snapshot mapping states to interval disturbance sets.

    ``entries`` lists the disturbance entries carried by a GP each, as
    ``(row, col)`` for a multiplicative matrix of ``shape`` or ``(i,)`` for an
    additive vector. Until the first batch has been fitted ``models`` is
    empty and every entry reports ``prior_interval``.
    """

    shape: tuple = (3, 2)
    entries: tuple = UNICYCLE_ENTRIES
    k_c: float = 2.0
    prior_interval: tuple = (-0.3, 0.3)
    batch_size: int = 50
    hyper: GpHyperParams = field(default_factory=GpHyperParams)
    max_points: int = 2000
    models: tuple = ()
    inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)

    def __post_init__(self):
        if not self.k_c > 0:
            raise ValueError(f"k_c must be positive, got {self.k_c}")
        lo, hi = self.prior_interval
        if lo > hi:
            raise ValueError("prior interval has lo > hi")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    @property
    def fitted(self) -> bool:
        return bool(self.models)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def entry_stats(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and std of every entry at each query, shape ``(q, n_entries)``."""
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        if not self.models:
            return np.zeros((Q.shape[0], len(self.entries))), np.full((Q.shape[0], len(self.entries)), np.nan)
        mus = np.empty((Q.shape[0], len(self.models)))
        sds = np.empty_like(mus)
        # models fitted together share a factor; the posterior variance is then shared too
        ks_cache, sd_cache = {}, {}
        for k, model in enumerate(self.models):
            kkey = (id(model.inputs), id(model.hyper))
            if kkey not in ks_cache:
                ks_cache[kkey] = kernel(model.inputs, Q, model.hyper)
            ks = ks_cache[kkey]
            mus[:, k] = ks.T @ model.alpha_vec
            key = id(model.chol)
            if key not in sd_cache:
                v = solve_triangular(model.chol, ks, lower=True, check_finite=False)
                sd_cache[key] = np.sqrt(np.maximum(model.hyper.sigma_s ** 2 - (v * v).sum(axis=0), 0.0))
            sds[:, k] = sd_cache[key]
        return mus, sds

    def total_variance(self, queries) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        if not self.models:
            return np.full(Q.shape[0], len(self.entries) * self.hyper.sigma_s ** 2)
        _, sds = self.entry_stats(Q)
        return (sds * sds).sum(axis=1)


def disturbance_bounds(estimator: DisturbanceEstimator, queries) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized interval bounds, shape ``(q,) + estimator.shape``."""
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    lo = np.zeros((Q.shape[0],) + tuple(estimator.shape))
    hi = np.zeros_like(lo)
    if not estimator.models:
        plo, phi = estimator.prior_interval
        for e in estimator.entries:
            lo[(slice(None),) + tuple(e)] = plo
            hi[(slice(None),) + tuple(e)] = phi
        return lo, hi
    mus, sds = estimator.entry_stats(Q)
    for k, e in enumerate(estimator.entries):
        lo[(slice(None),) + tuple(e)] = mus[:, k] - estimator.k_c * sds[:, k]
        hi[(slice(None),) + tuple(e)] = mus[:, k] + estimator.k_c * sds[:, k]
    return lo, hi


def disturbance_interval(estimator: DisturbanceEstimator, query):
    """``mu +- k_c sigma`` per entry at one state, as an interval matrix or vector."""
    lo, hi = disturbance_bounds(estimator, query)
    if len(estimator.shape) == 1:
        return IntervalVector(lo[0], hi[0])
    return IntervalMatrix(lo[0], hi[0])


def additive_labels(measured_deriv, state, u, f, g) -> np.ndarray:
    """``x_dot_measured - f(x) - g(x) u``; ``f``/``g`` are callables or arrays."""
    x = np.asarray(state, dtype=float)
    fx = f(x) if callable(f) else f
    gx = g(x) if callable(g) else g
    fx = np.asarray(fx, dtype=float).reshape(-1)
    gx = np.asarray(gx, dtype=float).reshape(fx.shape[0], -1)
    return np.asarray(measured_deriv, dtype=float).reshape(-1) - fx - gx @ np.asarray(u, dtype=float).reshape(-1)


def multiplicative_labels(measured_deriv, state, u, v_min: float = 1e-3, omega_min: float = 1e-2):
    """Labels ``(y11, y21, y32)`` of the unicycle input disturbance, or ``None``.

    The labels divide by the inputs, so samples with ``|v| < v_min`` or
    ``|omega| < omega_min`` are discarded.
    """
    xd, yd, thd = np.asarray(measured_deriv, dtype=float)[:3]
    theta = float(np.asarray(state, dtype=float)[2])
    v, omega = (float(c) for c in np.asarray(u, dtype=float)[:2])
    if abs(v) < v_min or abs(omega) < omega_min:
        return None
    return (xd / v - math.cos(theta), yd / v - math.sin(theta), thd / omega - 1.0)


@dataclass(frozen=True)
class Sample:
    state: tuple
    u: tuple
    labels: tuple
    timestamp: float = 0.0


def _stack(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([s.state for s in samples], dtype=float).reshape(len(samples), -1)
    Y = np.array([s.labels for s in samples], dtype=float).reshape(len(samples), -1)
    return X, Y


def refit(estimator: DisturbanceEstimator, inputs, targets) -> DisturbanceEstimator:
    """New snapshot trained on exactly ``inputs``/``targets`` (oldest points beyond the cap dropped)."""
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.shape[0] > estimator.max_points:
        X = X[-estimator.max_points:]
        Y = Y[-estimator.max_points:]
    if X.shape[0] == 0:
        return replace(estimator, models=(), inputs=X, targets=Y)
    models = fit_shared(X, Y, estimator.hyper)
    return replace(estimator, models=tuple(models), inputs=X, targets=Y)


def batch_update(estimator: DisturbanceEstimator, samples: Sequence[Sample]) -> DisturbanceEstimator:
    """Refit on the cumulative dataset if at least ``batch_size`` new samples are given.

    Returns the input snapshot unchanged otherwise.
    """
    if len(samples) < estimator.batch_size:
        return estimator
    X, Y = _stack(samples)
    return refit(
        estimator,
        np.concatenate([estimator.inputs.reshape(-1, X.shape[1]), X]),
        np.concatenate([estimator.targets.reshape(-1, Y.shape[1]), Y]),
    )


class OnlineLearner:
    """Buffers labelled samples and publishes a refitted snapshot every batch.

    Consumers read :attr:`estimator`; a refit replaces it in one assignment,
    so a reader always sees a complete snapshot.
    """

    def __init__(self, estimator: DisturbanceEstimator):
        self.estimator = estimator
        self.buffer: list[Sample] = []
        self.history: list[Sample] = []
        self.batches = 0

    def add(self, sample: Sample) -> bool:
        """Buffer a sample; returns True when it triggered a refit."""
        self.buffer.append(sample)
        self.history.append(sample)
        if len(self.buffer) < self.estimator.batch_size:
            return False
        self.estimator = batch_update(self.estimator, self.buffer)
        self.buffer = []
        self.batches += 1
        return True


def state_grid(bounds, spatial_step: float = 0.2, heading_step: float = math.pi / 4) -> np.ndarray:
    """Discretization of ``(x1, x2, theta)`` over ``bounds = (xmin, xmax, ymin, ymax)``."""
    xmin, xmax, ymin, ymax = bounds
    xs = np.arange(xmin, xmax + 1e-9, spatial_step)
    ys = np.arange(ymin, ymax + 1e-9, spatial_step)
    ths = np.arange(-math.pi, math.pi - 1e-9, heading_step)
    X, Y, T = np.meshgrid(xs, ys, ths, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), T.ravel()], axis=1)


def max_variance_index(estimator: DisturbanceEstimator, grid, exclude=None) -> int:
    """Index of the grid state with the largest summed posterior variance (first on ties)."""
    G = np.atleast_2d(np.asarray(grid, dtype=float))
    if G.shape[0] == 0:
        raise ValueError("empty grid")
    var = estimator.total_variance(G)
    if exclude is not None:
        var = np.where(exclude, -np.inf, var)
        if not np.isfinite(var).any():
            raise ValueError("every grid state is excluded")
    return int(np.argmax(var))


def max_variance_target(estimator: DisturbanceEstimator, grid) -> np.ndarray:
    G = np.atleast_2d(np.asarray(grid, dtype=float))
    return G[max_variance_index(estimator, G)]


def write_dataset_csv(path, samples: Sequence[Sample]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for s in samples:
            w.writerow([*map(repr, map(float, s.state[:3])), *map(repr, map(float, s.u[:2])),
                        *map(repr, map(float, s.labels[:3])), repr(float(s.timestamp))])


def read_dataset_csv(path) -> list[Sample]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DATASET_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"dataset {path} lacks columns {sorted(missing)}")
        for row in reader:
            out.append(Sample(
                state=(float(row["x1"]), float(row["x2"]), float(row["theta"])),
                u=(float(row["v"]), float(row["omega"])),
                labels=(float(row["y11"]), float(row["y21"]), float(row["y32"])),
                timestamp=float(row["timestamp_s"]),
            ))
    return out
