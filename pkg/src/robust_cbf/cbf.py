"""Barrier functions and robust barrier-certificate rows.

Every generator returns rows of the affine inequality ``coeffs . u >= rhs``.
The generic generators work for any control-affine system ``f + g u``; the
pairwise functions specialize them to unicycles observed through a
look-ahead point, with a multiplicative interval disturbance on the input
matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .hullset import (
    HullSet,
    IntervalMatrix,
    IntervalVector,
    interval_vector_vertices,
    min_support,
    orthotope_vertices,
    _corner_bits,
)

__all__ = [
    "ClassKappa",
    "LinearConstraint",
    "BarrierParams",
    "collision_barrier",
    "collision_barrier_grad",
    "lookahead_output",
    "output_dynamics",
    "nominal_output_matrix",
    "nominal_constraint",
    "additive_constraint",
    "multiplicative_constraints",
    "orthotope_constraints",
    "pairwise_constraints",
    "nominal_pairwise_constraint",
    "assemble_ensemble",
    "ensemble_constraints",
    "nominal_ensemble_constraints",
    "pair_indices",
]

# Entries of the 3x2 unicycle disturbance that must vanish: angular velocity
# cannot move the robot in the plane, linear velocity cannot turn it.
_UNICYCLE_ZERO_ENTRIES = ((0, 1), (1, 1), (2, 0))


@dataclass(frozen=True)
class ClassKappa:
    """Extended class-K function ``alpha(s) = gamma * s**exponent``.

    ``exponent`` must be odd so that alpha stays strictly increasing on the
    whole real line.
    """

    gamma: float
    exponent: int = 3

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.exponent < 1 or self.exponent % 2 == 0:
            raise ValueError(f"exponent must be a positive odd integer, got {self.exponent}")

    def __call__(self, s):
        return self.gamma * np.power(s, self.exponent)


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """One row ``coeffs . u >= rhs``."""

    coeffs: np.ndarray
    rhs: float

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "rhs", float(self.rhs))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    def slack(self, u) -> float:
        return float(self.coeffs @ np.asarray(u, dtype=float) - self.rhs)


@dataclass(frozen=True)
class BarrierParams:
    """Collision barrier settings: robot diameter, look-ahead distance, class-K gain."""

    delta: float = 0.12
    l_p: float = 0.03
    kappa: ClassKappa = ClassKappa(700.0)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.l_p > 0:
            raise ValueError(f"l_p must be positive, got {self.l_p}")


def collision_barrier(p_i, p_j, delta: float) -> float:
    """``||p_i - p_j||^2 - delta^2``; nonnegative means no contact."""
    d = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    return float(d @ d - delta * delta)


def collision_barrier_grad(p_i, p_j) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the collision barrier with respect to ``p_i`` and ``p_j``."""
    d = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    return 2.0 * d, -2.0 * d


def lookahead_output(state, l_p: float) -> np.ndarray:
    x1, x2, theta = np.asarray(state, dtype=float)[:3]
    return np.array([x1 + l_p * np.cos(theta), x2 + l_p * np.sin(theta)])


def _scaled(k, lo, hi):
    a = k * lo
    b = k * hi
    return np.minimum(a, b), np.maximum(a, b)


def _output_bounds(c, s, l_p, dlo, dhi):
    """Bounds of ``R(theta) L + [I 0] D`` entrywise.

    ``c``, ``s`` have shape ``(...)`` and ``dlo``/``dhi`` shape ``(..., 3, 2)``.
    Returns lo, hi of shape ``(..., 2, 2)``.
    """
    ls = -l_p * s
    lc = l_p * c
    lo = np.empty(dlo.shape[:-2] + (2, 2))
    hi = np.empty_like(lo)
    d31 = _scaled(ls, dlo[..., 2, 0], dhi[..., 2, 0])
    lo[..., 0, 0] = c + dlo[..., 0, 0] + d31[0]
    hi[..., 0, 0] = c + dhi[..., 0, 0] + d31[1]
    d31 = _scaled(lc, dlo[..., 2, 0], dhi[..., 2, 0])
    lo[..., 1, 0] = s + dlo[..., 1, 0] + d31[0]
    hi[..., 1, 0] = s + dhi[..., 1, 0] + d31[1]
    one_lo = 1.0 + dlo[..., 2, 1]
    one_hi = 1.0 + dhi[..., 2, 1]
    t = _scaled(ls, one_lo, one_hi)
    lo[..., 0, 1] = t[0] + dlo[..., 0, 1]
    hi[..., 0, 1] = t[1] + dhi[..., 0, 1]
    t = _scaled(lc, one_lo, one_hi)
    lo[..., 1, 1] = t[0] + dlo[..., 1, 1]
    hi[..., 1, 1] = t[1] + dhi[..., 1, 1]
    return lo, hi


def _check_unicycle_sparsity(dm: IntervalMatrix) -> None:
    if dm.shape != (3, 2):
        raise ValueError(f"unicycle disturbance must be 3x2, got {dm.shape}")
    for r, c in _UNICYCLE_ZERO_ENTRIES:
        if dm.lo[r, c] != 0.0 or dm.hi[r, c] != 0.0:
            raise ValueError(f"disturbance entry ({r + 1},{c + 1}) must be identically zero")


def output_dynamics(state, dm: IntervalMatrix, l_p: float) -> IntervalMatrix:
    """Interval input matrix of the look-ahead point, ``p_dot in G_p u``."""
    _check_unicycle_sparsity(dm)
    theta = float(np.asarray(state, dtype=float)[2])
    lo, hi = _output_bounds(np.cos(theta), np.sin(theta), l_p, dm.lo, dm.hi)
    return IntervalMatrix(lo, hi)


def nominal_output_matrix(state, l_p: float) -> np.ndarray:
    """``R(theta) diag(1, l_p)``: the undisturbed look-ahead input matrix."""
    theta = float(np.asarray(state, dtype=float)[2])
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -l_p * s], [s, l_p * c]])


def _as_matrix(g, n: int) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        g = g.reshape(1, 1)
    elif g.ndim == 1:
        g = g.reshape(n, -1)
    if g.shape[0] != n:
        raise ValueError(f"input matrix has {g.shape[0]} rows, gradient has dimension {n}")
    return g


def _grad(grad_h) -> np.ndarray:
    return np.atleast_1d(np.asarray(grad_h, dtype=float)).reshape(-1)


def nominal_constraint(grad_h, drift_term: float, g_mat, kappa: ClassKappa, h_val: float) -> LinearConstraint:
    """Undisturbed certificate ``grad_h (f + g u) >= -alpha(h)``."""
    gh = _grad(grad_h)
    g = _as_matrix(g_mat, gh.shape[0])
    return LinearConstraint(gh @ g, -kappa(h_val) - drift_term)


def additive_constraint(grad_h, drift_term: float, g_mat, hull: HullSet, kappa: ClassKappa, h_val: float) -> LinearConstraint:
    """Robust row for ``x_dot in f + g u + co(hull)``.

    The worst disturbance is the hull vertex minimizing ``grad_h . psi``; it
    does not depend on ``u`` so a single row suffices.
    """
    gh = _grad(grad_h)
    g = _as_matrix(g_mat, gh.shape[0])
    worst, _ = min_support(gh, hull)
    return LinearConstraint(gh @ g, -kappa(h_val) - worst - drift_term)


def multiplicative_constraints(grad_h, drift_term: float, g_mat, hull: HullSet, kappa: ClassKappa, h_val: float) -> list[LinearConstraint]:
    """One row per vertex matrix for ``x_dot in f + (g + co(hull)) u``."""
    gh = _grad(grad_h)
    g = _as_matrix(g_mat, gh.shape[0])
    if hull.point_shape != g.shape:
        raise ValueError(f"hull vertices have shape {hull.point_shape}, input matrix is {g.shape}")
    rhs = -kappa(h_val) - drift_term
    coeffs = np.einsum("i,pij->pj", gh, g[None, :, :] + hull.vertices)
    return [LinearConstraint(c, rhs) for c in coeffs]


def orthotope_constraints(grad_h, drift_term: float, g_mat, dm: IntervalMatrix, kappa: ClassKappa, h_val: float) -> list[LinearConstraint]:
    """``2**m`` rows for an interval-matrix disturbance on the input matrix.

    Equivalent to the ``2**(n m)`` corner-matrix rows of
    :func:`multiplicative_constraints` but only enumerates the corners of the
    box ``grad_h^T D``.
    """
    gh = _grad(grad_h)
    g = _as_matrix(g_mat, gh.shape[0])
    if dm.shape != g.shape:
        raise ValueError(f"interval matrix is {dm.shape}, input matrix is {g.shape}")
    base = gh @ g
    rhs = -kappa(h_val) - drift_term
    return [LinearConstraint(base + phi, rhs) for phi in orthotope_vertices(gh, dm)]


def _embed(row4: np.ndarray, n_robots: int, i: int, j: int) -> np.ndarray:
    out = np.zeros(2 * n_robots)
    out[2 * i:2 * i + 2] = row4[:2]
    out[2 * j:2 * j + 2] = row4[2:]
    return out


def _check_pair(n_robots: int, i: int, j: int) -> None:
    if i == j:
        raise ValueError("a robot cannot be paired with itself")
    if not (0 <= i < n_robots and 0 <= j < n_robots):
        raise ValueError(f"robot indices ({i}, {j}) out of range for {n_robots} robots")


def pairwise_constraints(state_i, state_j, dm_i: IntervalMatrix, dm_j: IntervalMatrix,
                         params: BarrierParams, n_robots: int, i: int, j: int) -> list[LinearConstraint]:
    """The 16 robust collision-avoidance rows for robots ``i`` and ``j``."""
    _check_pair(n_robots, i, j)
    p_i = lookahead_output(state_i, params.l_p)
    p_j = lookahead_output(state_j, params.l_p)
    h = collision_barrier(p_i, p_j, params.delta)
    g_i, g_j = collision_barrier_grad(p_i, p_j)
    gp_i = output_dynamics(state_i, dm_i, params.l_p)
    gp_j = output_dynamics(state_j, dm_j, params.l_p)
    # interval row [g_i^T G_p(x_i), g_j^T G_p(x_j)]
    lo = np.empty(4)
    hi = np.empty(4)
    for k, (g, gp) in enumerate(((g_i, gp_i), (g_j, gp_j))):
        a = g[:, None] * gp.lo
        b = g[:, None] * gp.hi
        lo[2 * k:2 * k + 2] = np.minimum(a, b)[0] + np.minimum(a, b)[1]
        hi[2 * k:2 * k + 2] = np.maximum(a, b)[0] + np.maximum(a, b)[1]
    corners = interval_vector_vertices(IntervalVector(lo, hi)).vertices
    rhs = -params.kappa(h)
    return [LinearConstraint(_embed(q, n_robots, i, j), rhs) for q in corners]


def nominal_pairwise_constraint(state_i, state_j, params: BarrierParams, n_robots: int, i: int, j: int) -> LinearConstraint:
    """Single non-robust collision row, the zero-disturbance limit."""
    _check_pair(n_robots, i, j)
    p_i = lookahead_output(state_i, params.l_p)
    p_j = lookahead_output(state_j, params.l_p)
    h = collision_barrier(p_i, p_j, params.delta)
    g_i, g_j = collision_barrier_grad(p_i, p_j)
    gi = nominal_output_matrix(state_i, params.l_p)
    gj = nominal_output_matrix(state_j, params.l_p)
    row = np.concatenate([g_i[0] * gi[0] + g_i[1] * gi[1], g_j[0] * gj[0] + g_j[1] * gj[1]])
    return LinearConstraint(_embed(row, n_robots, i, j), -params.kappa(h))


def assemble_ensemble(pair_rows: Sequence[Sequence[LinearConstraint]], dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-pair row lists into ``A u >= b``."""
    rows = [r for block in pair_rows for r in block]
    if not rows:
        n = 0 if dim is None else dim
        return np.zeros((0, n)), np.zeros(0)
    width = rows[0].dim
    if any(r.dim != width for r in rows):
        raise ValueError("constraint rows disagree on the ensemble input dimension")
    return np.array([r.coeffs for r in rows]), np.array([r.rhs for r in rows])


@lru_cache(maxsize=64)
def pair_indices(n_robots: int) -> tuple[np.ndarray, np.ndarray]:
    """``(i, j)`` with ``i < j`` in nested order: (0,1), (0,2), ..., (1,2), ...

    The returned arrays are cached and read-only.
    """
    I, J = np.triu_indices(n_robots, 1)
    I.setflags(write=False)
    J.setflags(write=False)
    return I, J


def _pair_geometry(states, params: BarrierParams):
    x = np.asarray(states, dtype=float)
    c = np.cos(x[:, 2])
    s = np.sin(x[:, 2])
    p = np.stack([x[:, 0] + params.l_p * c, x[:, 1] + params.l_p * s], axis=1)
    I, J = pair_indices(x.shape[0])
    d = p[I] - p[J]
    h = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] - params.delta * params.delta
    return c, s, I, J, 2.0 * d, h


_CORNERS4 = _corner_bits(4)


def ensemble_constraints(states, dm_lo, dm_hi, params: BarrierParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized robust ensemble: same rows, same order as stacking :func:`pairwise_constraints`.

    ``dm_lo``/``dm_hi`` have shape ``(N, 3, 2)`` and are assumed to follow the
    unicycle sparsity pattern.
    """
    x = np.asarray(states, dtype=float)
    n = x.shape[0]
    c, s, I, J, g, h = _pair_geometry(x, params)
    npairs = I.shape[0]
    if npairs == 0:
        return np.zeros((0, 2 * n)), np.zeros(0)
    glo, ghi = _output_bounds(c, s, params.l_p, np.asarray(dm_lo, float), np.asarray(dm_hi, float))
    lo = np.empty((npairs, 4))
    hi = np.empty((npairs, 4))
    for half, idx, sign in ((0, I, 1.0), (2, J, -1.0)):
        gg = sign * g  # gradient w.r.t. the robot's own look-ahead point
        a = gg[:, :, None] * glo[idx]
        b = gg[:, :, None] * ghi[idx]
        mn = np.minimum(a, b)
        mx = np.maximum(a, b)
        lo[:, half:half + 2] = mn[:, 0] + mn[:, 1]
        hi[:, half:half + 2] = mx[:, 0] + mx[:, 1]
    rows = np.where(_CORNERS4[None, :, :], hi[:, None, :], lo[:, None, :])
    A = np.zeros((npairs, 16, n, 2))
    P = np.arange(npairs)
    A[P, :, I, :] = rows[:, :, 0:2]
    A[P, :, J, :] = rows[:, :, 2:4]
    b = np.repeat(-params.kappa(h), 16)
    return A.reshape(16 * npairs, 2 * n), b


def nominal_ensemble_constraints(states, params: BarrierParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized non-robust ensemble, one row per pair."""
    x = np.asarray(states, dtype=float)
    n = x.shape[0]
    c, s, I, J, g, h = _pair_geometry(x, params)
    npairs = I.shape[0]
    if npairs == 0:
        return np.zeros((0, 2 * n)), np.zeros(0)
    G = np.empty((n, 2, 2))
    G[:, 0, 0] = c
    G[:, 1, 0] = s
    G[:, 0, 1] = -params.l_p * s
    G[:, 1, 1] = params.l_p * c
    A = np.zeros((npairs, n, 2))
    P = np.arange(npairs)
    gi = g
    gj = -g
    A[P, I, :] = gi[:, 0, None] * G[I, 0, :] + gi[:, 1, None] * G[I, 1, :]
    A[P, J, :] = gj[:, 0, None] * G[J, 0, :] + gj[:, 1, None] * G[J, 1, :]
    return A.reshape(npairs, 2 * n), -params.kappa(h)
