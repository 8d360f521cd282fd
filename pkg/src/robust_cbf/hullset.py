"""Finite vertex sets and interval boxes used to model disturbances.

A disturbance set is always handled through a finite collection of points
whose convex hull is the set. Minimizing a linear functional over the hull
only requires visiting the points, which is what keeps the robust barrier
conditions finitely checkable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "MAX_ENUMERATED_ENTRIES",
    "HullSet",
    "IntervalVector",
    "IntervalMatrix",
    "min_support",
    "interval_vector_vertices",
    "interval_matrix_vertices",
    "orthotope_intervals",
    "orthotope_vertices",
    "union_vertices",
]

# 2**20 vertices is the most any enumeration here will produce.
MAX_ENUMERATED_ENTRIES = 20


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HullSet:
    """Points ``vertices[0..p-1]`` whose convex hull is the modelled set.

    Vertices may be vectors (shape ``(p, d)``) or matrices (shape
    ``(p, n, m)``) for multiplicative disturbances on an input matrix.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim < 2 or v.shape[0] < 1:
            raise ValueError("a hull needs at least one vertex")
        object.__setattr__(self, "vertices", _frozen(v))

    @property
    def size(self) -> int:
        return self.vertices.shape[0]

    @property
    def point_shape(self) -> tuple:
        return self.vertices.shape[1:]

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True, eq=False)
class IntervalVector:
    """Entrywise box ``[lo_i, hi_i]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("interval with lo > hi")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "IntervalVector":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def degenerate(cls, values) -> "IntervalVector":
        v = np.asarray(values, dtype=float)
        return cls(v, v.copy())

    def __len__(self) -> int:
        return self.lo.shape[0]

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


@dataclass(frozen=True, eq=False)
class IntervalMatrix:
    """Entrywise box over ``n x m`` matrices."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float)
        hi = np.array(self.hi, dtype=float)
        if lo.ndim != 2 or lo.shape != hi.shape:
            raise ValueError(f"bounds must be matching 2-D arrays, got {lo.shape} and {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("interval with lo > hi")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    @classmethod
    def zeros(cls, n: int, m: int) -> "IntervalMatrix":
        return cls(np.zeros((n, m)), np.zeros((n, m)))

    @classmethod
    def degenerate(cls, values) -> "IntervalMatrix":
        v = np.asarray(values, dtype=float)
        return cls(v, v.copy())

    @property
    def shape(self) -> tuple:
        return self.lo.shape

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


def min_support(direction, hull: HullSet) -> tuple[float, int]:
    """Minimum of ``direction . psi`` over the hull and the first vertex attaining it.

    Multiplicative (matrix-valued) vertices are contracted against
    ``direction`` over all their trailing axes, so the direction must have
    the hull's point shape.
    """
    d = np.asarray(direction, dtype=float)
    if d.ndim == 0:
        d = d.reshape(1)
    if d.shape != hull.point_shape:
        raise ValueError(f"direction shape {d.shape} does not match hull points {hull.point_shape}")
    flat = hull.vertices.reshape(hull.size, -1)
    values = flat @ d.reshape(-1)
    k = int(np.argmin(values))  # argmin returns the first minimizer
    return float(values[k]), k


def _corner_bits(count: int) -> np.ndarray:
    if count > MAX_ENUMERATED_ENTRIES:
        raise ValueError(
            f"refusing to enumerate 2**{count} vertices (cap is 2**{MAX_ENUMERATED_ENTRIES})"
        )
    k = np.arange(1 << count)
    shifts = np.arange(count - 1, -1, -1)
    return ((k[:, None] >> shifts[None, :]) & 1).astype(bool)


def _box_corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # Binary counting, entry 0 is the most significant bit; bit 0 -> lo, 1 -> hi.
    bits = _corner_bits(lo.shape[0])
    return np.where(bits, hi[None, :], lo[None, :])


def interval_vector_vertices(box: IntervalVector) -> HullSet:
    """All ``2**n`` corners of the box, degenerate duplicates kept."""
    if len(box) < 1:
        raise ValueError("empty interval vector")
    return HullSet(_box_corners(box.lo, box.hi))


def interval_matrix_vertices(dm: IntervalMatrix) -> HullSet:
    """All ``2**(n*m)`` corner matrices, row-major binary counting."""
    n, m = dm.shape
    corners = _box_corners(dm.lo.reshape(-1), dm.hi.reshape(-1))
    return HullSet(corners.reshape(-1, n, m))


def orthotope_intervals(gradient, dm: IntervalMatrix) -> IntervalVector:
    """Per-column range of ``gradient^T D`` for ``D`` in the interval matrix."""
    g = np.asarray(gradient, dtype=float).reshape(-1)
    if g.shape[0] != dm.shape[0]:
        raise ValueError(f"gradient has dimension {g.shape[0]}, interval matrix has {dm.shape[0]} rows")
    a = g[:, None] * dm.lo
    b = g[:, None] * dm.hi
    return IntervalVector(np.minimum(a, b).sum(axis=0), np.maximum(a, b).sum(axis=0))


def orthotope_vertices(gradient, dm: IntervalMatrix) -> np.ndarray:
    """The ``2**m`` corner row vectors of the orthotope ``gradient^T D``, shape ``(2**m, m)``."""
    return interval_vector_vertices(orthotope_intervals(gradient, dm)).vertices


def union_vertices(hulls: Sequence[HullSet]) -> HullSet:
    """Concatenate vertex lists; the hull of the result covers the union."""
    hulls = list(hulls)
    if not hulls:
        raise ValueError("union of zero hulls")
    shape = hulls[0].point_shape
    for h in hulls[1:]:
        if h.point_shape != shape:
            raise ValueError(f"hull point shapes differ: {shape} vs {h.point_shape}")
    return HullSet(np.concatenate([h.vertices for h in hulls], axis=0))
