"""Disturbed differential-drive (unicycle) robots in a planar arena.

States are arrays of shape ``(N, 3)`` holding ``(x1, x2, theta)`` per robot and
inputs are ``(N, 2)`` arrays of ``(v, omega)``. The ground-truth disturbance
scales the whole input inside a rectangle, which is the same as adding
``(gain - 1) g_x(x)`` to the unicycle input matrix.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .cbf import pair_indices

__all__ = [
    "RobotState",
    "ControlInput",
    "DisturbanceField",
    "ArenaConfig",
    "wrap_angle",
    "input_matrix",
    "unicycle_rhs",
    "step",
    "noisy_pose",
    "finite_difference",
    "measure",
    "proportional_controller",
    "proportional_controller_batch",
    "lookahead_controller_batch",
    "lookahead_points",
    "pairwise_h",
    "ground_truth_min_h",
    "TRAJECTORY_COLUMNS",
    "write_trajectory_csv",
]


class RobotState(NamedTuple):
    x1: float
    x2: float
    theta: float


class ControlInput(NamedTuple):
    v: float
    omega: float


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class DisturbanceField:
    """Input gain ``gain`` inside ``region = (xmin, xmax, ymin, ymax)``, 1 elsewhere."""

    region: tuple | None = (-1.6, 0.0, 0.0, 1.0)
    gain: float = 0.8

    def __post_init__(self):
        if not 0 < self.gain <= 1:
            raise ValueError(f"gain must lie in (0, 1], got {self.gain}")
        if self.region is not None:
            xmin, xmax, ymin, ymax = self.region
            if xmin > xmax or ymin > ymax:
                raise ValueError(f"degenerate region {self.region}")

    @classmethod
    def none(cls) -> "DisturbanceField":
        return cls(region=None, gain=1.0)

    def inside(self, states) -> np.ndarray:
        x = np.atleast_2d(np.asarray(states, dtype=float))
        if self.region is None or self.gain == 1.0:
            return np.zeros(x.shape[0], dtype=bool)
        xmin, xmax, ymin, ymax = self.region
        return (x[:, 0] >= xmin) & (x[:, 0] <= xmax) & (x[:, 1] >= ymin) & (x[:, 1] <= ymax)

    def gain_at(self, states) -> np.ndarray:
        return np.where(self.inside(states), self.gain, 1.0)

    def true_dm(self, states) -> np.ndarray:
        """True input disturbance ``(gain - 1) g_x(x)`` per robot, shape ``(N, 3, 2)``."""
        x = np.atleast_2d(np.asarray(states, dtype=float))
        return (self.gain_at(x) - 1.0)[:, None, None] * input_matrix(x)

    def distance_to_boundary(self, states) -> np.ndarray:
        """Distance of each position to the region's edge (inf without a region)."""
        x = np.atleast_2d(np.asarray(states, dtype=float))
        if self.region is None or self.gain == 1.0:
            return np.full(x.shape[0], np.inf)
        xmin, xmax, ymin, ymax = self.region
        dx = np.minimum(np.abs(x[:, 0] - xmin), np.abs(x[:, 0] - xmax))
        dy = np.minimum(np.abs(x[:, 1] - ymin), np.abs(x[:, 1] - ymax))
        inside = self.inside(x)
        # outside: distance to the rectangle, inside: distance to the nearest edge
        ox = np.maximum(np.maximum(xmin - x[:, 0], x[:, 0] - xmax), 0.0)
        oy = np.maximum(np.maximum(ymin - x[:, 1], x[:, 1] - ymax), 0.0)
        return np.where(inside, np.minimum(dx, dy), np.hypot(ox, oy))


@dataclass(frozen=True)
class ArenaConfig:
    """Arena geometry, robot parameters and simulation settings.

    ``l_b`` and ``r`` are carried for documentation only; motion follows the
    unicycle model. ``u_max`` bounds the linear velocity and ``omega_max`` the
    angular velocity.
    """

    bounds: tuple = (-1.6, 1.6, -1.0, 1.0)
    dt: float = 0.01
    l_p: float = 0.03
    l_b: float = 0.105
    r: float = 0.016
    delta: float = 0.12
    gamma: float = 700.0
    k_c: float = 2.0
    u_max: float = 0.2
    omega_max: float = 2.0
    noise_sigma: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.u_max <= 0 or self.omega_max <= 0:
            raise ValueError("input bounds must be positive")

    @property
    def input_bounds(self) -> np.ndarray:
        return np.array([self.u_max, self.omega_max])


def input_matrix(states) -> np.ndarray:
    """Unicycle ``g_x(x)`` per robot, shape ``(N, 3, 2)``."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    g = np.zeros((x.shape[0], 3, 2))
    g[:, 0, 0] = np.cos(x[:, 2])
    g[:, 1, 0] = np.sin(x[:, 2])
    g[:, 2, 1] = 1.0
    return g


def unicycle_rhs(states, inputs, field: DisturbanceField) -> np.ndarray:
    x = np.atleast_2d(np.asarray(states, dtype=float))
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    k = field.gain_at(x)
    v = k * u[:, 0]
    out = np.empty_like(x)
    out[:, 0] = v * np.cos(x[:, 2])
    out[:, 1] = v * np.sin(x[:, 2])
    out[:, 2] = k * u[:, 1]
    return out


def step(states, inputs, field: DisturbanceField, dt: float, scheme: str = "rk4") -> np.ndarray:
    """Advance all robots by ``dt`` with the inputs held constant."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    if scheme == "euler":
        nxt = x + dt * unicycle_rhs(x, u, field)
    elif scheme == "rk4":
        k1 = unicycle_rhs(x, u, field)
        k2 = unicycle_rhs(x + 0.5 * dt * k1, u, field)
        k3 = unicycle_rhs(x + 0.5 * dt * k2, u, field)
        k4 = unicycle_rhs(x + dt * k3, u, field)
        nxt = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError(f"unknown integration scheme {scheme!r}")
    nxt[:, 2] = wrap_angle(nxt[:, 2])
    return nxt


def noisy_pose(state, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Pose corrupted by iid Gaussian noise (m for positions, rad for heading)."""
    x = np.array(state, dtype=float)
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    x[..., 2] = wrap_angle(x[..., 2])
    return x


def finite_difference(prev_pose, next_pose, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = np.asarray(prev_pose, dtype=float)
    b = np.asarray(next_pose, dtype=float)
    d = b - a
    d[..., 2] = wrap_angle(d[..., 2])
    return d / dt


def measure(prev_state, next_state, dt: float, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Noisy derivative estimate ``(x1_dot, x2_dot, theta_dot)`` from two poses."""
    return finite_difference(noisy_pose(prev_state, noise, rng), noisy_pose(next_state, noise, rng), dt)


def proportional_controller_batch(states, goals, gains=(0.8, 2.0), bounds=(0.2, 2.0)) -> np.ndarray:
    """Go-to-point controller for many robots.

    ``v = k_v |e| cos(bearing error)``, ``omega = k_w wrap(bearing error)``;
    goals may carry a heading that is tracked once the position is reached.
    """
    x = np.atleast_2d(np.asarray(states, dtype=float))
    g = np.atleast_2d(np.asarray(goals, dtype=float))
    k_v, k_w = gains
    e = g[:, :2] - x[:, :2]
    dist = np.hypot(e[:, 0], e[:, 1])
    at_goal = dist < 1e-9
    bearing = wrap_angle(np.arctan2(e[:, 1], e[:, 0]) - x[:, 2])
    if g.shape[1] >= 3:
        heading_err = wrap_angle(g[:, 2] - x[:, 2])
    else:
        heading_err = np.zeros(x.shape[0])
    err = np.where(at_goal, heading_err, bearing)
    v = np.where(at_goal, 0.0, k_v * dist * np.cos(bearing))
    w = k_w * err
    b = np.broadcast_to(np.asarray(bounds, dtype=float), (2,))
    return np.stack([np.clip(v, -b[0], b[0]), np.clip(w, -b[1], b[1])], axis=1)


def proportional_controller(state, goal, gains=(0.8, 2.0), bounds=(0.2, 2.0)) -> ControlInput:
    u = proportional_controller_batch(np.asarray(state, float)[None, :], np.asarray(goal, float)[None, :],
                                      gains, bounds)[0]
    return ControlInput(float(u[0]), float(u[1]))


def lookahead_controller_batch(states, goals, l_p: float, gain: float = 0.8, bounds=(0.2, 2.0),
                               circulation: float = 0.0) -> np.ndarray:
    """Proportional control of the look-ahead point, mapped to ``(v, omega)``.

    The point velocity is ``gain (e + circulation R90 e)`` with ``e`` the
    error to the goal; ``circulation > 0`` adds a counter-clockwise component
    that breaks symmetric standoffs.
    """
    x = np.atleast_2d(np.asarray(states, dtype=float))
    g = np.atleast_2d(np.asarray(goals, dtype=float))
    c, s = np.cos(x[:, 2]), np.sin(x[:, 2])
    e = g[:, :2] - (x[:, :2] + l_p * np.stack([c, s], axis=1))
    px = gain * (e[:, 0] - circulation * e[:, 1])
    py = gain * (e[:, 1] + circulation * e[:, 0])
    v = c * px + s * py
    w = (-s * px + c * py) / l_p
    b = np.broadcast_to(np.asarray(bounds, dtype=float), (2,))
    return np.stack([np.clip(v, -b[0], b[0]), np.clip(w, -b[1], b[1])], axis=1)


def lookahead_points(states, l_p: float) -> np.ndarray:
    x = np.atleast_2d(np.asarray(states, dtype=float))
    return x[:, :2] + l_p * np.stack([np.cos(x[:, 2]), np.sin(x[:, 2])], axis=1)


def pairwise_h(states, delta: float, l_p: float) -> np.ndarray:
    p = lookahead_points(states, l_p)
    I, J = pair_indices(p.shape[0])
    d = p[I] - p[J]
    return (d * d).sum(axis=1) - delta * delta


def ground_truth_min_h(states, delta: float, l_p: float) -> float:
    """Smallest collision barrier over all robot pairs."""
    if np.atleast_2d(states).shape[0] < 2:
        raise ValueError("need at least two robots")
    return float(pairwise_h(states, delta, l_p).min())


TRAJECTORY_COLUMNS = ("t", "robot_id", "x1", "x2", "theta", "v_nom", "omega_nom", "v_star", "omega_star", "min_h")


def write_trajectory_csv(path, times: Sequence[float], states, u_nom, u_star, min_h) -> None:
    """Long-format trajectory log; arrays are ``(T, N, .)`` and ``min_h`` is ``(T,)``."""
    states = np.asarray(states)
    u_nom = np.asarray(u_nom)
    u_star = np.asarray(u_star)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for k, t in enumerate(times):
            for i in range(states.shape[1]):
                w.writerow([f"{t:.4f}", i, *(f"{c:.6f}" for c in states[k, i]),
                            *(f"{c:.6f}" for c in u_nom[k, i]), *(f"{c:.6f}" for c in u_star[k, i]),
                            f"{min_h[k]:.8f}"])
