"""Independent brute-force references used by the tests.

Nothing here imports the package; each oracle recomputes its answer from
first principles with loops, explicit inverses or exhaustive enumeration.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def matrix_corner_min(gradient, lo, hi, u) -> float:
    """min over every corner matrix D (entries at lo or hi) of gradient^T D u."""
    g = np.asarray(gradient, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = lo.shape
    best = math.inf
    for bits in itertools.product((0, 1), repeat=n * m):
        D = np.where(np.array(bits).reshape(n, m) == 1, hi, lo)
        val = 0.0
        for i in range(n):
            for j in range(m):
                val += g[i] * D[i, j] * u[j]
        best = min(best, val)
    return best


def box_corner_min(lo, hi, u) -> float:
    """min over the corners of the box [lo, hi] of corner . u."""
    best = math.inf
    for bits in itertools.product((0, 1), repeat=len(lo)):
        q = [hi[k] if b else lo[k] for k, b in enumerate(bits)]
        best = min(best, sum(qk * uk for qk, uk in zip(q, u)))
    return best


def qp_enumerate(weight, u_nom, A, b, u_max, feas_tol: float = 1e-9):
    """Exhaustive active-set enumeration for min ||diag(w)(u - u_nom)||^2 s.t. A u >= b, |u| <= u_max.

    Every subset of at most ``dim`` rows is treated as equalities; the KKT
    system of the equality-constrained problem is solved directly and the
    feasible candidate with the smallest objective wins. Returns
    ``(u, objective)`` or ``(None, inf)`` when no candidate is feasible.
    """
    w = np.asarray(weight, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    n = u_nom.shape[0]
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float)
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (n,))
    C = np.vstack([A, np.eye(n), -np.eye(n)])
    d = np.concatenate([b, -u_max, -u_max])
    H = np.diag(w * w)
    best_u, best_obj = None, math.inf
    for size in range(0, n + 1):
        for S in itertools.combinations(range(C.shape[0]), size):
            S = list(S)
            K = np.zeros((n + size, n + size))
            K[:n, :n] = H
            K[:n, n:] = -C[S].T
            K[n:, :n] = C[S]
            rhs = np.concatenate([H @ u_nom, d[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(sol)):
                continue
            u = sol[:n]
            if np.max(np.abs(K @ sol - rhs)) > 1e-9:
                continue
            if np.all(C @ u - d >= -feas_tol):
                obj = float(((w * (u - u_nom)) ** 2).sum())
                if obj < best_obj:
                    best_u, best_obj = u, obj
    return best_u, best_obj


def gaussian_kernel(a, b, sigma_s: float, widths) -> float:
    acc = 0.0
    for k in range(len(a)):
        acc += widths[k] * (a[k] - b[k]) ** 2
    return sigma_s ** 2 * math.exp(-0.5 * acc)


def gp_naive(X, y, Xq, sigma_s: float, sigma_n: float, widths):
    """Posterior mean and variance through an explicit matrix inverse."""
    X = np.atleast_2d(X)
    Xq = np.atleast_2d(Xq)
    N = X.shape[0]
    K = np.array([[gaussian_kernel(X[i], X[j], sigma_s, widths) for j in range(N)] for i in range(N)])
    Kinv = np.linalg.inv(K + sigma_n ** 2 * np.eye(N))
    mu, var = [], []
    for q in Xq:
        ks = np.array([gaussian_kernel(X[i], q, sigma_s, widths) for i in range(N)])
        mu.append(ks @ Kinv @ np.asarray(y, dtype=float))
        var.append(gaussian_kernel(q, q, sigma_s, widths) - ks @ Kinv @ ks)
    return np.array(mu), np.array(var)


def gp_log_likelihood_naive(X, y, sigma_s: float, sigma_n: float, widths) -> float:
    X = np.atleast_2d(X)
    N = X.shape[0]
    K = np.array([[gaussian_kernel(X[i], X[j], sigma_s, widths) for j in range(N)] for i in range(N)])
    K = K + sigma_n ** 2 * np.eye(N)
    y = np.asarray(y, dtype=float)
    return float(-0.5 * y @ np.linalg.inv(K) @ y - 0.5 * math.log(np.linalg.det(K)) - 0.5 * N * math.log(2 * math.pi))


def lookahead_matrix(theta: float, D, l_p: float) -> np.ndarray:
    """Exact look-ahead input matrix for one disturbance matrix D (3x2)."""
    c, s = math.cos(theta), math.sin(theta)
    gx = np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]]) + np.asarray(D, dtype=float)
    # p = x + l_p (cos, sin): dp/dx = [[1, 0, -l_p s], [0, 1, l_p c]]
    J = np.array([[1.0, 0.0, -l_p * s], [0.0, 1.0, l_p * c]])
    return J @ gx


def matrix_corner_min_vec(gradient, lo, hi, u) -> float:
    """Vectorized form of :func:`matrix_corner_min` for larger batches."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n, m = lo.shape
    bits = np.array(list(itertools.product((0, 1), repeat=n * m)), dtype=bool).reshape(-1, n, m)
    corners = np.where(bits, hi, lo)
    return float(np.einsum("i,kij,j->k", np.asarray(gradient, float), corners, np.asarray(u, float)).min())
