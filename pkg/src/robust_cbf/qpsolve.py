"""Minimally invasive safety filter QP.

Solves::

    min_u  || diag(weight) (u_nom - u) ||^2
    s.t.   A u >= b,   |u_k| <= u_max_k

with a dense dual active-set method (Goldfarb-Idnani). In the scaled
variable ``z = weight * u`` the Hessian is the identity, so each step only
needs a QR factorization of the active normals. The method starts from the
unconstrained minimizer ``u_nom``, which makes it exact when the nominal
input is already safe and lets it detect infeasibility without a phase-one
problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "OPTIMAL",
    "MAX_ITERATIONS",
    "INFEASIBLE",
    "QpProblem",
    "QpSolution",
    "QpSolver",
    "solve",
    "kkt_residuals",
    "box_rows",
]

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"

_ZERO_ROW = 1e-14
_ZERO_DIR = 1e-12


@dataclass(frozen=True, eq=False)
class QpProblem:
    weight: np.ndarray
    u_nom: np.ndarray
    A: np.ndarray
    b: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        u_nom = np.array(self.u_nom, dtype=float).reshape(-1)
        n = u_nom.shape[0]
        w = np.broadcast_to(np.asarray(self.weight, dtype=float), (n,)).copy()
        A = np.array(self.A, dtype=float).reshape(-1, n)
        b = np.array(self.b, dtype=float).reshape(-1)
        u_max = np.broadcast_to(np.asarray(self.u_max, dtype=float), (n,)).copy()
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        if np.any(u_max <= 0):
            raise ValueError("u_max must be positive")
        for name, arr in (("weight", w), ("u_nom", u_nom), ("A", A), ("b", b), ("u_max", u_max)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.u_nom.shape[0]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class QpSolution:
    u_star: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    # multipliers of the rows of A, then of the box rows u >= -u_max, -u >= -u_max
    multipliers: np.ndarray = field(repr=False)
    active_set: tuple = ()

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def box_rows(dim: int, u_max) -> tuple[np.ndarray, np.ndarray]:
    """The infinity-norm bound as ``2 dim`` rows ``C u >= d``."""
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (dim,))
    eye = np.eye(dim)
    return np.vstack([eye, -eye]), np.concatenate([-u_max, -u_max])


def _residuals(C, d, weight, u_nom, u, lam) -> dict:
    slack = C @ u - d
    # d/du of the objective equals sum of 2 * lam_k * c_k (multipliers of the halved objective are scaled by 2)
    stationarity = 2.0 * weight ** 2 * (u - u_nom) - 2.0 * (C.T @ lam)
    return {
        "stationarity": float(np.max(np.abs(stationarity), initial=0.0)),
        "primal": float(max(0.0, -np.min(slack, initial=0.0))),
        "dual": float(max(0.0, -np.min(lam, initial=0.0))),
        "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)),
    }


def kkt_residuals(problem: QpProblem, u, multipliers) -> dict:
    """Stationarity, primal feasibility, dual feasibility and complementarity residuals."""
    Cb, db = box_rows(problem.dim, problem.u_max)
    C = np.vstack([problem.A, Cb])
    d = np.concatenate([problem.b, db])
    return _residuals(C, d, problem.weight, problem.u_nom, np.asarray(u, dtype=float),
                      np.asarray(multipliers, dtype=float))


def _select(s: np.ndarray, tol: float, preferred: Sequence[int]) -> int:
    if preferred:
        pref = np.fromiter(preferred, dtype=int)
        sp = s[pref]
        k = int(np.argmin(sp))
        if sp[k] < -tol:
            # break ties toward the smallest constraint index
            ties = pref[sp == sp[k]]
            return int(ties.min())
    k = int(np.argmin(s))
    return k if s[k] < -tol else -1


def _solve(problem: QpProblem, warm_start: Sequence[int] = (), max_iter: int = 200,
           tol: float = 1e-10) -> QpSolution:
    n = problem.dim
    w = problem.weight
    m_a = problem.n_rows
    Cb, db = box_rows(n, problem.u_max)
    C_u = np.vstack([problem.A, Cb])
    d_u = np.concatenate([problem.b, db])
    ww = np.concatenate([w, w])
    # constraints in z = w * u, rows normalized to unit length
    C = np.vstack([problem.A / w[None, :], Cb])
    d = np.concatenate([problem.b, db * ww])
    norms = np.sqrt((C * C).sum(axis=1))
    zero = norms <= _ZERO_ROW
    scale = np.where(zero, 1.0, norms)
    C = C / scale[:, None]
    d = d / scale
    z0 = w * problem.u_nom
    z = z0.copy()
    m = C.shape[0]
    lam_all = np.zeros(m)

    def finish(status: str, it: int, active: list, lam: list) -> QpSolution:
        lam_all[:] = 0.0
        for k, l in zip(active, lam):
            lam_all[k] = l
        # back to the rows as given: a . u >= b and +-e_k . u >= -u_max_k.
        # Multipliers are those of 1/2 ||W (u - u_nom)||^2.
        mult = lam_all / scale
        mult[m_a:] = mult[m_a:] * ww
        u = z / w
        res = _residuals(C_u, d_u, w, problem.u_nom, u, mult)
        return QpSolution(
            u_star=u,
            status=status,
            iterations=it,
            primal_residual=res["primal"],
            dual_residual=max(res["stationarity"], res["dual"], res["complementarity"]),
            multipliers=mult,
            active_set=tuple(sorted(active)),
        )

    if np.any(zero & (d > tol)):
        return finish(INFEASIBLE, 0, [], [])
    valid = ~zero
    active: list[int] = []
    lam: list[float] = []
    preferred = [k for k in warm_start if 0 <= k < m and valid[k]]
    it = 0
    while True:
        s = np.where(valid, C @ z - d, 0.0)
        p = _select(s, tol, [k for k in preferred if k not in active])
        if p < 0:
            return finish(OPTIMAL, it, active, lam)
        n_p = C[p]
        lam_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                return finish(MAX_ITERATIONS, it - 1, active, lam)
            if active:
                Q, R = np.linalg.qr(C[active].T)
                qn = Q.T @ n_p
                r = solve_triangular(R, qn)
                zdir = n_p - Q @ qn
            else:
                r = np.zeros(0)
                zdir = n_p
            t1, drop = np.inf, -1
            for k in range(len(active)):
                if r[k] > _ZERO_DIR:
                    ratio = lam[k] / r[k]
                    if ratio < t1 or (ratio == t1 and active[k] < active[drop]):
                        t1, drop = ratio, k
            if np.sqrt(zdir @ zdir) > _ZERO_DIR:
                t2 = -(n_p @ z - d[p]) / (zdir @ n_p)
            else:
                t2 = np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return finish(INFEASIBLE, it, active, lam)
            if len(active):
                lam = [l - t * rk for l, rk in zip(lam, r)]
            lam_p += t
            if np.isfinite(t2):
                z = z + t * zdir
                if t2 <= t1:
                    active.append(p)
                    lam.append(lam_p)
                    break
            del active[drop]
            del lam[drop]


def solve(problem: QpProblem, warm_start: Sequence[int] = (), max_iter: int = 200) -> QpSolution:
    """Solve one filter QP.

    ``warm_start`` lists constraint indices (rows of ``A`` first, then the
    box rows) that were active at a previous solve; violated ones are
    processed first. It only changes the path, not the minimizer.
    """
    return _solve(problem, warm_start=warm_start, max_iter=max_iter)


class QpSolver:
    """Stateful wrapper that warm-starts from the previous active set."""

    def __init__(self, max_iter: int = 200):
        self.max_iter = max_iter
        self._active: tuple = ()

    def reset(self) -> None:
        self._active = ()

    def solve(self, problem: QpProblem) -> QpSolution:
        sol = _solve(problem, warm_start=self._active, max_iter=self.max_iter)
        self._active = sol.active_set
        return sol
