"""Small dense convex QP solver for the per-robot safety controller.

The problem has exactly three decision variables (two single-integrator
velocity components plus the stability relaxation), a diagonal positive
definite Hessian, a handful of inequality rows and per-variable box bounds:

    min  1/2 u^T H u + F^T u
    s.t. a_i . u <= b_i          (stability and barrier rows)
         lo <= u <= hi           (box bounds)

``solve`` is a dual active-set iteration: it starts from the unconstrained
minimum and adds the most violated constraint at each step, taking combined
primal/dual steps and dropping blocking constraints, which terminates finitely
and certifies infeasibility when a violated row is a nonnegative combination
of the active normals. ``enumeration_oracle`` is an independent exact check
that enumerates candidate active sets and keeps the first feasible KKT point
(sufficient for optimality since the problem is strictly convex).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"

_FEAS_EPS = 1e-10   # violation below this is treated as satisfied
_DUAL_EPS = 1e-11   # multipliers above -this are treated as nonnegative
_RATIO_EPS = 1e-12


class NumericalFailure(RuntimeError):
    """The solver could not reach its residual target (ill-conditioning)."""


@dataclass
class QpProblem:
    """Dense 3-variable QP with inequality rows ``a . u <= b`` and box bounds."""

    H: np.ndarray
    F: np.ndarray
    ineq_rows: list = field(default_factory=list)
    box: tuple = ((-math.inf, math.inf),) * 3

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        if self.H.shape != (3, 3) or self.F.shape != (3,):
            raise ValueError("H must be 3x3 and F length 3")
        if np.any(self.H != np.diag(np.diag(self.H))):
            raise ValueError("H must be diagonal")
        if np.any(np.diag(self.H) <= 0.0):
            raise ValueError("H diagonal entries must be positive")
        self.ineq_rows = [(np.asarray(a, dtype=float), float(b)) for a, b in self.ineq_rows]
        for a, b in self.ineq_rows:
            if a.shape != (3,) or not np.all(np.isfinite(a)) or not math.isfinite(b):
                raise ValueError("inequality rows must be finite length-3 vectors")
        if len(self.box) != 3:
            raise ValueError("box must give (lo, hi) per variable")


@dataclass
class QpSolution:
    u: np.ndarray
    objective: float
    kkt_residual: float
    status: str
    multipliers: np.ndarray


def box_rows(box):
    """Expand per-variable bounds to inequality rows, skipping infinite ones."""
    rows = []
    for i, (lo, hi) in enumerate(box):
        if math.isfinite(hi):
            a = [0.0, 0.0, 0.0]
            a[i] = 1.0
            rows.append((tuple(a), float(hi)))
        if math.isfinite(lo):
            a = [0.0, 0.0, 0.0]
            a[i] = -1.0
            rows.append((tuple(a), -float(lo)))
    return rows


def _gauss_solve(mat, rhs):
    """Solve a small dense system in place with partial pivoting.

    Returns None when the matrix is numerically singular.
    """
    n = len(rhs)
    a = [list(row) + [rhs[i]] for i, row in enumerate(mat)]
    scale = max(max(abs(v) for v in row[:n]) for row in a) or 1.0
    for col in range(n):
        piv, pval = col, abs(a[col][col])
        for r in range(col + 1, n):
            if abs(a[r][col]) > pval:
                piv, pval = r, abs(a[r][col])
        if pval <= 1e-13 * scale:
            return None
        if piv != col:
            a[col], a[piv] = a[piv], a[col]
        inv = 1.0 / a[col][col]
        for r in range(col + 1, n):
            f = a[r][col] * inv
            if f != 0.0:
                for c in range(col, n + 1):
                    a[r][c] -= f * a[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        s = a[r][n] - sum(a[r][c] * x[c] for c in range(r + 1, n))
        x[r] = s / a[r][r]
    return x


def _eqp_solve(hdiag, f, rows, active):
    """Equality-constrained subproblem for a working set: returns (x, lam)."""
    k = len(active)
    n = 3 + k
    mat = [[0.0] * n for _ in range(n)]
    rhs = [0.0] * n
    for d in range(3):
        mat[d][d] = hdiag[d]
        rhs[d] = -f[d]
    for j, idx in enumerate(active):
        a, b = rows[idx]
        for d in range(3):
            mat[d][3 + j] = a[d]
            mat[3 + j][d] = a[d]
        rhs[3 + j] = b
    sol = _gauss_solve(mat, rhs)
    if sol is None:
        return None
    return sol[:3], sol[3:]


def solve_rows(hdiag, f, rows, max_iter=None):
    """Dual active-set core on plain floats.

    hdiag: positive diagonal of H; f: linear term; rows: list of ((a0,a1,a2), b).
    Returns (x, lam_by_row, status). Raises NumericalFailure when the
    iteration cap is hit or a working-set system turns singular.
    """
    m = len(rows)
    x = [-f[0] / hdiag[0], -f[1] / hdiag[1], -f[2] / hdiag[2]]
    active: list[int] = []
    lam: list[float] = []
    budget = max_iter if max_iter is not None else 60 + 25 * m

    for _ in range(budget):
        worst = 0.0
        p = -1
        for idx in range(m):
            a, b = rows[idx]
            v = a[0] * x[0] + a[1] * x[1] + a[2] * x[2] - b
            if v > _FEAS_EPS * max(1.0, abs(b)) and v > worst:
                worst, p = v, idx
        if p < 0:
            lam_full = [0.0] * m
            for idx, l in zip(active, lam):
                lam_full[idx] = l if l > 0.0 else 0.0
            return x, lam_full, OPTIMAL

        ap = rows[p][0]
        u_p = 0.0
        for _ in range(budget):
            hinv_ap = (ap[0] / hdiag[0], ap[1] / hdiag[1], ap[2] / hdiag[2])
            ref = ap[0] * hinv_ap[0] + ap[1] * hinv_ap[1] + ap[2] * hinv_ap[2]
            k = len(active)
            if k:
                normals = [rows[i][0] for i in active]
                mat = [[sum(normals[i][d] * normals[j][d] / hdiag[d] for d in range(3))
                        for j in range(k)] for i in range(k)]
                rhs = [sum(normals[i][d] * hinv_ap[d] for d in range(3)) for i in range(k)]
                r = _gauss_solve(mat, rhs)
                if r is None:
                    raise NumericalFailure("active-set normal system is singular")
                w = [ap[d] - sum(r[i] * normals[i][d] for i in range(k)) for d in range(3)]
                z = [w[d] / hdiag[d] for d in range(3)]
            else:
                r = []
                z = list(hinv_ap)
            ztap = z[0] * ap[0] + z[1] * ap[1] + z[2] * ap[2]

            if ztap <= 1e-12 * max(ref, 1e-30):
                # a_p depends on the active normals: dual-only step or infeasible
                t1 = math.inf
                drop = -1
                for i in range(k):
                    if r[i] > _RATIO_EPS:
                        ratio = lam[i] / r[i]
                        if ratio < t1:
                            t1, drop = ratio, i
                if drop < 0:
                    return [0.0, 0.0, 0.0], [0.0] * m, INFEASIBLE
                for i in range(k):
                    lam[i] -= t1 * r[i]
                u_p += t1
                del active[drop]
                del lam[drop]
                continue

            s_p = ap[0] * x[0] + ap[1] * x[1] + ap[2] * x[2] - rows[p][1]
            t_full = s_p / ztap if s_p > 0.0 else 0.0
            t1 = math.inf
            drop = -1
            for i in range(k):
                if r[i] > _RATIO_EPS:
                    ratio = lam[i] / r[i]
                    if ratio < t1:
                        t1, drop = ratio, i
            t = min(t_full, t1)
            x[0] -= t * z[0]
            x[1] -= t * z[1]
            x[2] -= t * z[2]
            for i in range(k):
                lam[i] -= t * r[i]
            u_p += t
            if t_full <= t1:
                # constraint p becomes tight: refresh exactly on the new
                # working set to kill accumulated drift, pruning any
                # multiplier the refresh turns negative
                active.append(p)
                lam.append(u_p)
                while True:
                    refreshed = _eqp_solve(hdiag, f, rows, active)
                    if refreshed is None:
                        raise NumericalFailure("working-set refresh is singular")
                    x, lam = list(refreshed[0]), list(refreshed[1])
                    if not lam or min(lam) >= -_DUAL_EPS:
                        break
                    j = min(range(len(lam)), key=lambda i: lam[i])
                    del active[j]
                    del lam[j]
                break
            del active[drop]
            del lam[drop]
        else:
            raise NumericalFailure("inner active-set loop did not terminate")
    else:
        raise NumericalFailure("active-set iteration cap exceeded")


def _objective(hdiag, f, x):
    return 0.5 * (hdiag[0] * x[0] ** 2 + hdiag[1] * x[1] ** 2 + hdiag[2] * x[2] ** 2) \
        + f[0] * x[0] + f[1] * x[1] + f[2] * x[2]


def _kkt_residual(hdiag, f, rows, x, lam):
    g = [hdiag[d] * x[d] + f[d] for d in range(3)]
    res = 0.0
    for idx, (a, b) in enumerate(rows):
        s = a[0] * x[0] + a[1] * x[1] + a[2] * x[2] - b
        if s > res:
            res = s
        l = lam[idx]
        if l != 0.0:
            for d in range(3):
                g[d] += l * a[d]
            c = abs(l * s)
            if c > res:
                res = c
    return max(res, abs(g[0]), abs(g[1]), abs(g[2]))


def _problem_rows(problem: QpProblem):
    rows = [(tuple(float(v) for v in a), float(b)) for a, b in problem.ineq_rows]
    rows.extend(box_rows(problem.box))
    return rows


def solve(problem: QpProblem) -> QpSolution:
    """Solve the QP; status is ``infeasible`` when the rows are contradictory."""
    hdiag = (float(problem.H[0, 0]), float(problem.H[1, 1]), float(problem.H[2, 2]))
    f = (float(problem.F[0]), float(problem.F[1]), float(problem.F[2]))
    rows = _problem_rows(problem)
    x, lam, status = solve_rows(hdiag, f, rows)
    if status == INFEASIBLE:
        return QpSolution(np.zeros(3), math.inf, math.inf, INFEASIBLE, np.zeros(len(rows)))
    res = _kkt_residual(hdiag, f, rows, x, lam)
    if not res <= 1e-6:
        raise NumericalFailure(f"KKT residual {res:.3e} above target")
    return QpSolution(np.array(x), _objective(hdiag, f, x), res, OPTIMAL, np.array(lam))


def enumeration_oracle(problem: QpProblem) -> QpSolution:
    """Exact reference solution by enumerating candidate active sets.

    Any KKT point of a strictly convex QP is its unique global minimizer, and
    one always exists with at most three linearly independent active rows, so
    scanning subsets of size 0..3 and returning the first feasible KKT point
    is exact. Intended for testing, not for the control loop.
    """
    if len(problem.ineq_rows) > 12:
        raise ValueError("enumeration oracle is limited to 12 inequality rows")
    hdiag = np.array([problem.H[0, 0], problem.H[1, 1], problem.H[2, 2]], dtype=float)
    f = np.asarray(problem.F, dtype=float)
    rows = _problem_rows(problem)
    m = len(rows)
    A = np.array([r[0] for r in rows], dtype=float).reshape(m, 3)
    b = np.array([r[1] for r in rows], dtype=float)
    sizes = [()] + [c for k in (1, 2, 3) for c in itertools.combinations(range(m), k)]
    H = np.diag(hdiag)
    for subset in sizes:
        k = len(subset)
        if k == 0:
            x = -f / hdiag
            lam_s = np.zeros(0)
        else:
            N = A[list(subset)]
            kkt = np.zeros((3 + k, 3 + k))
            kkt[:3, :3] = H
            kkt[:3, 3:] = N.T
            kkt[3:, :3] = N
            rhs = np.concatenate([-f, b[list(subset)]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(sol)):
                continue
            x, lam_s = sol[:3], sol[3:]
            if np.any(lam_s < -1e-9):
                continue
        viol = A @ x - b if m else np.zeros(0)
        if m and np.max(viol) > 1e-9:
            continue
        lam = np.zeros(m)
        for j, idx in enumerate(subset):
            lam[idx] = max(lam_s[j], 0.0)
        obj = float(0.5 * x @ (hdiag * x) + f @ x)
        res = _kkt_residual(tuple(hdiag), tuple(f), rows, list(x), list(lam))
        return QpSolution(np.asarray(x, dtype=float), obj, res, OPTIMAL, lam)
    return QpSolution(np.zeros(3), math.inf, math.inf, INFEASIBLE, np.zeros(m))
