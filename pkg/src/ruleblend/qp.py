"""Nullspace-reduced quadratic program for the node weights.

The weight problem
    minimize ||y - M w||^2 + nu ||w||^2
    subject to I w = 1 componentwise, w >= 0, w_root >= root floor
is reduced by parameterizing the equality constraint's solution set as
w = w_root + B d, with w_root = (1, 0, ..., 0) and B an orthonormal basis of
the nullspace of I. The reduced problem

    minimize d' H d + 2 g' d
    subject to A d >= b

with H = (MB)'(MB) + nu B'B and the inequality rows below is strictly convex
(smallest eigenvalue of H is at least nu) and is solved with a dual
active-set method: starting from the unconstrained minimizer, violated
constraints enter the working set one at a time while the iterate stays
optimal for the working set, until no violation remains. A final
equality-constrained re-solve on the terminal working set tightens the
iterate, and the returned solution always carries its KKT certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import sparse

from .errors import DataError, SolverError
from .matrices import DesignPair

DEFAULT_NU = 0.001
DEFAULT_ROOT_FLOOR = 0.001
DEFAULT_TOL = 1e-8
CLAMP_BAND = 1e-9
NEGATIVE_WEIGHT_LIMIT = 1e-6


@dataclass(eq=False)
class QpProblem:
    """Reduced problem data: minimize d'Hd + 2g'd subject to A d >= b.

    The first q rows of ``constraint_matrix`` are the basis rows (node
    nonnegativity plus the root floor); an optional final row encodes the
    weight-budget bound when lambda is finite.
    """

    hessian: np.ndarray
    linear: np.ndarray
    constraint_matrix: np.ndarray
    constraint_bounds: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.linear)

    @property
    def n_constraints(self) -> int:
        return len(self.constraint_bounds)


@dataclass(eq=False)
class QpSolution:
    """Solver output: iterate, objective, certificate, and bookkeeping."""

    d: np.ndarray
    objective: float
    kkt: dict
    iterations: int
    status: str
    multipliers: np.ndarray


def nullspace_basis(indicator) -> np.ndarray:
    """Orthonormal basis of the nullspace of the membership indicator.

    Accepts a dense array or scipy sparse matrix. The numerical rank uses the
    tolerance max(n, q) * machine epsilon * largest singular value. The
    returned array has shape (q, q_tilde); q_tilde may be 0, in which case
    the all-ones equality system pins the weights to the root vector and no
    reduced problem exists.
    """
    a = indicator.toarray() if sparse.issparse(indicator) else np.asarray(indicator, float)
    if a.ndim != 2:
        raise DataError("indicator must be a matrix")
    n, q = a.shape
    _, s, vh = np.linalg.svd(a, full_matrices=True)
    tol = max(n, q) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return np.ascontiguousarray(vh[rank:].T)


def assemble_reduced(design: DesignPair, basis: np.ndarray, y: np.ndarray,
                     nu: float = DEFAULT_NU, lam: float = math.inf,
                     root_floor: float = DEFAULT_ROOT_FLOOR) -> QpProblem:
    """Build the reduced QP from the design pair and nullspace basis.

    ``y`` is the internal response the node means were computed on. Because
    M maps the root vector to the constant mean response, the residual term
    only involves the centered response, so the linear part is
    -(MB)'(y - mean) + nu B' w_root. Constraint rows encode
    B d >= (root_floor - 1, 0, ..., 0) and, for finite lambda, the budget
    1'B d <= lambda - 1.
    """
    if nu <= 0:
        raise DataError("ridge strength nu must be positive")
    if not lam >= 1:
        raise DataError("lambda must be at least 1 (the root alone has weight 1)")
    if not 0 < root_floor < 1:
        raise DataError("root floor must lie in (0, 1)")
    if basis.ndim != 2 or basis.shape[0] != design.q:
        raise DataError("basis shape does not match the design")
    q, q_tilde = basis.shape
    if q_tilde == 0:
        raise DataError("trivial nullspace: the root vector is the only feasible point")
    y = np.asarray(y, float)
    if len(y) != design.n:
        raise DataError("response length does not match the design")

    mb = design.node_mean @ basis
    hess = mb.T @ mb + nu * np.eye(q_tilde)
    resid = y - design.means[0]
    lin = -(mb.T @ resid) + nu * basis[0, :]

    if math.isinf(lam):
        a_rows = basis.copy()
        bounds = np.zeros(q)
    else:
        a_rows = np.vstack([basis, -basis.sum(axis=0)])
        bounds = np.zeros(q + 1)
        bounds[q] = 1.0 - lam
    bounds[0] = root_floor - 1.0
    return QpProblem(hess, lin, a_rows, bounds,
                     meta={"q": q, "q_tilde": q_tilde, "nu": nu, "lam": lam,
                           "root_floor": root_floor})


def kkt_residuals(problem: QpProblem, d: np.ndarray,
                  multipliers: np.ndarray) -> dict:
    """Certificate residuals for a candidate solution of ``problem``.

    stationarity:  || 2 H d + 2 g - A' mult ||_inf
    feasibility:   largest violation of A d >= b (0 when feasible)
    comp_slack:    max_i | mult_i * (A d - b)_i |
    min_dual:      smallest multiplier (should be >= -tol)
    """
    grad = 2.0 * (problem.hessian @ d) + 2.0 * problem.linear
    slack = problem.constraint_matrix @ d - problem.constraint_bounds
    stat = float(np.max(np.abs(grad - problem.constraint_matrix.T @ multipliers)))
    feas = float(max(0.0, -slack.min())) if slack.size else 0.0
    comp = float(np.max(np.abs(multipliers * slack))) if slack.size else 0.0
    mind = float(multipliers.min()) if multipliers.size else 0.0
    return {"stationarity": stat, "feasibility": feas,
            "comp_slack": comp, "min_dual": mind}


def _objective(problem: QpProblem, d: np.ndarray) -> float:
    return float(d @ (problem.hessian @ d) + 2.0 * (problem.linear @ d))


class _DualActiveSet:
    """Dual active-set iteration for a strictly convex inequality QP.

    Maintains a working set of constraints treated as equalities, the
    current iterate (optimal for that working set), and factor state J, R
    with J = L^{-T} Q for the Cholesky factor L of 2H and the QR
    factorization Q R = L^{-1} N of the working-set normals N.
    """

    def __init__(self, problem: QpProblem, tol: float, max_iter: int):
        self.problem = problem
        self.tol = tol
        self.max_iter = max_iter
        self.normals = problem.constraint_matrix.T.copy()
        self.bounds = problem.constraint_bounds
        dim = problem.dim
        big_g = 2.0 * problem.hessian
        try:
            low = sla.cholesky(big_g, lower=True)
        except sla.LinAlgError as exc:
            raise SolverError(f"hessian is not positive definite: {exc}") from exc
        self.x = -sla.cho_solve((low, True), 2.0 * problem.linear)
        self.j = sla.solve_triangular(low, np.eye(dim), lower=True, trans="T")
        self.r = np.zeros((dim, dim))
        self.active: list[int] = []
        self.u = np.zeros(0)
        self.iterations = 0

    # -- factor updates -------------------------------------------------

    def _add_constraint(self, p: int, d_full: np.ndarray, u_new: float) -> None:
        k = len(self.active)
        d2 = d_full[k:]
        norm = float(np.linalg.norm(d2))
        alpha = -math.copysign(norm, d2[0]) if d2[0] != 0 else -norm
        v = d2.copy()
        v[0] -= alpha
        vv = float(v @ v)
        if vv > 0:
            j2 = self.j[:, k:]
            j2 -= np.outer(j2 @ v, v) * (2.0 / vv)
        self.r[:k, k] = d_full[:k]
        self.r[k, k] = alpha
        self.active.append(p)
        self.u = np.append(self.u, u_new)

    def _drop_constraint(self, k: int) -> None:
        q_act = len(self.active)
        self.active.pop(k)
        self.u = np.delete(self.u, k)
        self.r[:, k:q_act - 1] = self.r[:, k + 1:q_act]
        self.r[:, q_act - 1] = 0.0
        for j in range(k, q_act - 1):
            a_, b_ = self.r[j, j], self.r[j + 1, j]
            rad = math.hypot(a_, b_)
            if rad == 0.0:
                continue
            c, s = a_ / rad, b_ / rad
            rows = self.r[[j, j + 1], j:q_act - 1].copy()
            self.r[j, j:q_act - 1] = c * rows[0] + s * rows[1]
            self.r[j + 1, j:q_act - 1] = -s * rows[0] + c * rows[1]
            cols = self.j[:, [j, j + 1]].copy()
            self.j[:, j] = c * cols[:, 0] + s * cols[:, 1]
            self.j[:, j + 1] = -s * cols[:, 0] + c * cols[:, 1]

    # -- main loop ------------------------------------------------------

    def run(self) -> str:
        feas_tol = 1e-10
        while True:
            slack = self.normals.T @ self.x - self.bounds
            pending = int(np.argmin(slack)) if slack.size else -1
            if pending < 0 or slack[pending] >= -feas_tol:
                return "feasible"
            normal = self.normals[:, pending]
            u_pending = 0.0
            while True:
                self.iterations += 1
                if self.iterations > self.max_iter:
                    return "max-iterations"
                k = len(self.active)
                d_full = self.j.T @ normal
                d2 = d_full[k:]
                if k:
                    r_dir = sla.solve_triangular(self.r[:k, :k], d_full[:k], lower=False)
                else:
                    r_dir = np.zeros(0)
                t1 = math.inf
                k1 = -1
                for i in range(k):
                    if r_dir[i] > 1e-12:
                        ratio = self.u[i] / r_dir[i]
                        if ratio < t1:
                            t1, k1 = ratio, i
                dep = float(np.abs(d2).max(initial=0.0)) <= 1e-11 * max(1.0, float(np.abs(d_full).max(initial=0.0)))
                if dep:
                    if not math.isfinite(t1):
                        raise SolverError("constraints are infeasible or numerically degenerate")
                    self.u[:k] -= t1 * r_dir
                    u_pending += t1
                    self._drop_constraint(k1)
                    continue
                s_p = float(normal @ self.x - self.bounds[pending])
                t2 = -s_p / float(d2 @ d2)
                if t2 < 0.0:
                    t2 = 0.0
                t = min(t1, t2)
                self.x += t * (self.j[:, k:] @ d2)
                if k:
                    self.u[:k] -= t * r_dir
                u_pending += t
                if t2 <= t1:
                    self._add_constraint(pending, d_full, u_pending)
                    break
                self._drop_constraint(k1)


def _polish(problem: QpProblem, active: list[int]) -> tuple[np.ndarray, np.ndarray] | None:
    """Re-solve the QP with the terminal working set as equalities.

    Returns (d, multipliers over the active rows) or None when the KKT
    system is numerically singular. One step of iterative refinement keeps
    the stationarity residual near machine precision even for large H.
    """
    dim = problem.dim
    k = len(active)
    big_g = 2.0 * problem.hessian
    if k == 0:
        try:
            d = np.linalg.solve(big_g, -2.0 * problem.linear)
        except np.linalg.LinAlgError:
            return None
        return d, np.zeros(0)
    n_act = problem.constraint_matrix[active].T
    kkt = np.zeros((dim + k, dim + k))
    kkt[:dim, :dim] = big_g
    kkt[:dim, dim:] = -n_act
    kkt[dim:, :dim] = n_act.T
    rhs = np.concatenate([-2.0 * problem.linear, problem.constraint_bounds[active]])
    try:
        lu, piv = sla.lu_factor(kkt)
        sol = sla.lu_solve((lu, piv), rhs)
        sol += sla.lu_solve((lu, piv), rhs - kkt @ sol)
    except (sla.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:dim], sol[dim:]


def solve_qp(problem: QpProblem, tol: float = DEFAULT_TOL,
             max_iter: int | None = None) -> QpSolution:
    """Solve the reduced QP and certify the result.

    The iteration cap defaults to 50 times the number of constraints. The
    returned status is "converged" when every KKT residual meets ``tol``
    (stationarity, feasibility, complementary slackness at most ``tol``;
    multipliers at least ``-tol``), otherwise "max-iterations" with the best
    iterate found and its residuals.
    """
    if max_iter is None:
        max_iter = 50 * max(1, problem.n_constraints)
    solver = _DualActiveSet(problem, tol, max_iter)
    outcome = solver.run()

    m = problem.n_constraints
    mult_gi = np.zeros(m)
    mult_gi[solver.active] = np.maximum(solver.u, 0.0)
    candidates = [(solver.x, mult_gi)]
    polished = _polish(problem, solver.active)
    if polished is not None:
        d_pol, u_act = polished
        mult_pol = np.zeros(m)
        mult_pol[solver.active] = u_act
        candidates.append((d_pol, mult_pol))

    best = None
    for d_cand, mult in candidates:
        res = kkt_residuals(problem, d_cand, mult)
        worst = max(res["stationarity"], res["feasibility"], res["comp_slack"],
                    -min(0.0, res["min_dual"]))
        if best is None or worst < best[0]:
            best = (worst, d_cand, mult, res)
    worst, d_best, mult_best, res = best

    status = "converged" if (outcome == "feasible" and worst <= tol) else "max-iterations"
    return QpSolution(d=d_best, objective=_objective(problem, d_best), kkt=res,
                      iterations=solver.iterations, status=status,
                      multipliers=mult_best)


def recover_weights(d: np.ndarray, basis: np.ndarray,
                    root_floor: float = DEFAULT_ROOT_FLOOR) -> np.ndarray:
    """Map a reduced solution back to node weights w = w_root + B d.

    Entries with magnitude below 1e-9 are snapped to exactly 0 (solver dust
    on active bounds); entries below -1e-6 indicate a failed solve and
    raise. The root weight must clear its floor up to 1e-9.
    """
    w = basis @ d
    w[0] += 1.0
    low = float(w.min())
    if low < -NEGATIVE_WEIGHT_LIMIT:
        raise SolverError(f"weight {low:.3e} is below the negative tolerance")
    w[np.abs(w) < CLAMP_BAND] = 0.0
    w[(w < 0.0)] = 0.0
    if w[0] < root_floor - 1e-9:
        raise SolverError(f"root weight {w[0]:.6f} fell below its floor {root_floor}")
    return w
