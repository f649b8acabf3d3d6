"""Dense convex QP interface.

Solves  min 0.5 x'Px + q'x  s.t.  Ax = b,  Gx <= h  for PSD P whose
reduction onto the equality-constrained subspace is positive definite (true
for the jerk-minimization problems built by the smooth planner).

Engine: cvxopt's interior-point method, followed by an exact polish solve
on the detected active set so the returned KKT residuals reach
linear-solve precision (the planner's post-hoc feasibility checks rely on
that).  Inequality rows whose value is pinned by the equalities are
pre-checked and excluded; they carry no usable dual information.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from cvxopt import matrix as cvxmat
from cvxopt import solvers as cvxsolvers
from scipy.optimize import linprog

cvxsolvers.options["show_progress"] = False


class QpInfeasibleError(RuntimeError):
    """Constraints admit no point."""

    def __init__(self, msg, slack=None):
        super().__init__(msg)
        self.slack = slack


class QpSolverError(RuntimeError):
    """Solver failed to converge or the problem is unbounded/degenerate."""


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray  # equalities A x = b; shape (0, n) when absent
    b: np.ndarray
    G: np.ndarray  # inequalities G x <= h; shape (0, n) when absent
    h: np.ndarray
    const: float = 0.0  # additive constant so objective() is exact

    def __post_init__(self):
        n = self.P.shape[0]
        if self.P.shape != (n, n):
            raise ValueError("P must be square")
        if not np.allclose(self.P, self.P.T, atol=1e-12):
            raise ValueError("P must be symmetric")
        for name in ("A", "G"):
            m = getattr(self, name)
            if m.size and m.shape[1] != n:
                raise ValueError(f"{name} has {m.shape[1]} columns, expected {n}")

    @property
    def n(self):
        return self.P.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x + self.const)


@dataclass
class QpSolution:
    x: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    iterations: int
    polished: bool = False
    kkt_residual: float = field(default=np.nan)


def kkt_residual(qp: QpProblem, sol: QpSolution) -> float:
    """max of stationarity, primal feasibility and complementarity residuals."""
    r_stat = qp.P @ sol.x + qp.q
    if qp.A.size:
        r_stat = r_stat + qp.A.T @ sol.eq_duals
    if qp.G.size:
        r_stat = r_stat + qp.G.T @ sol.ineq_duals
    worst = float(np.max(np.abs(r_stat))) if r_stat.size else 0.0
    if qp.A.size:
        worst = max(worst, float(np.max(np.abs(qp.A @ sol.x - qp.b))))
    if qp.G.size:
        slack = qp.h - qp.G @ sol.x
        worst = max(worst, float(max(0.0, -slack.min())))
        worst = max(worst, float(np.max(np.abs(sol.ineq_duals * slack))))
        worst = max(worst, float(max(0.0, -sol.ineq_duals.min())))
    return worst


def _kkt_solve(P, q, C, d):
    """Solve the equality-constrained QP min 0.5x'Px+q'x s.t. Cx=d.

    Two rounds of iterative refinement keep the solution accurate even when
    P is PSD-singular and the KKT system is badly conditioned (typical for
    high-order polynomial objectives)."""
    n = P.shape[0]
    m = C.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = P
    if m:
        K[:n, n:] = C.T
        K[n:, :n] = C
    rhs = np.concatenate([-q, d])
    try:
        lu_piv = scipy.linalg.lu_factor(K)
        sol = scipy.linalg.lu_solve(lu_piv, rhs)
        for _ in range(2):
            r = rhs - K @ sol
            sol += scipy.linalg.lu_solve(lu_piv, r)
    except (np.linalg.LinAlgError, ValueError, scipy.linalg.LinAlgError):
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:n], sol[n:]


def _independent_rows(A0, G, act):
    """Greedy subset of `act` whose rows stay independent of [A0; chosen]
    (dependent duplicates would make the polish KKT system singular)."""
    basis: list[np.ndarray] = []

    def extend(row):
        r = row.copy()
        for qv in basis:
            r -= (qv @ row) * qv
        nr = np.linalg.norm(r)
        if nr <= 1e-9 * max(1.0, np.linalg.norm(row)):
            return False
        basis.append(r / nr)
        return True

    for row in A0:
        extend(row)
    return [i for i in act if extend(G[i])]


def _live_row_indices(A, b, G, h):
    """Indices of inequality rows NOT fixed by the equalities; fixed rows
    are verified here and raise when violated."""
    if not G.size or not A.size:
        return np.arange(G.shape[0] if G.size else 0)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    Z = Vt[rank:].T
    x_p, *_ = np.linalg.lstsq(A, b, rcond=None)
    if Z.shape[1] == 0:
        fixed = np.ones(G.shape[0], bool)
    else:
        fixed = np.linalg.norm(G @ Z, axis=1) <= 1e-10 * np.maximum(
            1.0, np.linalg.norm(G, axis=1))
    if fixed.any():
        worst = float((G[fixed] @ x_p - h[fixed]).max())
        if worst > 1e-8:
            raise QpInfeasibleError(
                f"constraint fixed by equalities violated by {worst:.3e}", slack=worst)
    return np.nonzero(~fixed)[0]


def _polish(qp, A0, b0, G, h, live, act, rounds: int = 30):
    """Active-set refinement from a near-optimal guess: exact KKT solves,
    each round adding the violated rows and dropping negative-dual rows.
    Returns a certified solution or None."""
    n_eq = A0.shape[0]
    act = sorted(int(i) for i in act)
    seen = set()
    for _ in range(rounds):
        key = tuple(act)
        if key in seen:
            return None
        seen.add(key)
        act = _independent_rows(A0, G, act)
        idx = np.asarray(act, int)
        C = np.vstack([A0, G[idx]]) if idx.size else A0
        d = np.concatenate([b0, h[idx]]) if idx.size else b0
        x, duals = _kkt_solve(qp.P, qp.q, C, d)
        mu_act = duals[n_eq:]
        slack = h - G @ x
        neg = [act[j] for j in range(len(act)) if mu_act[j] < -1e-9]
        in_act = set(act)
        viol = [i for i in np.nonzero(slack < -1e-9 * np.maximum(1.0, np.abs(h)))[0]
                if int(i) not in in_act]
        if not neg and not viol:
            ineq_duals = np.zeros(qp.G.shape[0] if qp.G.size else 0)
            if idx.size:
                ineq_duals[live[idx]] = np.maximum(mu_act, 0.0)
            return QpSolution(x=x, eq_duals=duals[:n_eq], ineq_duals=ineq_duals,
                              iterations=0, polished=True)
        act = sorted((in_act - set(neg)) | {int(i) for i in viol})
    return None


def solve_qp(qp: QpProblem, tol: float = 1e-6, max_iter: int = 200) -> QpSolution:
    """Solve the QP.

    Raises QpInfeasibleError on infeasible constraints and QpSolverError
    when the interior point fails to converge.  The returned solution
    carries the achieved KKT residual; polished solutions are exact to
    linear-solve precision."""
    n = qp.n
    A0 = qp.A if qp.A.size else np.zeros((0, n))
    b0 = qp.b if qp.A.size else np.zeros(0)
    m_full = qp.G.shape[0] if qp.G.size else 0

    if m_full == 0:
        x, duals = _kkt_solve(qp.P, qp.q, A0, b0)
        sol = QpSolution(x=x, eq_duals=duals, ineq_duals=np.zeros(0),
                         iterations=1, polished=True)
        sol.kkt_residual = kkt_residual(qp, sol)
        return sol

    live = _live_row_indices(A0, b0, qp.G, qp.h)
    G = qp.G[live]
    h = qp.h[live]

    kwargs = {}
    if A0.shape[0]:
        kwargs["A"] = cvxmat(A0)
        kwargs["b"] = cvxmat(b0)
    options = {"show_progress": False, "maxiters": int(max_iter),
               "abstol": 1e-7, "reltol": 1e-7, "feastol": 1e-8}
    # a small Tikhonov shift keeps the interior point healthy on the
    # singular jerk Hessian; polish solves against the unshifted data, so
    # the shift only has to produce a good active-set guess
    best = None
    status = "unknown"
    for reg_scale in (1e-9, 1e-6, 3e-5):
        reg = reg_scale * max(1.0, float(np.abs(qp.P).max()))
        P_reg = qp.P + reg * np.eye(n)
        try:
            res = cvxsolvers.qp(cvxmat(P_reg), cvxmat(qp.q), cvxmat(G), cvxmat(h),
                                options=options, **kwargs)
        except ValueError as e:
            _certify_feasible(A0, b0, G, h, n)
            raise QpSolverError(f"interior point failed: {e}") from None
        status = res["status"]
        if status == "primal infeasible":
            raise QpInfeasibleError("infeasible constraints (interior-point certificate)")
        if status == "dual infeasible":
            raise QpSolverError("problem unbounded below (dual infeasible)")

        x = np.asarray(res["x"]).ravel()
        z = np.asarray(res["z"]).ravel()
        y = (np.asarray(res["y"]).ravel() if A0.shape[0] else np.zeros(0))
        iters = int(res.get("iterations", 0))

        # exact polish; the dual-based guess first, the slack-tight set
        # second (loose duals sometimes flag rows that are not tight)
        slack = h - G @ x
        scale = np.maximum(1.0, np.abs(h))
        act_tight = slack < 1e-7 * scale
        act_dual = act_tight | (z > np.maximum(slack, 1e-6))
        for act_mask in (act_dual, act_tight):
            polished = _polish(qp, A0, b0, G, h, live, np.nonzero(act_mask)[0])
            if polished is not None:
                polished.iterations = iters
                polished.kkt_residual = kkt_residual(qp, polished)
                if polished.kkt_residual <= max(tol, 1e-8):
                    return polished

        ineq_duals = np.zeros(m_full)
        ineq_duals[live] = np.maximum(z, 0.0)
        sol = QpSolution(x=x, eq_duals=y, ineq_duals=ineq_duals, iterations=iters)
        sol.kkt_residual = kkt_residual(qp, sol)
        if best is None or sol.kkt_residual < best.kkt_residual:
            best = sol
        if status == "optimal" and sol.kkt_residual <= tol:
            return sol

    if best is not None and best.kkt_residual <= tol:
        return best
    _certify_feasible(A0, b0, G, h, n)
    raise QpSolverError(
        f"interior point status {status!r} (KKT residual {best.kkt_residual:.2e})")


def _certify_feasible(A, b, G, h, n):
    """LP check that classifies solver failures: raises QpInfeasibleError
    when the constraints admit no point at all."""
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([G, -np.ones((G.shape[0], 1))]) if G.size else None
    b_ub = h if G.size else None
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))]) if A.size else None
    b_eq = b if A.size else None
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * n + [(-1.0, None)], method="highs")
    if not res.success:
        raise QpInfeasibleError(f"infeasible constraints ({res.message})")
    if res.x[-1] > 1e-8:
        raise QpInfeasibleError(
            f"infeasible constraints (min violation {res.x[-1]:.3e})", slack=res.x[-1])
