"""Dense two-phase simplex with primal and dual certificates.

All inequalities are normalized to ``A x <= b`` internally; callers that need
a different sign convention do their own bookkeeping against the recorded row
order.  Bounds must be finite.  The solver returns vertex solutions (basic
feasible points), which downstream cut separation relies on.

Pricing is Dantzig with an automatic switch to Bland's rule once the objective
stalls, so termination is guaranteed at desk scale.  A bounded pivot budget
turns into an explicit ``numerical-failure`` status rather than a wrong
``optimal``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError

_PIVOT_TOL = 1e-9


@dataclass
class LpProblem:
    """min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @staticmethod
    def build(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None):
        c = np.asarray(c, dtype=float).ravel()
        n = c.size
        if A_ub is None:
            A_ub = np.zeros((0, n))
            b_ub = np.zeros(0)
        if A_eq is None:
            A_eq = np.zeros((0, n))
            b_eq = np.zeros(0)
        A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float)) if np.size(A_ub) else np.zeros((0, n))
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float)) if np.size(A_eq) else np.zeros((0, n))
        b_ub = np.asarray(b_ub, dtype=float).ravel() if b_ub is not None else np.zeros(0)
        b_eq = np.asarray(b_eq, dtype=float).ravel() if b_eq is not None else np.zeros(0)
        if lb is None or ub is None:
            raise ModelError("finite variable bounds are required")
        lb = np.asarray(lb, dtype=float).ravel()
        ub = np.asarray(ub, dtype=float).ravel()
        prob = LpProblem(c, A_ub, b_ub, A_eq, b_eq, lb, ub)
        prob.validate()
        return prob

    def validate(self):
        n = self.c.size
        if self.A_ub.shape != (self.b_ub.size, n) and self.A_ub.size:
            raise ModelError("A_ub/b_ub dimension mismatch")
        if self.A_eq.shape != (self.b_eq.size, n) and self.A_eq.size:
            raise ModelError("A_eq/b_eq dimension mismatch")
        if self.lb.size != n or self.ub.size != n:
            raise ModelError("bound length mismatch")
        if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
            raise ModelError("bounds must be finite")
        if np.any(self.lb > self.ub + 1e-12):
            raise ModelError("lb > ub")

    @property
    def n(self):
        return self.c.size

    def scale(self):
        vals = [1.0]
        for arr in (self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, self.lb, self.ub):
            if np.size(arr):
                vals.append(float(np.max(np.abs(arr))))
        return max(vals)


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | numerical-failure
    x: np.ndarray | None = None
    obj: float | None = None
    dual_ub: np.ndarray | None = None      # >= 0, one per A_ub row
    dual_eq: np.ndarray | None = None      # free sign, one per A_eq row
    dual_lb: np.ndarray | None = None      # >= 0, multipliers of x >= lb
    dual_ubound: np.ndarray | None = None  # >= 0, multipliers of x <= ub
    res_primal: float = np.inf
    res_dual: float = np.inf
    res_compl: float = np.inf
    dual_obj: float | None = None
    pivots: int = 0
    max_violation: float = 0.0  # phase-1 violation when infeasible

    def duality_gap(self):
        if self.obj is None or self.dual_obj is None:
            return np.inf
        return abs(self.obj - self.dual_obj)


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _simplex_core(T, basis, cost, max_pivots):
    """Minimize cost over {T-rows feasible, vars >= 0}. Returns (status, pivots)."""
    m, ncols = T.shape[0], T.shape[1] - 1
    z = cost.astype(float).copy()
    # reduced costs: z_j - c_B B^-1 a_j computed incrementally via row ops
    obj_row = np.append(z, 0.0)
    for r, bcol in enumerate(basis):
        if obj_row[bcol] != 0.0:
            obj_row -= obj_row[bcol] * T[r]
    pivots = 0
    stall = 0
    last_obj = obj_row[-1]
    bland = False
    while pivots < max_pivots:
        rc = obj_row[:-1]
        if bland:
            cands = np.nonzero(rc < -_PIVOT_TOL)[0]
            if cands.size == 0:
                return "optimal", pivots, obj_row
            col = int(cands[0])
        else:
            col = int(np.argmin(rc))
            if rc[col] >= -_PIVOT_TOL:
                return "optimal", pivots, obj_row
        colvals = T[:, col]
        pos = colvals > _PIVOT_TOL
        if not np.any(pos):
            return "unbounded", pivots, obj_row
        ratios = np.full(m, np.inf)
        ratios[pos] = T[pos, -1] / colvals[pos]
        best = np.min(ratios)
        ties = np.nonzero(ratios <= best + 1e-12)[0]
        # smallest basis index on ties keeps Bland's rule honest
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, basis, row, col)
        obj_row -= obj_row[col] * T[row]
        pivots += 1
        # obj_row[-1] tracks -objective, so progress means it increases
        if obj_row[-1] <= last_obj + 1e-12:
            stall += 1
            if stall > 3 * (m + ncols) and not bland:
                bland = True
        else:
            stall = 0
            last_obj = obj_row[-1]
    return "numerical-failure", pivots, obj_row


def tableau_text(T, basis):
    """Plain-text rendering of a simplex tableau (debug aid)."""
    header = "basis | " + " ".join(f"c{j:>3d}" for j in range(T.shape[1] - 1)) + " |  rhs"
    lines = [header]
    for r in range(T.shape[0]):
        cells = " ".join(f"{v:8.3g}" for v in T[r, :-1])
        lines.append(f"x{basis[r]:>4d} | {cells} | {T[r, -1]:8.3g}")
    return "\n".join(lines)


def lp_solve(problem: LpProblem, max_pivots=None, debug_sink=None) -> LpSolution:
    """Solve the LP and attach dual multipliers plus residuals.

    The status is only reported ``optimal`` when the assembled certificate
    passes its residual checks.  ``debug_sink``, when given a list, receives a
    text dump of the final tableau.
    """
    problem.validate()
    n = problem.n
    scale = problem.scale()

    # pinned variables (lb == ub) are substituted out
    width = problem.ub - problem.lb
    free = np.nonzero(width > 1e-11)[0]
    pinned = np.nonzero(width <= 1e-11)[0]
    xpin = problem.lb[pinned]

    if free.size == 0:
        x = problem.lb.copy()
        viol = 0.0
        if problem.A_ub.size:
            viol = max(viol, float(np.max(problem.A_ub @ x - problem.b_ub, initial=0.0)))
        if problem.A_eq.size:
            viol = max(viol, float(np.max(np.abs(problem.A_eq @ x - problem.b_eq), initial=0.0)))
        if viol > 1e-8 * scale:
            return LpSolution(status="infeasible", max_violation=viol)
        return LpSolution(
            status="optimal", x=x, obj=float(problem.c @ x),
            dual_ub=np.zeros(problem.b_ub.size), dual_eq=np.zeros(problem.b_eq.size),
            dual_lb=np.zeros(n), dual_ubound=np.zeros(n),
            res_primal=viol, res_dual=0.0, res_compl=0.0, dual_obj=float(problem.c @ x),
        )

    c = problem.c[free]
    A_ub = problem.A_ub[:, free] if problem.A_ub.size else np.zeros((0, free.size))
    A_eq = problem.A_eq[:, free] if problem.A_eq.size else np.zeros((0, free.size))
    pin_ub = problem.A_ub[:, pinned] @ xpin if problem.A_ub.size else np.zeros(problem.b_ub.size)
    pin_eq = problem.A_eq[:, pinned] @ xpin if problem.A_eq.size else np.zeros(problem.b_eq.size)
    b_ub = problem.b_ub - pin_ub
    b_eq = problem.b_eq - pin_eq
    lb, ub = problem.lb[free], problem.ub[free]
    nf = free.size

    # shift to z >= 0 and append upper bounds as rows
    d_ub = b_ub - A_ub @ lb
    d_eq = b_eq - A_eq @ lb
    w = ub - lb

    m1, m2 = d_ub.size, d_eq.size
    rows_A = np.vstack([A_ub, np.eye(nf)]) if m1 else np.eye(nf)
    rows_b = np.concatenate([d_ub, w])
    # row layout: [ub rows (m1)] [bound rows (nf)] [eq rows (m2)]
    n_ineq = m1 + nf
    ncols = nf + n_ineq  # z columns + slack columns
    signs = np.ones(n_ineq + m2)

    M = np.zeros((n_ineq + m2, ncols))
    rhs = np.zeros(n_ineq + m2)
    M[:n_ineq, :nf] = rows_A
    M[:n_ineq, nf:] = np.eye(n_ineq)
    rhs[:n_ineq] = rows_b
    if m2:
        M[n_ineq:, :nf] = A_eq
        rhs[n_ineq:] = d_eq
    for i in range(n_ineq + m2):
        if rhs[i] < 0:
            M[i] *= -1.0
            rhs[i] *= -1.0
            signs[i] = -1.0

    # phase 1: artificials wherever no ready unit column exists
    basis = [-1] * (n_ineq + m2)
    art_cols = []
    for i in range(n_ineq):
        scol = nf + i
        if M[i, scol] == 1.0:
            basis[i] = scol
    art_needed = [i for i in range(n_ineq + m2) if basis[i] == -1]
    T = np.hstack([M, np.zeros((M.shape[0], len(art_needed))), rhs[:, None]])
    for k, i in enumerate(art_needed):
        col = ncols + k
        T[i, col] = 1.0
        basis[i] = col
        art_cols.append(col)

    total_cols = ncols + len(art_needed)
    budget = max_pivots or (400 + 60 * (T.shape[0] + total_cols))
    pivots = 0

    if art_cols:
        cost1 = np.zeros(total_cols)
        cost1[art_cols] = 1.0
        status, p1, obj_row = _simplex_core(T, basis, cost1, budget)
        pivots += p1
        if status == "numerical-failure":
            return LpSolution(status="numerical-failure", pivots=pivots)
        phase1 = -obj_row[-1]
        if phase1 > 1e-8 * max(1.0, scale):
            return LpSolution(status="infeasible", pivots=pivots, max_violation=float(phase1))
        # drive remaining artificials out of the basis
        for r in range(T.shape[0]):
            if basis[r] in art_cols:
                piv = np.nonzero(np.abs(T[r, :ncols]) > _PIVOT_TOL)[0]
                if piv.size:
                    _pivot(T, basis, r, int(piv[0]))
                    pivots += 1
        keep_rows = [r for r in range(T.shape[0]) if basis[r] not in art_cols]
        drop_rows = [r for r in range(T.shape[0]) if basis[r] in art_cols]
        if drop_rows:
            # redundant rows: artificial stays basic at zero level
            T = T[keep_rows]
            basis = [basis[r] for r in keep_rows]
        T = np.hstack([T[:, :ncols], T[:, -1:]])
        row_of = {}
        kept = keep_rows if drop_rows else list(range(n_ineq + m2))
        for newr, oldr in enumerate(kept):
            row_of[oldr] = newr
    else:
        row_of = {i: i for i in range(n_ineq + m2)}

    cost2 = np.zeros(T.shape[1] - 1)
    cost2[:nf] = c
    status, p2, obj_row = _simplex_core(T, basis, cost2, budget)
    pivots += p2
    if debug_sink is not None:
        debug_sink.append(tableau_text(T, basis))
    if status == "numerical-failure":
        return LpSolution(status="numerical-failure", pivots=pivots)
    if status == "unbounded":
        return LpSolution(status="unbounded", pivots=pivots)

    z = np.zeros(T.shape[1] - 1)
    for r, bcol in enumerate(basis):
        z[bcol] = T[r, -1]
    xf = lb + z[:nf]
    x = np.empty(n)
    x[free] = xf
    x[pinned] = xpin
    obj = float(problem.c @ x)

    # duals: solve B^T y = c_B over the surviving rows, then undo row signs
    Bmat = np.zeros((len(basis), len(basis)))
    rows_all = np.hstack([M, np.zeros((M.shape[0], 0))])
    surviving = sorted(row_of, key=lambda k: row_of[k])
    for j, bcol in enumerate(basis):
        Bmat[:, j] = rows_all[np.ix_(surviving, [bcol])].ravel()
    cB = cost2[basis]
    try:
        y_rows = np.linalg.solve(Bmat.T, cB)
    except np.linalg.LinAlgError:
        y_rows, *_ = np.linalg.lstsq(Bmat.T, cB, rcond=None)

    y_full = np.zeros(n_ineq + m2)
    for oldr in surviving:
        y_full[oldr] = y_rows[row_of[oldr]] * signs[oldr]

    # lagrangian sign convention: c + A_ub^T lam + A_eq^T nu + mu_ub - mu_lb = 0
    lam = np.maximum(-y_full[:m1], 0.0)
    mu_ubound_f = np.maximum(-y_full[m1 : m1 + nf], 0.0)
    nu = -y_full[m1 + nf :]
    stat_vec = c + A_ub.T @ lam + (A_eq.T @ nu if m2 else 0.0) + mu_ubound_f
    mu_lb_f = np.maximum(stat_vec, 0.0)

    dual_lb = np.zeros(n)
    dual_ubound = np.zeros(n)
    dual_lb[free] = mu_lb_f
    dual_ubound[free] = mu_ubound_f
    if pinned.size:
        # pinned coordinates sit at both bounds; their stationarity remainder
        # is absorbed by whichever bound multiplier keeps the right sign
        rem = problem.c[pinned].astype(float)
        if m1:
            rem = rem + problem.A_ub[:, pinned].T @ lam
        if m2:
            rem = rem + problem.A_eq[:, pinned].T @ nu
        dual_lb[pinned] = np.maximum(rem, 0.0)
        dual_ubound[pinned] = np.maximum(-rem, 0.0)

    res_dual = float(np.max(np.abs(stat_vec - mu_lb_f), initial=0.0))
    slack_ub = problem.b_ub - problem.A_ub @ x if m1 else np.zeros(0)
    res_primal = 0.0
    if m1:
        res_primal = max(res_primal, float(np.max(-slack_ub, initial=0.0)))
    if m2:
        res_primal = max(res_primal, float(np.max(np.abs(problem.A_eq @ x - problem.b_eq), initial=0.0)))
    res_primal = max(
        res_primal,
        float(np.max(problem.lb - x, initial=0.0)),
        float(np.max(x - problem.ub, initial=0.0)),
    )
    res_compl = 0.0
    if m1:
        res_compl = max(res_compl, float(np.max(np.abs(lam * slack_ub), initial=0.0)))
    res_compl = max(
        res_compl,
        float(np.max(np.abs(dual_lb * (x - problem.lb)), initial=0.0)),
        float(np.max(np.abs(dual_ubound * (problem.ub - x)), initial=0.0)),
    )

    dual_obj = float(
        -(lam @ problem.b_ub if m1 else 0.0)
        - (nu @ problem.b_eq if m2 else 0.0)
        - dual_ubound @ problem.ub
        + dual_lb @ problem.lb
    )
    # pinned columns absorb any stationarity remainder through their free duals
    sol = LpSolution(
        status="optimal", x=x, obj=obj, dual_ub=lam,
        dual_eq=nu if m2 else np.zeros(0),
        dual_lb=dual_lb, dual_ubound=dual_ubound,
        res_primal=res_primal, res_dual=res_dual, res_compl=res_compl,
        dual_obj=dual_obj, pivots=pivots,
    )
    tol = 1e-8 * (1.0 + scale)
    if res_primal > tol or res_dual > tol or res_compl > tol or sol.duality_gap() > 1e-8 * (1.0 + abs(obj)):
        sol.status = "numerical-failure"
    return sol


@dataclass
class DualCertificateReport:
    res_primal: float
    res_dual: float
    res_compl: float
    duality_gap: float
    ok: bool


def lp_dual_certificate(solution: LpSolution, problem: LpProblem, tol=None) -> DualCertificateReport:
    """Recompute the three KKT residual norms for an LP solution.

    Callers run this before trusting duals for cut generation.
    """
    if solution.status != "optimal":
        raise ModelError("dual certificate requires an optimal solution")
    scale = problem.scale()
    tol = tol if tol is not None else 1e-8 * (1.0 + scale)
    x = solution.x
    lam = solution.dual_ub
    nu = solution.dual_eq
    stat = problem.c.copy()
    if problem.A_ub.size:
        stat += problem.A_ub.T @ lam
    if problem.A_eq.size:
        stat += problem.A_eq.T @ nu
    stat += solution.dual_ubound - solution.dual_lb
    res_dual = float(np.max(np.abs(stat), initial=0.0))
    res_primal = 0.0
    res_compl = 0.0
    if problem.A_ub.size:
        s = problem.b_ub - problem.A_ub @ x
        res_primal = max(res_primal, float(np.max(-s, initial=0.0)))
        res_compl = max(res_compl, float(np.max(np.abs(lam * s), initial=0.0)))
    if problem.A_eq.size:
        res_primal = max(res_primal, float(np.max(np.abs(problem.A_eq @ x - problem.b_eq), initial=0.0)))
    res_primal = max(
        res_primal,
        float(np.max(problem.lb - x, initial=0.0)),
        float(np.max(x - problem.ub, initial=0.0)),
    )
    res_compl = max(
        res_compl,
        float(np.max(np.abs(solution.dual_lb * (x - problem.lb)), initial=0.0)),
        float(np.max(np.abs(solution.dual_ubound * (problem.ub - x)), initial=0.0)),
    )
    gap = solution.duality_gap()
    ok = res_primal <= tol and res_dual <= tol and res_compl <= tol and gap <= 1e-8 * (1.0 + abs(solution.obj))
    return DualCertificateReport(res_primal, res_dual, res_compl, gap, ok)
