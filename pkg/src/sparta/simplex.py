"""Bundled LP solver: bounded-variable two-phase revised simplex.

The basis inverse is represented by a sparse LU factorization plus a
product-form eta file that is rebuilt periodically.  Pricing is Dantzig
(most-negative reduced cost) with an automatic switch to Bland's least-index
rule while the objective stalls, which breaks cycling on degenerate bases.
Infeasible starting rows get one artificial column each; phase one drives
their sum to zero, phase two optimizes the real objective with the artificial
columns pinned.
"""

from __future__ import annotations

import math
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lp import (
    DEFAULT_SIZE_LIMIT,
    INFEASIBLE,
    LE,
    GE,
    EQ,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    NumericBreakdownError,
    SizeLimitError,
    SolveResult,
)

AT_LOWER = np.int8(0)
AT_UPPER = np.int8(1)
FREE_ZERO = np.int8(2)
IN_BASIS = np.int8(3)

_REFACTOR_EVERY = 120
_STALL_LIMIT = 500


class _Basis:
    """LU factorization of the basis plus the eta file accumulated since."""

    def __init__(self, cols: sp.csc_matrix):
        self.lu = spla.splu(cols.tocsc(), permc_spec="COLAMD")
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        z = self.lu.solve(v)
        for r, w in self.etas:
            zr = z[r] / w[r]
            z -= w * zr
            z[r] = zr
        return z

    def btran(self, v: np.ndarray) -> np.ndarray:
        z = v.copy()
        for r, w in reversed(self.etas):
            num = z[r] - (w @ z) + w[r] * z[r]
            z[r] = num / w[r]
        return self.lu.solve(z, trans="T")

    def push(self, r: int, w: np.ndarray) -> None:
        self.etas.append((r, w.copy()))

    @property
    def age(self) -> int:
        return len(self.etas)


def solve(lp: LinearProgram, tol: float = 1e-7, size_limit: int = DEFAULT_SIZE_LIMIT,
          max_iterations: int | None = None) -> SolveResult:
    """Solve ``lp`` to optimality, or detect infeasibility/unboundedness.

    Raises :class:`SizeLimitError` above ``size_limit`` variables and
    :class:`NumericBreakdownError` when residual checks fail after convergence
    or the iteration budget is exhausted.
    """
    start = time.perf_counter()
    n = lp.n_variables
    m = lp.n_constraints
    if n > size_limit:
        raise SizeLimitError(f"{lp.name}: {n} variables exceed the limit of {size_limit}")

    lb_s, ub_s = lp.bounds()
    c_real = lp.objective_vector()
    if m == 0:
        return _solve_unconstrained(lp, c_real, lb_s, ub_s, start)

    a_struct = lp.matrix()  # csr, shape (m, n)
    a_csc = a_struct.tocsc()
    at = a_struct.T  # csc view; at.dot(y) gives A^T y
    b = lp.rhs_vector()
    rels = lp.relations()

    # column space: structural | slack | artificial
    lb = np.concatenate([lb_s, np.zeros(m)])
    ub = np.concatenate([ub_s, np.zeros(m)])
    for i, rel in enumerate(rels):
        if rel == LE:
            lb[n + i], ub[n + i] = 0.0, math.inf
        elif rel == GE:
            lb[n + i], ub[n + i] = -math.inf, 0.0
        else:
            lb[n + i], ub[n + i] = 0.0, 0.0

    status = np.empty(n + m, dtype=np.int8)
    finite_lb = np.isfinite(lb)
    finite_ub = np.isfinite(ub)
    status[:] = FREE_ZERO
    status[finite_ub] = AT_UPPER
    status[finite_lb] = AT_LOWER  # prefer the lower bound when both are finite
    xval = np.where(status == AT_LOWER, lb, np.where(status == AT_UPPER, ub, 0.0))
    xval[~np.isfinite(xval)] = 0.0

    # initial basis: slack where the residual fits its bounds, artificial else
    resid = b - a_struct.dot(xval[:n])
    basis = np.arange(n, n + m)
    art_rows: list[int] = []
    art_signs: list[float] = []
    art_index: dict[int, int] = {}
    x_b = np.empty(m)
    for i in range(m):
        r = resid[i]
        if lb[n + i] - 1e-12 <= r <= ub[n + i] + 1e-12:
            x_b[i] = r
        else:
            # park the slack at its nearest bound, absorb the rest in an artificial
            if r > ub[n + i]:
                parked = ub[n + i]
            else:
                parked = lb[n + i]
            status[n + i] = AT_UPPER if parked == ub[n + i] else AT_LOWER
            xval[n + i] = parked
            value = r - parked
            sign = 1.0 if value > 0 else -1.0
            art_index[i] = len(art_rows)
            art_rows.append(i)
            art_signs.append(sign)
            basis[i] = n + m + art_index[i]
            x_b[i] = abs(value)
    status[basis[basis < n + m]] = IN_BASIS
    n_art = len(art_rows)
    art_signs_arr = np.array(art_signs)

    lb_all = np.concatenate([lb, np.zeros(n_art)])
    ub_all = np.concatenate([ub, np.full(n_art, math.inf)])

    def column(j: int) -> np.ndarray:
        col = np.zeros(m)
        if j < n:
            sl = slice(a_csc.indptr[j], a_csc.indptr[j + 1])
            col[a_csc.indices[sl]] = a_csc.data[sl]
        elif j < n + m:
            col[j - n] = 1.0
        else:
            k = j - n - m
            col[art_rows[k]] = art_signs_arr[k]
        return col

    def basis_matrix() -> sp.csc_matrix:
        rows_l: list[np.ndarray] = []
        cols_l: list[np.ndarray] = []
        vals_l: list[np.ndarray] = []
        for pos, j in enumerate(basis):
            if j < n:
                sl = slice(a_csc.indptr[j], a_csc.indptr[j + 1])
                rows_l.append(a_csc.indices[sl])
                vals_l.append(a_csc.data[sl])
                cols_l.append(np.full(a_csc.indptr[j + 1] - a_csc.indptr[j], pos))
            elif j < n + m:
                rows_l.append(np.array([j - n]))
                vals_l.append(np.array([1.0]))
                cols_l.append(np.array([pos]))
            else:
                k = j - n - m
                rows_l.append(np.array([art_rows[k]]))
                vals_l.append(np.array([art_signs_arr[k]]))
                cols_l.append(np.array([pos]))
        return sp.csc_matrix(
            (np.concatenate(vals_l), (np.concatenate(rows_l), np.concatenate(cols_l))),
            shape=(m, m),
        )

    def refactor() -> _Basis:
        try:
            fac = _Basis(basis_matrix())
        except RuntimeError as exc:  # singular basis
            raise NumericBreakdownError(f"{lp.name}: singular basis during refactorization") from exc
        return fac

    def recompute_xb(fac: _Basis) -> np.ndarray:
        xn = np.where(status == IN_BASIS, 0.0, xval)  # only nonbasic columns contribute
        rhs = b - a_struct.dot(xn[:n])
        rhs -= xn[n:]  # slack contribution (identity columns)
        # nonbasic artificials are pinned at zero, no contribution
        return fac.ftran(rhs)

    fac = refactor()

    feastol = tol * (1.0 + float(np.max(np.abs(b))) if m else 1.0)
    iter_cap = max_iterations or max(20_000, 60 * (m + n))
    total_iters = 0

    def run_phase(cost: np.ndarray, phase_one: bool) -> str:
        nonlocal fac, total_iters, x_b
        dtol = 1e-9 * max(1.0, float(np.max(np.abs(cost))) if cost.size else 1.0)
        bland = False
        stall = 0
        idx_ns = np.arange(n + m)
        fixed = lb[: n + m] == ub[: n + m]
        cost_all = np.concatenate([cost, np.full(n_art, 1.0 if phase_one else 0.0)])
        while True:
            if total_iters > iter_cap:
                raise NumericBreakdownError(
                    f"{lp.name}: iteration budget {iter_cap} exhausted (phase {1 if phase_one else 2})"
                )
            total_iters += 1
            if fac.age > _REFACTOR_EVERY:
                fac = refactor()
                x_b = recompute_xb(fac)

            cb = cost_all[basis]
            y = fac.btran(cb)
            rc = np.empty(n + m)
            rc[:n] = cost[:n] - at.dot(y)
            rc[n:] = cost[n:] - y

            nonbasic = status != IN_BASIS
            can_enter = nonbasic & ~fixed
            lower_viol = can_enter & (status == AT_LOWER) & (rc < -dtol)
            upper_viol = can_enter & (status == AT_UPPER) & (rc > dtol)
            free_viol = can_enter & (status == FREE_ZERO) & (np.abs(rc) > dtol)
            any_viol = lower_viol | upper_viol | free_viol
            if not any_viol.any():
                return "optimal"

            if bland:
                q = int(idx_ns[any_viol][0])
            else:
                viol_scores = np.where(any_viol, np.abs(rc), 0.0)
                q = int(np.argmax(viol_scores))
            if lower_viol[q]:
                dirn = 1.0
            elif upper_viol[q]:
                dirn = -1.0
            else:
                dirn = -math.copysign(1.0, rc[q])

            w = fac.ftran(column(q))
            denom = dirn * w
            lb_b = lb_all[basis]
            ub_b = ub_all[basis]
            ptol = 1e-9
            t_hit = np.full(m, math.inf)
            dec = denom > ptol
            inc = denom < -ptol
            with np.errstate(invalid="ignore", divide="ignore"):
                t_hit[dec] = (x_b[dec] - lb_b[dec]) / denom[dec]
                t_hit[inc] = (x_b[inc] - ub_b[inc]) / denom[inc]
            t_hit = np.maximum(t_hit, 0.0)
            t_basic = float(t_hit.min()) if m else math.inf
            flip_range = ub[q] - lb[q] if q < n + m else math.inf

            if not math.isfinite(t_basic) and not math.isfinite(flip_range):
                if phase_one:
                    raise NumericBreakdownError(f"{lp.name}: unbounded phase-one direction")
                return "unbounded"

            if flip_range <= t_basic:
                step = flip_range
                x_b -= step * denom
                status[q] = AT_UPPER if status[q] == AT_LOWER else AT_LOWER
                xval[q] = ub[q] if status[q] == AT_UPPER else lb[q]
            else:
                step = t_basic
                ties = np.flatnonzero(t_hit <= step + 1e-12)
                if bland:
                    leave_pos = int(ties[np.argmin(basis[ties])])
                else:
                    leave_pos = int(ties[np.argmax(np.abs(denom[ties]))])
                if abs(w[leave_pos]) < 1e-8 and fac.age:
                    # stale factorization may be to blame; rebuild and re-price
                    fac = refactor()
                    x_b = recompute_xb(fac)
                    continue
                if abs(w[leave_pos]) < 1e-10:
                    raise NumericBreakdownError(f"{lp.name}: pivot element vanished")
                x_b -= step * denom
                leaving = int(basis[leave_pos])
                hit_lower = denom[leave_pos] > 0
                if leaving < n + m:
                    status[leaving] = AT_LOWER if hit_lower else AT_UPPER
                    xval[leaving] = lb_all[leaving] if hit_lower else ub_all[leaving]
                else:  # artificial leaves for good
                    ub_all[leaving] = 0.0
                enter_from = xval[q] if q < n + m else 0.0
                x_b[leave_pos] = enter_from + dirn * step
                basis[leave_pos] = q
                status[q] = IN_BASIS
                fac.push(leave_pos, w)

            if step * abs(rc[q]) <= 1e-12 * (1.0 + abs(float(cb @ x_b))):
                stall += 1
                if stall > _STALL_LIMIT:
                    bland = True
            else:
                stall = 0
                bland = False

    # phase one
    if n_art:
        run_phase(np.zeros(n + m), phase_one=True)
        art_mask = basis >= n + m
        art_total = float(np.abs(x_b[art_mask]).sum()) if art_mask.any() else 0.0
        if art_total > feastol:
            return SolveResult(INFEASIBLE, math.nan, np.full(n, math.nan), total_iters,
                               time.perf_counter() - start)
        x_b[art_mask] = 0.0
        ub_all[n + m:] = 0.0  # pin every artificial for phase two

    # phase two
    cost2 = np.concatenate([c_real, np.zeros(m)])
    outcome = run_phase(cost2, phase_one=False)
    if outcome == "unbounded":
        return SolveResult(UNBOUNDED, -math.inf, np.full(n, math.nan), total_iters,
                           time.perf_counter() - start)

    # assemble, verify, and clean the primal point
    fac = refactor()
    x_b = recompute_xb(fac)
    x_all = np.concatenate([xval, np.zeros(n_art)])
    x_all[basis] = x_b
    x_struct = x_all[:n]

    bound_drift = float(np.max(np.maximum(lb_s - x_struct, x_struct - ub_s), initial=0.0))
    residual = a_struct.dot(x_struct) + x_all[n:n + m] - b
    for k in range(n_art):
        residual[art_rows[k]] += art_signs_arr[k] * x_all[n + m + k]
    res_norm = float(np.max(np.abs(residual), initial=0.0))
    if res_norm > 50 * feastol or bound_drift > 50 * feastol:
        raise NumericBreakdownError(
            f"{lp.name}: converged point violates constraints "
            f"(residual {res_norm:.3e}, bound drift {bound_drift:.3e})"
        )
    x_struct = np.clip(x_struct, lb_s, ub_s)
    objective = float(c_real @ x_struct) + lp.objective_constant
    return SolveResult(OPTIMAL, objective, x_struct, total_iters, time.perf_counter() - start)


def _solve_unconstrained(lp: LinearProgram, c: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                         start: float) -> SolveResult:
    """No rows: every variable independently sits at its cheaper bound."""
    x = np.zeros(lp.n_variables)
    for j in range(lp.n_variables):
        if c[j] > 0:
            if not math.isfinite(lb[j]):
                return SolveResult(UNBOUNDED, -math.inf, np.full(lp.n_variables, math.nan), 0,
                                   time.perf_counter() - start)
            x[j] = lb[j]
        elif c[j] < 0:
            if not math.isfinite(ub[j]):
                return SolveResult(UNBOUNDED, -math.inf, np.full(lp.n_variables, math.nan), 0,
                                   time.perf_counter() - start)
            x[j] = ub[j]
        else:
            if math.isfinite(lb[j]):
                x[j] = lb[j]
            elif math.isfinite(ub[j]):
                x[j] = ub[j]
    objective = float(c @ x) + lp.objective_constant
    return SolveResult(OPTIMAL, objective, x, 0, time.perf_counter() - start)
