"""Two-phase bounded-variable primal simplex for LP relaxations.

``solve_lp`` is the one-shot entry point; ``LpWorkspace`` keeps the
constraint matrix of one instance around so branch and bound can
re-solve under changed variable bounds with warm starts.

Conventions: the relaxation is solved in minimization form (maximize
instances are canonicalized internally and the reported objective is
negated back to the original sense).  Row duals and reduced costs
always refer to the minimization form.  A ranged row ``lhs <= a.x <=
rhs`` reports status AtLower/AtUpper when active at the corresponding
side and Basic when slack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Constraint, MipInstance, canonicalize

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 100

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

BASIC = "basic"
AT_LOWER = "at_lower"
AT_UPPER = "at_upper"

_STATUS_NAME = {
    _kernels.OPTIMAL: OPTIMAL,
    _kernels.INFEASIBLE: INFEASIBLE,
    _kernels.UNBOUNDED: UNBOUNDED,
}
_VSTAT_NAME = {
    _kernels.BASIC: BASIC,
    _kernels.AT_LOWER: AT_LOWER,
    _kernels.AT_UPPER: AT_UPPER,
    # nonbasic free variables sit at value 0; reported as at_lower
    _kernels.FREE: AT_LOWER,
}


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    var_status: list[str]
    row_status: list[str]
    iterations: int


@dataclass
class WarmStart:
    """Basis snapshot reusable by a later solve on the same workspace."""

    basis: np.ndarray
    vstat: np.ndarray


class LpWorkspace:
    """Dense LP data for one minimization instance, reusable across solves."""

    def __init__(self, inst: MipInstance):
        if inst.sense != "min":
            raise ValueError("LpWorkspace expects a canonical (min) instance")
        self.inst = inst
        n = inst.n_vars
        m = len(inst.constraints)
        self.n = n
        self.m = m
        N = n + m
        G = np.zeros((m, N))
        for i, con in enumerate(inst.constraints):
            for j, a in con.coeffs.items():
                G[i, j] = a
            G[i, n + i] = -1.0
        self.G = np.ascontiguousarray(G)
        self.GT = np.ascontiguousarray(G.T)
        c = np.zeros(N)
        for j, cj in inst.objective.items():
            c[j] = cj
        self.c = c
        low = np.empty(N)
        upp = np.empty(N)
        for j, v in enumerate(inst.variables):
            low[j] = v.lb
            upp[j] = v.ub
        for i, con in enumerate(inst.constraints):
            low[n + i] = con.lhs
            upp[n + i] = con.rhs
        self.base_low = low
        self.base_upp = upp
        self.max_iter = 2000 + 30 * N
        self.bland_after = 10 * N
        # re-solves from a dual-feasible basis should take few pivots;
        # past this cap the primal fallback is the better bet
        self.dual_max_iter = 500 + 2 * m

    def _cold_start(self, low, upp):
        n, m = self.n, self.m
        basis = np.arange(n, n + m, dtype=np.int64)
        vstat = np.empty(n + m, dtype=np.int8)
        for j in range(n):
            if np.isfinite(low[j]):
                vstat[j] = _kernels.AT_LOWER
            elif np.isfinite(upp[j]):
                vstat[j] = _kernels.AT_UPPER
            else:
                vstat[j] = _kernels.FREE
        vstat[n:] = _kernels.BASIC
        return basis, vstat

    def _snap_vstat(self, vstat, low, upp):
        """Move nonbasic statuses off bounds that are no longer finite."""
        for j in range(self.n + self.m):
            s = vstat[j]
            if s == _kernels.AT_LOWER and not np.isfinite(low[j]):
                vstat[j] = _kernels.AT_UPPER if np.isfinite(upp[j]) else _kernels.FREE
            elif s == _kernels.AT_UPPER and not np.isfinite(upp[j]):
                vstat[j] = _kernels.AT_LOWER if np.isfinite(low[j]) else _kernels.FREE

    def _package(self, status, basis, vstat, z, y, d, iters):
        n = self.n
        sol = LpSolution(
            status=_STATUS_NAME[status],
            x=z[:n].copy(),
            objective=float(np.dot(self.c, z)),
            duals=np.asarray(y, dtype=float).copy(),
            reduced_costs=np.asarray(d[:n], dtype=float).copy(),
            var_status=[_VSTAT_NAME[int(s)] for s in vstat[:n]],
            row_status=[_VSTAT_NAME[int(s)] for s in vstat[n:]],
            iterations=int(iters),
        )
        return sol, WarmStart(basis.copy(), vstat.copy())

    def solve(self, low_struct=None, upp_struct=None, warm: WarmStart | None = None):
        """Solve under optional structural bound arrays; return (LpSolution, WarmStart)."""
        n, m = self.n, self.m
        low = self.base_low.copy()
        upp = self.base_upp.copy()
        if low_struct is not None:
            low[:n] = low_struct
        if upp_struct is not None:
            upp[:n] = upp_struct
        if m == 0:
            return self._solve_unconstrained(low, upp)

        if warm is not None:
            # bound changes keep the old optimal basis dual feasible, so a
            # dual re-solve is usually a handful of pivots; on any trouble
            # fall through to the primal attempts below
            basis = warm.basis.copy()
            vstat = warm.vstat.copy()
            self._snap_vstat(vstat, low, upp)
            z = np.zeros(n + m)
            try:
                status, iters, y, d = _kernels.dual_core(
                    self.G, self.GT, self.c, low, upp, basis, vstat, z,
                    FEAS_TOL, PIVOT_TOL, self.dual_max_iter, self.bland_after,
                    REFACTOR_EVERY,
                )
            except np.linalg.LinAlgError:
                status = _kernels.NUMERICAL
            if status in (_kernels.OPTIMAL, _kernels.INFEASIBLE):
                return self._package(status, basis, vstat, z, y, d, iters)

        attempts = []
        if warm is not None:
            attempts.append((warm.basis.copy(), warm.vstat.copy()))
        attempts.append(self._cold_start(low, upp))

        last_exc = None
        for basis, vstat in attempts:
            self._snap_vstat(vstat, low, upp)
            z = np.zeros(n + m)
            try:
                status, iters, y, d = _kernels.simplex_core(
                    self.G, self.GT, self.c, low, upp, basis, vstat, z,
                    FEAS_TOL, PIVOT_TOL, self.max_iter, self.bland_after,
                    REFACTOR_EVERY,
                )
            except np.linalg.LinAlgError as exc:
                last_exc = exc
                continue
            if status in (_kernels.ITER_LIMIT, _kernels.NUMERICAL):
                last_exc = RuntimeError(f"simplex did not converge (code {status})")
                continue
            return self._package(status, basis, vstat, z, y, d, iters)
        raise RuntimeError(f"simplex failed: {last_exc}")

    def _solve_unconstrained(self, low, upp):
        n = self.n
        x = np.zeros(n)
        stat = []
        for j in range(n):
            cj = self.c[j]
            if cj > 0.0 or (cj == 0.0 and np.isfinite(low[j])):
                tgt, s = low[j], AT_LOWER
            elif cj < 0.0 or np.isfinite(upp[j]):
                tgt, s = upp[j], AT_UPPER
            else:
                tgt, s = 0.0, AT_LOWER
            if not np.isfinite(tgt):
                if cj == 0.0:
                    tgt, s = 0.0, AT_LOWER
                else:
                    sol = LpSolution(UNBOUNDED, x, -np.inf, np.zeros(0), self.c[:n].copy(),
                                     [AT_LOWER] * n, [], 0)
                    return sol, WarmStart(np.zeros(0, dtype=np.int64),
                                          np.zeros(n, dtype=np.int8))
            x[j] = tgt
            stat.append(s)
        sol = LpSolution(OPTIMAL, x, float(np.dot(self.c[:n], x)), np.zeros(0),
                         self.c[:n].copy(), stat, [], 0)
        return sol, WarmStart(np.zeros(0, dtype=np.int64), np.zeros(n, dtype=np.int8))


def solve_lp(inst: MipInstance, bound_overrides=None, extra_rows=None) -> LpSolution:
    """Solve the LP relaxation of an instance.

    Parameters
    ----------
    inst : MipInstance
        Any valid instance; maximize senses are handled by negation and
        the reported objective is in the instance's original sense.
    bound_overrides : dict[int, tuple[float, float]], optional
        Per-variable (lb, ub) replacing the stored bounds, as used by
        branching.
    extra_rows : list[Constraint], optional
        Additional ranged rows appended for this solve only.

    Returns
    -------
    LpSolution
        With duals and reduced costs in minimization form.
    """
    canon = canonicalize(inst)
    if extra_rows:
        canon = MipInstance(
            name=canon.name,
            sense=canon.sense,
            variables=canon.variables,
            constraints=list(canon.constraints) + list(extra_rows),
            objective=canon.objective,
            sense_flipped=canon.sense_flipped,
        )
    ws = LpWorkspace(canon)
    low = ws.base_low[: ws.n].copy()
    upp = ws.base_upp[: ws.n].copy()
    if bound_overrides:
        for j, (lb, ub) in bound_overrides.items():
            low[j] = lb
            upp[j] = ub
    sol, _ = ws.solve(low, upp)
    if canon.sense_flipped and np.isfinite(sol.objective):
        sol.objective = -sol.objective
    elif canon.sense_flipped and sol.status == UNBOUNDED:
        sol.objective = np.inf
    return sol


def dual_objective(sol: LpSolution, inst: MipInstance, tol: float = 1e-9) -> float:
    """Recompute the dual objective from duals, reduced costs and bounds.

    Uses the bound-contribution form for the homogeneous slack
    formulation: positive reduced costs pair with lower bounds, negative
    with upper bounds; row duals pair with lhs/rhs the same way.  The
    instance must be the minimization form the LP was solved in.
    """
    total = 0.0
    for j, v in enumerate(inst.variables):
        dj = sol.reduced_costs[j]
        if dj > tol:
            total += dj * v.lb
        elif dj < -tol:
            total += dj * v.ub
    for i, con in enumerate(inst.constraints):
        yi = sol.duals[i]
        if yi > tol:
            total += yi * con.lhs
        elif yi < -tol:
            total += yi * con.rhs
    return total
