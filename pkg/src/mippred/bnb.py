"""Branch and bound over the simplex LP relaxation.

Branching is most-fractional (ties to the lowest index), node selection
is best-bound with depth-first plunging: after branching, the child on
the rounded side of the fractional value is explored next and the
sibling parked in a best-bound heap.  Node LPs warm-start from the
parent basis; correctness does not depend on that.

Also here: the root-information pass used by feature extraction
(presolve, root LP, up/down locks, zeroed pseudocosts), the
local-branching style cut that restricts Hamming distance to a partial
assignment, and the exact two-child root branching on that distance.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BINARY,
    INT_TOL,
    INTEGER,
    Constraint,
    MipInstance,
    Solution,
    canonicalize,
    evaluate_solution,
)
from .simplex import INFEASIBLE as LP_INFEASIBLE
from .simplex import OPTIMAL as LP_OPTIMAL
from .simplex import UNBOUNDED as LP_UNBOUNDED
from .simplex import LpSolution, LpWorkspace, WarmStart

OPTIMIZE = "optimize"
FIRST_FEASIBLE = "first_feasible"

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
LIMIT_REACHED = "limit_reached"


@dataclass
class BnbConfig:
    time_limit_s: float = math.inf
    node_limit: int | None = None
    gap_limit: float = 1e-9
    mode: str = OPTIMIZE
    branching: str = "most_fractional"
    node_selection: str = "best_bound_plunge"
    seed: int = 0


@dataclass
class SolveResult:
    """Outcome of one solve, objective and bound in the instance's own sense.

    For maximization instances ``lower_bound`` is the corresponding dual
    (upper) bound.  ``lb_history`` records the canonical minimization
    bound each time it improves, so it is nondecreasing for either
    sense.  ``heuristic`` marks results whose bound is not valid for the
    original instance (set by cut-augmented solves).
    """

    status: str
    incumbent: Solution | None
    objective: float | None
    lower_bound: float
    nodes: int
    wall_time_s: float
    heuristic: bool = False
    lb_history: list = field(default_factory=list)


@dataclass
class RootInfo:
    """Presolved canonical instance plus everything features need at the root."""

    instance: MipInstance
    lp: LpSolution
    up_locks: np.ndarray
    down_locks: np.ndarray
    pseudocost_up: np.ndarray
    pseudocost_down: np.ndarray
    objective_offset: float
    var_map: list[int]
    sense_flipped: bool


class _Node:
    __slots__ = ("bound", "low", "upp", "warm", "depth")

    def __init__(self, bound, low, upp, warm, depth):
        self.bound = bound
        self.low = low
        self.upp = upp
        self.warm = warm
        self.depth = depth


def _repair_rounding(canon, lp_x, x_cand, int_vars, low0, upp0, col_rows):
    """Greedy repair of a rounded point: while a row is violated, move one
    integer variable a unit step in the direction that shrinks the
    violation, preferring the variable the LP likes most for that
    direction (large LP value for up-steps, small for down-steps).
    Returns True when every row ended inside its range; the attempt is
    capped, not exhaustive."""
    acts = np.empty(len(canon.constraints))
    for i, con in enumerate(canon.constraints):
        acts[i] = sum(a * x_cand[j] for j, a in con.coeffs.items())
    int_set = set(int_vars)
    flips = 0
    cap = 2 * len(x_cand) + 10
    passes = 0
    changed = True
    while changed and flips < cap and passes < 50:
        changed = False
        passes += 1
        for i, con in enumerate(canon.constraints):
            if acts[i] < con.lhs - INT_TOL:
                need_up = True
            elif acts[i] > con.rhs + INT_TOL:
                need_up = False
            else:
                continue
            best_j = -1
            best_key = -np.inf
            for j, a in con.coeffs.items():
                if a == 0.0 or j not in int_set:
                    continue
                up = (a > 0.0) == need_up
                room = (upp0[j] - x_cand[j]) if up else (x_cand[j] - low0[j])
                if room < 1.0:
                    continue
                key = lp_x[j] if up else -lp_x[j]
                if key > best_key:
                    best_key = key
                    best_j = j
            if best_j < 0:
                continue
            up = (con.coeffs[best_j] > 0.0) == need_up
            step = 1.0 if up else -1.0
            x_cand[best_j] += step
            for i2, a2 in col_rows[best_j]:
                acts[i2] += a2 * step
            flips += 1
            changed = True
            if flips >= cap:
                break
    for i, con in enumerate(canon.constraints):
        if acts[i] < con.lhs - INT_TOL or acts[i] > con.rhs + INT_TOL:
            return False
    return True


def solve(inst: MipInstance, cfg: BnbConfig | None = None) -> SolveResult:
    """Solve a MIP to the configured limits.

    Status optimal/infeasible are proved; feasible means an incumbent
    exists but optimality was not proved (limit hit, or first-feasible
    mode); limit_reached means a limit hit before any incumbent.
    """
    cfg = cfg or BnbConfig()
    t0 = time.perf_counter()
    canon = canonicalize(inst)
    ws = LpWorkspace(canon)
    n = canon.n_vars
    c_min = canon.objective_vector()
    int_vars = [j for j, v in enumerate(canon.variables)
                if v.vtype in (BINARY, INTEGER)]
    low0 = ws.base_low[:n].copy()
    upp0 = ws.base_upp[:n].copy()
    col_rows = [[] for _ in range(n)]
    for i, con in enumerate(canon.constraints):
        for j, a in con.coeffs.items():
            col_rows[j].append((i, a))

    heap: list[tuple[float, int, _Node]] = []
    plunge: list[_Node] = []
    seq = 0
    root = _Node(-math.inf, low0, upp0, None, 0)
    plunge.append(root)

    incumbent: Solution | None = None
    inc_min = math.inf
    nodes_done = 0
    lb_history: list[float] = []
    proved = False
    node_limit = cfg.node_limit if cfg.node_limit is not None else math.inf

    def open_lb():
        lb = math.inf
        if heap:
            lb = heap[0][0]
        for nd in plunge:
            lb = min(lb, nd.bound)
        return lb

    def record_lb(value):
        # the reported global bound is capped at the incumbent value, so
        # it can never pass the optimum once the best subtree is closed
        value = min(value, inc_min)
        if not lb_history or value > lb_history[-1] + 0.0:
            lb_history.append(value)

    stop = None
    while heap or plunge:
        if time.perf_counter() - t0 > cfg.time_limit_s:
            stop = "time"
            break
        if nodes_done >= node_limit:
            stop = "nodes"
            break
        node = plunge.pop() if plunge else heapq.heappop(heap)[2]
        prune_eps = cfg.gap_limit * (1.0 + abs(inc_min)) if incumbent else 0.0
        if node.bound >= inc_min - prune_eps:
            continue
        lp, warm = ws.solve(node.low, node.upp, node.warm)
        nodes_done += 1
        if lp.status == LP_INFEASIBLE:
            record_lb(open_lb() if (heap or plunge) else inc_min)
            continue
        if lp.status == LP_UNBOUNDED:
            raise RuntimeError("unbounded LP relaxation; instance out of scope")
        node.bound = lp.objective
        record_lb(min(open_lb(), node.bound))
        if lp.objective >= inc_min - prune_eps:
            continue

        # rounding probes: integral candidates snapped from the node LP
        # (nearest / floor / ceil / nearest-with-repair), kept when
        # feasible and improving
        for mode in (0, 1, 2, 3):
            x_cand = lp.x.copy()
            for j in int_vars:
                v = x_cand[j]
                if mode == 1:
                    r = math.floor(v)
                elif mode == 2:
                    r = math.ceil(v)
                else:
                    r = math.floor(v + 0.5)
                x_cand[j] = min(max(float(r), low0[j]), upp0[j])
            if mode == 3 and not _repair_rounding(canon, lp.x, x_cand,
                                                 int_vars, low0, upp0,
                                                 col_rows):
                continue
            cand_min = float(np.dot(c_min, x_cand))
            if cand_min >= inc_min:
                continue
            cand = evaluate_solution(inst, x_cand)
            if cand.feasible:
                incumbent = cand
                inc_min = cand_min
        if incumbent is not None and cfg.mode == FIRST_FEASIBLE:
            stop = "first_feasible"
            break

        frac_j = -1
        frac_best = INT_TOL
        for j in int_vars:
            f = lp.x[j] - math.floor(lp.x[j])
            score = min(f, 1.0 - f)
            if score > frac_best:
                frac_best = score
                frac_j = j
        if frac_j < 0:
            x_snap = lp.x.copy()
            for j in int_vars:
                x_snap[j] = round(x_snap[j])
            cand = evaluate_solution(inst, x_snap)
            cand_min = float(np.dot(c_min, x_snap))
            if cand.feasible and cand_min < inc_min:
                incumbent = cand
                inc_min = cand_min
                if cfg.mode == FIRST_FEASIBLE:
                    stop = "first_feasible"
                    break
            continue

        f = lp.x[frac_j] - math.floor(lp.x[frac_j])
        lo_child = _Node(lp.objective, node.low.copy(), node.upp.copy(), warm, node.depth + 1)
        lo_child.upp[frac_j] = math.floor(lp.x[frac_j])
        hi_child = _Node(lp.objective, node.low.copy(), node.upp.copy(), warm, node.depth + 1)
        hi_child.low[frac_j] = math.floor(lp.x[frac_j]) + 1.0
        first, second = (hi_child, lo_child) if f >= 0.5 else (lo_child, hi_child)
        seq += 1
        heapq.heappush(heap, (second.bound, seq, second))
        plunge.append(first)

        if incumbent is not None:
            lb_now = open_lb()
            if inc_min - lb_now <= cfg.gap_limit * (1.0 + abs(inc_min)):
                proved = True
                break

    if stop is None and not proved and not heap and not plunge:
        proved = True

    if proved:
        lb_min = inc_min if incumbent is not None else math.inf
        status = OPTIMAL if incumbent is not None else INFEASIBLE
    else:
        lb_min = min(open_lb(), inc_min)
        status = FEASIBLE if incumbent is not None else LIMIT_REACHED
    record_lb(lb_min)

    if canon.sense_flipped:
        lower_bound = -lb_min
    else:
        lower_bound = lb_min
    return SolveResult(
        status=status,
        incumbent=incumbent,
        objective=incumbent.objective if incumbent is not None else None,
        lower_bound=lower_bound,
        nodes=nodes_done,
        wall_time_s=time.perf_counter() - t0,
        lb_history=lb_history,
    )


# ---------------------------------------------------------------------------
# root information for feature extraction


def _presolve(canon: MipInstance):
    """Drop empty rows and substitute fixed variables; return reduced instance."""
    keep_vars = []
    fixed: dict[int, float] = {}
    for j, v in enumerate(canon.variables):
        if v.lb == v.ub:
            fixed[j] = v.lb
        else:
            keep_vars.append(j)
    remap = {j: k for k, j in enumerate(keep_vars)}
    offset = 0.0
    objective = {}
    for j, cj in canon.objective.items():
        if j in fixed:
            offset += cj * fixed[j]
        else:
            objective[remap[j]] = cj
    constraints = []
    for con in canon.constraints:
        shift = sum(a * fixed[j] for j, a in con.coeffs.items() if j in fixed)
        coeffs = {remap[j]: a for j, a in con.coeffs.items() if j not in fixed and a != 0.0}
        if not coeffs:
            continue
        lhs = con.lhs - shift if math.isfinite(con.lhs) else con.lhs
        rhs = con.rhs - shift if math.isfinite(con.rhs) else con.rhs
        constraints.append(Constraint(con.name, coeffs, lhs, rhs))
    variables = [canon.variables[j] for j in keep_vars]
    reduced = MipInstance(
        canon.name, canon.sense, variables, constraints, objective,
        sense_flipped=canon.sense_flipped,
    )
    return reduced, keep_vars, offset


def collect_root_info(inst: MipInstance) -> RootInfo:
    """Presolve, solve the root LP, and compute locks and pseudocosts.

    Pseudocosts are all zero at the root; consumers guard derived ratios
    with +1 denominators.  Locks count the rows that can be violated by
    moving a variable up respectively down (an equality row counts for
    both directions).
    """
    canon = canonicalize(inst)
    reduced, keep_vars, offset = _presolve(canon)
    lp, _ = LpWorkspace(reduced).solve()
    n = reduced.n_vars
    up = np.zeros(n, dtype=np.int64)
    down = np.zeros(n, dtype=np.int64)
    for con in reduced.constraints:
        fin_lhs = math.isfinite(con.lhs)
        fin_rhs = math.isfinite(con.rhs)
        for j, a in con.coeffs.items():
            if a > 0.0:
                if fin_rhs:
                    up[j] += 1
                if fin_lhs:
                    down[j] += 1
            elif a < 0.0:
                if fin_lhs:
                    up[j] += 1
                if fin_rhs:
                    down[j] += 1
    return RootInfo(
        instance=reduced,
        lp=lp,
        up_locks=up,
        down_locks=down,
        pseudocost_up=np.zeros(n),
        pseudocost_down=np.zeros(n),
        objective_offset=offset,
        var_map=keep_vars,
        sense_flipped=canon.sense_flipped,
    )


# ---------------------------------------------------------------------------
# Hamming-distance cut and root branching


def _distance_coeffs(inst: MipInstance, x_hat, S):
    binaries = set(inst.binary_indices())
    coeffs = {}
    n_ones = 0
    for j in S:
        if j not in binaries:
            raise ValueError(f"index {j} in S is not a binary variable")
        if x_hat[j] > 0.5:
            coeffs[j] = -1.0
            n_ones += 1
        else:
            coeffs[j] = 1.0
    return coeffs, n_ones


def _with_row(inst: MipInstance, row: Constraint) -> MipInstance:
    return MipInstance(
        name=inst.name,
        sense=inst.sense,
        variables=list(inst.variables),
        constraints=list(inst.constraints) + [row],
        objective=dict(inst.objective),
        sense_flipped=inst.sense_flipped,
    )


def apply_local_branching_cut(inst: MipInstance, x_hat, S, phi: float) -> MipInstance:
    """Restrict the Hamming distance to x_hat on S to at most phi.

    Materialized as the ranged row ``sum_{j in S, x_hat_j=0} x_j -
    sum_{j in S, x_hat_j=1} x_j <= phi - |{j in S : x_hat_j = 1}|``.
    With phi = 0 this is equivalent to fixing the variables in S.  An
    empty S leaves the instance unchanged (the row would be vacuous and
    rows need at least one coefficient).
    """
    if phi < 0:
        raise ValueError("phi must be nonnegative")
    S = list(S)
    if not S:
        return _with_row_none(inst)
    coeffs, n_ones = _distance_coeffs(inst, x_hat, S)
    row = Constraint(
        f"dist_cut_{len(inst.constraints)}", coeffs, -math.inf, float(phi) - n_ones
    )
    return _with_row(inst, row)


def _with_row_none(inst: MipInstance) -> MipInstance:
    return MipInstance(
        name=inst.name,
        sense=inst.sense,
        variables=list(inst.variables),
        constraints=list(inst.constraints),
        objective=dict(inst.objective),
        sense_flipped=inst.sense_flipped,
    )


def root_branch_solve(inst: MipInstance, x_hat, S, phi: float,
                      cfg: BnbConfig | None = None) -> SolveResult:
    """Branch at the root on the Hamming distance to x_hat over S.

    The left child restricts distance <= phi, the right child distance
    >= phi + 1; together they partition the feasible set, so the merged
    result keeps global optimality (unlike the cut-only heuristic).
    """
    if phi < 0:
        raise ValueError("phi must be nonnegative")
    cfg = cfg or BnbConfig()
    S = list(S)
    if not S:
        left = solve(inst, cfg)
        left.heuristic = False
        return left
    coeffs, n_ones = _distance_coeffs(inst, x_hat, S)
    left_row = Constraint("dist_left", dict(coeffs), -math.inf, float(phi) - n_ones)
    right_row = Constraint("dist_right", dict(coeffs), float(phi) + 1.0 - n_ones, math.inf)
    left = solve(_with_row(inst, left_row), cfg)
    right = solve(_with_row(inst, right_row), cfg)

    maximize = inst.sense == "max"

    def better(a: Solution | None, b: Solution | None):
        if a is None:
            return b
        if b is None:
            return a
        if maximize:
            return a if a.objective >= b.objective else b
        return a if a.objective <= b.objective else b

    inc = better(left.incumbent, right.incumbent)
    if maximize:
        lower_bound = max(left.lower_bound, right.lower_bound)
    else:
        lower_bound = min(left.lower_bound, right.lower_bound)
    closed = {OPTIMAL, INFEASIBLE}
    if left.status in closed and right.status in closed:
        status = OPTIMAL if inc is not None else INFEASIBLE
        if inc is not None:
            lower_bound = inc.objective
    else:
        status = FEASIBLE if inc is not None else LIMIT_REACHED
    return SolveResult(
        status=status,
        incumbent=inc,
        objective=inc.objective if inc is not None else None,
        lower_bound=lower_bound,
        nodes=left.nodes + right.nodes,
        wall_time_s=left.wall_time_s + right.wall_time_s,
    )
