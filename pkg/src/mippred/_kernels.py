"""Hot numeric kernel: a dense bounded-variable primal simplex core.

The same source function is compiled with numba when available and run
as plain numpy/Python otherwise.  Set ``MIPPRED_NO_NUMBA=1`` to force
the interpreted path.  Both paths execute the identical sequence of
floating-point operations, so results agree bitwise.

The core works on the computational form ``G z = 0`` with
``G = [A | -I]``: one slack per ranged row, slack bounds equal to the
row's (lhs, rhs).  Phase 1 minimizes total bound infeasibility of the
basic variables (composite method, no artificial columns), which makes
warm starts from an arbitrary basis cheap; phase 2 minimizes the true
cost.  Pricing uses devex weights (reset on overflow) and switches to
Bland's rule after a run of degenerate pivots; the basis inverse is
refactorized from scratch at a fixed pivot interval.

A separate dual simplex loop serves re-solves after bound changes: the
optimal basis of the parent problem stays dual feasible when only
bounds move, so driving the handful of out-of-bound basics to their
bounds takes few pivots.  It bails out (for a primal fallback) when
the starting basis is not dual feasible.
"""

from __future__ import annotations

import os

import numpy as np

# status codes returned by the core
OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITER_LIMIT = 3
NUMERICAL = 4
NOT_DUAL_FEASIBLE = 5

# nonbasic / basic codes in vstat
BASIC = 0
AT_LOWER = 1
AT_UPPER = 2
FREE = 3


def _simplex_core(G, GT, c, low, upp, basis, vstat, z,
                  feas_tol, piv_tol, max_iter, bland_after, refactor_every):
    """Run the simplex loop in place; return (status, iterations, y, d).

    G is (m, N) C-contiguous, GT its C-contiguous transpose, c the cost
    over all N columns (slacks cost 0).  basis (m,), vstat (N,) and z
    (N,) describe the starting point: nonbasic entries of z must sit on
    the bound named by vstat; basic entries are recomputed here.  All
    three are updated in place so callers can warm-start the next call.
    y and d are the duals and reduced costs priced with the true costs.
    """
    m = G.shape[0]
    N = G.shape[1]

    Bmat = np.empty((m, m))
    for k in range(m):
        col = basis[k]
        for i in range(m):
            Bmat[i, k] = GT[col, i]
    Binv = np.ascontiguousarray(np.linalg.inv(Bmat))

    zwork = np.empty(N)
    for j in range(N):
        s = vstat[j]
        if s == AT_LOWER:
            zwork[j] = low[j]
        elif s == AT_UPPER:
            zwork[j] = upp[j]
        else:
            zwork[j] = 0.0
    zb = -np.dot(Binv, np.dot(G, zwork))
    for j in range(N):
        z[j] = zwork[j]
    for k in range(m):
        z[basis[k]] = zb[k]

    iters = 0
    degen = 0
    bland = False
    since_refactor = 0
    status = ITER_LIMIT
    cb = np.empty(m)
    gamma = np.ones(N)

    while iters < max_iter:
        iters += 1

        # phase test: any basic variable outside its bounds?
        zbv = z[basis]
        lowb = low[basis]
        uppb = upp[basis]
        below = zbv < lowb - feas_tol
        above = zbv > uppb + feas_tol
        phase1 = below.any() or above.any()

        if phase1:
            for k in range(m):
                if below[k]:
                    cb[k] = -1.0
                elif above[k]:
                    cb[k] = 1.0
                else:
                    cb[k] = 0.0
        else:
            for k in range(m):
                cb[k] = c[basis[k]]
        y = np.dot(cb, Binv)
        d = -np.dot(GT, y)
        if not phase1:
            d = d + c

        # pricing: devex d^2/gamma over eligible nonbasics, Bland = first
        can_inc = d < -piv_tol
        can_dec = d > piv_tol
        elig = ((vstat == AT_LOWER) & can_inc) | ((vstat == AT_UPPER) & can_dec) \
            | ((vstat == FREE) & (can_inc | can_dec))
        if not elig.any():
            status = INFEASIBLE if phase1 else OPTIMAL
            break
        if bland:
            enter = int(np.argmax(elig))
        else:
            score = np.where(elig, d * d / gamma, -1.0)
            enter = int(np.argmax(score))
        sigma = 1.0 if d[enter] < 0.0 else -1.0

        # ratio test over basic rows plus the entering variable's own range
        w = np.dot(Binv, np.ascontiguousarray(GT[enter]))
        tmax = np.inf
        leave = -1            # -2 = bound flip, >=0 = basis position
        leave_to = AT_LOWER
        best_piv = 0.0
        rng = upp[enter] - low[enter]
        if np.isfinite(rng):
            tmax = rng
            leave = -2
        for k in range(m):
            rate = -sigma * w[k]
            if rate > piv_tol:
                i = basis[k]
                zi = z[i]
                if zi < low[i] - feas_tol:
                    t = (low[i] - zi) / rate
                    to = AT_LOWER
                elif zi > upp[i] + feas_tol:
                    continue
                elif np.isfinite(upp[i]):
                    t = (upp[i] - zi) / rate
                    to = AT_UPPER
                else:
                    continue
            elif rate < -piv_tol:
                i = basis[k]
                zi = z[i]
                if zi > upp[i] + feas_tol:
                    t = (upp[i] - zi) / rate
                    to = AT_UPPER
                elif zi < low[i] - feas_tol:
                    continue
                elif np.isfinite(low[i]):
                    t = (low[i] - zi) / rate
                    to = AT_LOWER
                else:
                    continue
            else:
                continue
            if t < 0.0:
                t = 0.0
            piv = rate if rate > 0.0 else -rate
            if t < tmax - 1e-12:
                take = True
            elif t <= tmax + 1e-12:
                if leave == -2:
                    take = True
                elif bland:
                    take = basis[k] < basis[leave]
                else:
                    take = piv > best_piv
            else:
                take = False
            if take:
                if t < tmax:
                    tmax = t
                leave = k
                leave_to = to
                best_piv = piv

        if leave == -1:
            status = UNBOUNDED if not phase1 else NUMERICAL
            break

        if tmax > 0.0:
            z[enter] = z[enter] + sigma * tmax
            for k in range(m):
                z[basis[k]] = z[basis[k]] - sigma * tmax * w[k]
        if tmax <= 1e-10:
            degen += 1
            if degen > bland_after:
                bland = True
        else:
            degen = 0

        if leave == -2:
            if vstat[enter] == AT_LOWER:
                vstat[enter] = AT_UPPER
                z[enter] = upp[enter]
            else:
                vstat[enter] = AT_LOWER
                z[enter] = low[enter]
            continue

        lv = basis[leave]
        vstat[lv] = leave_to
        z[lv] = low[lv] if leave_to == AT_LOWER else upp[lv]
        basis[leave] = enter
        vstat[enter] = BASIC

        alpha = w[leave]

        # devex update: reference weights grow with the squared pivot row
        arow = np.dot(Binv[leave], G) / alpha
        gq = gamma[enter]
        gamma = np.maximum(gamma, arow * arow * gq)
        glv = gq / (alpha * alpha)
        gamma[lv] = glv if glv > 1.0 else 1.0
        if np.max(gamma) > 1e12:
            gamma = np.ones(N)

        Binv[leave] = Binv[leave] / alpha
        wtmp = w.copy()
        wtmp[leave] = 0.0
        Binv = Binv - np.outer(wtmp, Binv[leave])

        since_refactor += 1
        if since_refactor >= refactor_every:
            since_refactor = 0
            for k in range(m):
                col = basis[k]
                for i in range(m):
                    Bmat[i, k] = GT[col, i]
            Binv = np.ascontiguousarray(np.linalg.inv(Bmat))
            for j in range(N):
                s = vstat[j]
                if s == AT_LOWER:
                    zwork[j] = low[j]
                elif s == AT_UPPER:
                    zwork[j] = upp[j]
                else:
                    zwork[j] = 0.0
            zb = -np.dot(Binv, np.dot(G, zwork))
            for j in range(N):
                if vstat[j] != BASIC:
                    z[j] = zwork[j]
            for k in range(m):
                z[basis[k]] = zb[k]

    for k in range(m):
        cb[k] = c[basis[k]]
    y = np.dot(cb, Binv)
    d = c - np.dot(GT, y)
    for k in range(m):
        d[basis[k]] = 0.0
    return status, iters, y, d


def _dual_core(G, GT, c, low, upp, basis, vstat, z,
               feas_tol, piv_tol, max_iter, bland_after, refactor_every):
    """Dual simplex from a dual-feasible basis; return (status, iterations, y, d).

    Arguments and in-place conventions mirror ``_simplex_core``.  The
    start basis must price dual feasible with the true costs, otherwise
    NOT_DUAL_FEASIBLE comes back and the caller should fall back to the
    primal core.  INFEASIBLE is proved: some out-of-bound basic row
    admits no entering column, and bound flips cannot absorb the
    violation either.
    """
    m = G.shape[0]
    N = G.shape[1]

    Bmat = np.empty((m, m))
    for k in range(m):
        col = basis[k]
        for i in range(m):
            Bmat[i, k] = GT[col, i]
    Binv = np.ascontiguousarray(np.linalg.inv(Bmat))

    zwork = np.empty(N)
    for j in range(N):
        s = vstat[j]
        if s == AT_LOWER:
            zwork[j] = low[j]
        elif s == AT_UPPER:
            zwork[j] = upp[j]
        else:
            zwork[j] = 0.0
    zb = -np.dot(Binv, np.dot(G, zwork))
    for j in range(N):
        z[j] = zwork[j]
    for k in range(m):
        z[basis[k]] = zb[k]

    cb = np.empty(m)
    for k in range(m):
        cb[k] = c[basis[k]]
    y = np.dot(cb, Binv)
    d = c - np.dot(GT, y)
    for k in range(m):
        d[basis[k]] = 0.0

    dtol = 10.0 * feas_tol
    for j in range(N):
        s = vstat[j]
        if s == AT_LOWER:
            if d[j] < -dtol:
                return NOT_DUAL_FEASIBLE, 0, y, d
        elif s == AT_UPPER:
            if d[j] > dtol:
                return NOT_DUAL_FEASIBLE, 0, y, d
        elif s == FREE:
            if d[j] > dtol or d[j] < -dtol:
                return NOT_DUAL_FEASIBLE, 0, y, d

    # steepest-edge row weights beta_k = ||row k of Binv||^2
    beta = np.empty(m)
    for k in range(m):
        beta[k] = np.dot(Binv[k], Binv[k])

    iters = 0
    degen = 0
    bland = False
    since_refactor = 0
    status = ITER_LIMIT

    while iters < max_iter:
        iters += 1

        for k in range(m):
            cb[k] = c[basis[k]]
        y = np.dot(cb, Binv)
        d = c - np.dot(GT, y)
        for k in range(m):
            d[basis[k]] = 0.0

        # leaving choice: steepest-edge score viol^2 / beta
        r = -1
        best = 0.0
        below = False
        for k in range(m):
            i = basis[k]
            v = low[i] - z[i]
            if v > feas_tol:
                s = v * v / beta[k]
                if s > best:
                    best = s
                    r = k
                    below = True
            v = z[i] - upp[i]
            if v > feas_tol:
                s = v * v / beta[k]
                if s > best:
                    best = s
                    r = k
                    below = False
        if r < 0:
            status = OPTIMAL
            break

        rho = np.dot(Binv[r], G)
        lv = basis[r]

        # entering choice: walk the dual-ratio breakpoints |d_j|/|rho_j|
        # in increasing order; bounded columns passed on the way are
        # bound-flipped (each absorbs |rho_j|*range of the violation with
        # no basis change) and the breakpoint that exhausts the violation
        # enters.  Bland = first eligible column, no flips.
        elig_j = np.empty(N, dtype=np.int64)
        elig_t = np.empty(N)
        elig_cap = np.empty(N)
        ne = 0
        for j in range(N):
            s = vstat[j]
            if s == BASIC:
                continue
            rj = rho[j]
            if rj <= piv_tol and rj >= -piv_tol:
                continue
            if below:
                ok = (s == AT_LOWER and rj < 0.0) or (s == AT_UPPER and rj > 0.0) \
                    or s == FREE
            else:
                ok = (s == AT_LOWER and rj > 0.0) or (s == AT_UPPER and rj < 0.0) \
                    or s == FREE
            if not ok:
                continue
            piv = rj if rj > 0.0 else -rj
            elig_j[ne] = j
            elig_t[ne] = (d[j] if d[j] > 0.0 else -d[j]) / piv
            rngj = upp[j] - low[j]
            elig_cap[ne] = piv * rngj if np.isfinite(rngj) else np.inf
            ne += 1
        if ne == 0:
            status = INFEASIBLE
            break

        enter = -1
        nflip = 0
        flip_list = np.empty(ne, dtype=np.int64)
        if bland:
            enter = N
            for kk in range(ne):
                if elig_j[kk] < enter:
                    enter = elig_j[kk]
        else:
            order = np.argsort(elig_t[:ne])
            delta_rem = (low[lv] - z[lv]) if below else (z[lv] - upp[lv])
            for kk in range(ne):
                idx = order[kk]
                if elig_cap[idx] < delta_rem:
                    flip_list[nflip] = elig_j[idx]
                    nflip += 1
                    delta_rem -= elig_cap[idx]
                else:
                    enter = elig_j[idx]
                    break
            if enter < 0 and delta_rem > feas_tol:
                # every breakpoint flipped yet real violation remains: the
                # dual ray is unbounded, so the primal has no feasible
                # point.  (A residual inside tolerance is not a proof -- it
                # means the flips alone absorb the violation.)
                status = INFEASIBLE
                break

        if nflip > 0:
            aF = np.zeros(m)
            for kk in range(nflip):
                j = flip_list[kk]
                if vstat[j] == AT_LOWER:
                    dzj = upp[j] - low[j]
                    vstat[j] = AT_UPPER
                    z[j] = upp[j]
                else:
                    dzj = low[j] - upp[j]
                    vstat[j] = AT_LOWER
                    z[j] = low[j]
                aF = aF + GT[j] * dzj
            shift = np.dot(Binv, aF)
            for k in range(m):
                z[basis[k]] = z[basis[k]] - shift[k]

        if enter < 0:
            # flip-only round: the violated basic lands on its bound
            # without any basis change
            continue

        w = np.dot(Binv, np.ascontiguousarray(GT[enter]))
        alpha = w[r]
        if alpha <= piv_tol and alpha >= -piv_tol:
            status = NUMERICAL
            break

        bnd = low[lv] if below else upp[lv]
        dz = (z[lv] - bnd) / alpha
        z[enter] = z[enter] + dz
        for k in range(m):
            z[basis[k]] = z[basis[k]] - dz * w[k]
        z[lv] = bnd
        vstat[lv] = AT_LOWER if below else AT_UPPER
        basis[r] = enter
        vstat[enter] = BASIC

        if dz <= 1e-10 and dz >= -1e-10:
            degen += 1
            if degen > bland_after:
                bland = True
        else:
            degen = 0

        # steepest-edge weight update (exact, using the old Binv)
        tau = np.dot(Binv, Binv[r])
        br = beta[r]
        ratio = w / alpha
        beta = beta - 2.0 * ratio * tau + ratio * ratio * br
        beta[r] = br / (alpha * alpha)
        for k in range(m):
            if beta[k] < 1e-12:
                beta[k] = 1e-12

        Binv[r] = Binv[r] / alpha
        wtmp = w.copy()
        wtmp[r] = 0.0
        Binv = Binv - np.outer(wtmp, Binv[r])

        since_refactor += 1
        if since_refactor >= refactor_every:
            since_refactor = 0
            for k in range(m):
                col = basis[k]
                for i in range(m):
                    Bmat[i, k] = GT[col, i]
            Binv = np.ascontiguousarray(np.linalg.inv(Bmat))
            for j in range(N):
                s = vstat[j]
                if s == AT_LOWER:
                    zwork[j] = low[j]
                elif s == AT_UPPER:
                    zwork[j] = upp[j]
                else:
                    zwork[j] = 0.0
            zb = -np.dot(Binv, np.dot(G, zwork))
            for j in range(N):
                if vstat[j] != BASIC:
                    z[j] = zwork[j]
            for k in range(m):
                z[basis[k]] = zb[k]
            for k in range(m):
                beta[k] = np.dot(Binv[k], Binv[k])

    for k in range(m):
        cb[k] = c[basis[k]]
    y = np.dot(cb, Binv)
    d = c - np.dot(GT, y)
    for k in range(m):
        d[basis[k]] = 0.0
    return status, iters, y, d


simplex_core_numpy = _simplex_core
dual_core_numpy = _dual_core

try:
    from numba import njit

    HAS_NUMBA = True
    simplex_core_numba = njit(cache=True)(_simplex_core)
    dual_core_numba = njit(cache=True)(_dual_core)
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False
    simplex_core_numba = None
    dual_core_numba = None

NUMBA_DISABLED = os.environ.get("MIPPRED_NO_NUMBA", "") not in ("", "0")

if HAS_NUMBA and not NUMBA_DISABLED:
    simplex_core = simplex_core_numba
    dual_core = dual_core_numba
    ACTIVE_PATH = "numba"
else:
    simplex_core = simplex_core_numpy
    dual_core = dual_core_numpy
    ACTIVE_PATH = "numpy"
