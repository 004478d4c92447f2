"""Hot numeric kernels.

Everything here is restricted to the numba nopython subset so that the
same source runs compiled (default) or interpreted (``C3MPC_DISABLE_NUMBA=1``).
Wrappers with validation, dataclasses and fallbacks live in the public
modules; these functions trust their inputs.

Status codes shared by the kernels::

    LCP:  0 solved, 1 ray termination, 2 pivot limit
    QP:   0 optimal, 1 infeasible, 2 iteration limit
"""

import numpy as np

from ._accel import jit

LCP_SOLVED = 0
LCP_RAY = 1
LCP_ITERLIMIT = 2

QP_OPTIMAL = 0
QP_INFEASIBLE = 1
QP_ITERLIMIT = 2


# --------------------------------------------------------------------------
# Lemke's complementary pivoting
# --------------------------------------------------------------------------


@jit
def _lex_less(T, i, k, col, m, rhs, tol):
    # compare rows i and k of [rhs | B^-1] scaled by the pivot column
    a = T[i, rhs] / T[i, col]
    b = T[k, rhs] / T[k, col]
    if a < b - tol:
        return True
    if a > b + tol:
        return False
    for j in range(m):
        a = T[i, j] / T[i, col]
        b = T[k, j] / T[k, col]
        if a < b - tol:
            return True
        if a > b + tol:
            return False
    return False


@jit
def _pivot(T, r, col):
    T[r, :] /= T[r, col]
    for i in range(T.shape[0]):
        if i != r:
            f = T[i, col]
            if f != 0.0:
                T[i, :] -= f * T[r, :]


@jit
def lemke(F, q, max_pivots, piv_tol):
    """Solve LCP(q, F) by Lemke's method with lexicographic ratio test.

    Returns ``(lam, status, pivots)``.
    """
    m = q.shape[0]
    lam = np.zeros(m)
    if m == 0:
        return lam, LCP_SOLVED, 0
    qmin = q[0]
    r = 0
    for i in range(1, m):
        if q[i] < qmin:
            qmin = q[i]
            r = i
    if qmin >= 0.0:
        return lam, LCP_SOLVED, 0

    # columns: w (0..m-1), z (m..2m-1), artificial z0 (2m), rhs (2m+1)
    z0 = 2 * m
    rhs = 2 * m + 1
    T = np.zeros((m, 2 * m + 2))
    for i in range(m):
        T[i, i] = 1.0
        for j in range(m):
            T[i, m + j] = -F[i, j]
        T[i, z0] = -1.0
        T[i, rhs] = q[i]
    basis = np.arange(m)

    _pivot(T, r, z0)
    leaving = basis[r]
    basis[r] = z0
    pivots = 1
    entering = leaving + m  # complement of w_r is z_r

    while pivots < max_pivots:
        best = -1
        for i in range(m):
            if T[i, entering] > piv_tol:
                if best < 0 or _lex_less(T, i, best, entering, m, rhs, 1e-12):
                    best = i
        if best < 0:
            return lam, LCP_RAY, pivots
        _pivot(T, best, entering)
        leaving = basis[best]
        basis[best] = entering
        pivots += 1
        if leaving == z0:
            for i in range(m):
                if basis[i] >= m and basis[i] < 2 * m:
                    lam[basis[i] - m] = T[i, rhs]
            return lam, LCP_SOLVED, pivots
        if leaving < m:
            entering = leaving + m
        else:
            entering = leaving - m
    return lam, LCP_ITERLIMIT, pivots


@jit
def lcp_residual(lam, y):
    """max(||min(lam,0)||inf, ||min(y,0)||inf, max_i |lam_i y_i|)."""
    res = 0.0
    for i in range(lam.shape[0]):
        if -lam[i] > res:
            res = -lam[i]
        if -y[i] > res:
            res = -y[i]
        p = abs(lam[i] * y[i])
        if p > res:
            res = p
    return res


@jit
def lcp_enumerate(F, q, tol):
    """Brute-force LCP: try all 2^m supports, least squares on each.

    Returns ``(lam, found, n_solutions)``; ``lam`` is the first solution found
    in support-bitmask order.
    """
    m = q.shape[0]
    best = np.zeros(m)
    found = False
    count = 0
    for mask in range(1 << m):
        idx = np.empty(m, np.int64)
        k = 0
        for i in range(m):
            if (mask >> i) & 1:
                idx[k] = i
                k += 1
        lam = np.zeros(m)
        if k > 0:
            A = np.empty((k, k))
            b = np.empty(k)
            for a in range(k):
                b[a] = -q[idx[a]]
                for bb in range(k):
                    A[a, bb] = F[idx[a], idx[bb]]
            sol = np.linalg.lstsq(A, b)[0]
            for a in range(k):
                lam[idx[a]] = sol[a]
        y = F @ lam + q
        scale = 1.0 + np.max(np.abs(q))
        ok = True
        for i in range(m):
            if lam[i] < -tol * scale or y[i] < -tol * scale:
                ok = False
                break
            if (mask >> i) & 1:
                if abs(y[i]) > tol * scale:
                    ok = False
                    break
        if ok:
            count += 1
            if not found:
                best = np.maximum(lam, 0.0)
                found = True
    return best, found, count


# --------------------------------------------------------------------------
# Goldfarb-Idnani dual active-set QP
# --------------------------------------------------------------------------


@jit
def _drop(J, R, A, u, q, l):
    # remove active constraint at position l and restore R to triangular
    n = J.shape[0]
    for j in range(l, q - 1):
        A[j] = A[j + 1]
        u[j] = u[j + 1]
        for i in range(q):
            R[i, j] = R[i, j + 1]
    for i in range(q):
        R[i, q - 1] = 0.0
    for j in range(l, q - 1):
        a = R[j, j]
        b = R[j + 1, j]
        if b == 0.0:
            continue
        h = np.hypot(a, b)
        c = a / h
        s = b / h
        for k in range(j, q - 1):
            r1 = R[j, k]
            r2 = R[j + 1, k]
            R[j, k] = c * r1 + s * r2
            R[j + 1, k] = -s * r1 + c * r2
        for k in range(n):
            j1 = J[k, j]
            j2 = J[k, j + 1]
            J[k, j] = c * j1 + s * j2
            J[k, j + 1] = -s * j1 + c * j2
    return q - 1


@jit
def dual_active_set(J0, a, C, b, neq, tol, max_iter):
    """Goldfarb-Idnani dual active-set method.

    Solves ``min 1/2 x'Gx + a'x`` subject to ``C[i] x = b[i]`` for
    ``i < neq`` and ``C[i] x >= b[i]`` otherwise, where ``J0 = L^{-T}`` for
    the Cholesky factor ``G = L L'``.

    Returns ``(x, multipliers, status, iterations)``; multipliers follow
    the sign convention ``G x + a = C' mult`` with ``mult >= 0`` on
    inequalities.
    """
    n = J0.shape[0]
    mc = C.shape[0]
    J = J0.copy()
    x = -(J @ (J.T @ a))
    R = np.zeros((n, n))
    A = np.zeros(n + 1, np.int64)
    u = np.zeros(n + 1)
    sgn = np.ones(mc)
    iact = np.zeros(mc, np.bool_)
    mult = np.zeros(mc)
    q = 0
    it = 0
    next_eq = 0
    npv = np.empty(n)
    d = np.empty(n)
    r = np.empty(n + 1)

    while True:
        # step 1: pick a violated constraint
        p = -1
        if next_eq < neq:
            p = next_eq
            next_eq += 1
            s = C[p] @ x - b[p]
            if s > 0.0:
                sgn[p] = -1.0
        else:
            worst = 0.0
            for i in range(neq, mc):
                if iact[i]:
                    continue
                s = C[i] @ x - b[i]
                lim = -tol * (1.0 + abs(b[i]))
                if s < lim and s - lim < worst:
                    worst = s - lim
                    p = i
        if p < 0:
            break
        for k in range(n):
            npv[k] = sgn[p] * C[p, k]
        bp = sgn[p] * b[p]
        up = 0.0
        nn = npv @ npv
        skip = False

        # step 2: move until constraint p becomes active
        while True:
            it += 1
            if it > max_iter:
                for j in range(q):
                    mult[A[j]] = u[j] * sgn[A[j]]
                return x, mult, QP_ITERLIMIT, it
            d[:] = J.T @ npv
            z = np.zeros(n)
            for k in range(q, n):
                dk = d[k]
                if dk != 0.0:
                    for i in range(n):
                        z[i] += J[i, k] * dk
            # r = R^{-1} d[:q]
            for i in range(q - 1, -1, -1):
                acc = d[i]
                for k in range(i + 1, q):
                    acc -= R[i, k] * r[k]
                r[i] = acc / R[i, i]
            t1 = np.inf
            l = -1
            for j in range(q):
                if A[j] >= neq and r[j] > 0.0:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1 = ratio
                        l = j
            zn = z @ npv
            dd = d @ d
            t2 = np.inf
            if zn > 1e-14 * dd and zn > 1e-300:
                t2 = -(npv @ x - bp) / zn
                if t2 < 0.0:
                    t2 = 0.0
            if t2 == np.inf:
                if p < neq and abs(npv @ x - bp) <= tol * (1.0 + abs(bp)) * max(1.0, np.sqrt(nn)):
                    # redundant equality
                    skip = True
                    break
                if t1 == np.inf:
                    for j in range(q):
                        mult[A[j]] = u[j] * sgn[A[j]]
                    return x, mult, QP_INFEASIBLE, it
                for j in range(q):
                    u[j] -= t1 * r[j]
                up += t1
                iact[A[l]] = False
                q = _drop(J, R, A, u, q, l)
                continue
            t = t2 if t2 <= t1 else t1
            x += t * z
            for j in range(q):
                u[j] -= t * r[j]
            up += t
            if t == t2:
                # add p: rotate d so that d[q+1:] = 0
                for i in range(n - 1, q, -1):
                    if d[i] == 0.0:
                        continue
                    h = np.hypot(d[i - 1], d[i])
                    c = d[i - 1] / h
                    s = d[i] / h
                    d[i - 1] = h
                    d[i] = 0.0
                    for k in range(n):
                        j1 = J[k, i - 1]
                        j2 = J[k, i]
                        J[k, i - 1] = c * j1 + s * j2
                        J[k, i] = -s * j1 + c * j2
                for i in range(q + 1):
                    R[i, q] = d[i]
                A[q] = p
                u[q] = up
                iact[p] = True
                q += 1
                break
            iact[A[l]] = False
            q = _drop(J, R, A, u, q, l)
        if skip:
            continue

    for j in range(q):
        mult[A[j]] = u[j] * sgn[A[j]]
    return x, mult, QP_OPTIMAL, it


@jit
def chol_inv_t(G):
    """Return ``L^{-T}`` for ``G = L L'`` (raises on non-PD input)."""
    L = np.linalg.cholesky(G)
    n = G.shape[0]
    Linv = np.linalg.solve(L, np.eye(n))
    return Linv.T.copy()


# --------------------------------------------------------------------------
# Per-time-step complementarity projections
# --------------------------------------------------------------------------


@jit
def _node_constraints(M, c, nx, n, fixed, big_m):
    """Constraint rows for a B&B node of the single-step projection.

    ``fixed[i]``: -1 free pair, 1 means lam_i = 0, 0 means gap_i = 0.
    Equalities come first.
    """
    m = M.shape[0]
    neq = 0
    for i in range(m):
        if fixed[i] >= 0:
            neq += 1
    C = np.zeros((3 * m, n))
    b = np.zeros(3 * m)
    row = 0
    for i in range(m):
        if fixed[i] == 1:
            C[row, nx + i] = 1.0
            row += 1
        elif fixed[i] == 0:
            C[row, :] = M[i]
            b[row] = -c[i]
            row += 1
    for i in range(m):
        if fixed[i] == 1:
            C[row, :] = M[i]
            b[row] = -c[i]
            row += 1
            C[row, :] = -M[i]
            b[row] = c[i] - big_m
            row += 1
        elif fixed[i] == 0:
            C[row, nx + i] = 1.0
            row += 1
            C[row, nx + i] = -1.0
            b[row] = -big_m
            row += 1
        else:
            C[row, nx + i] = 1.0
            row += 1
            C[row, :] = M[i]
            b[row] = -c[i]
            row += 1
            C[row, :] = -M[i]
            C[row, nx + i] -= 1.0
            b[row] = c[i] - big_m
            row += 1
    return C[:row], b[:row], neq


@jit
def _wdist(U, x, t):
    e = x - t
    return e @ (U @ e)


@jit
def project_bnb(J, U, t, M, c, nx, big_m, max_nodes, comp_tol, qp_tol):
    """Exact weighted projection onto the complementarity set by B&B.

    Depth-first search over complementarity pairs; each node solves the
    big-M convex relaxation with the dual active-set QP.  ``J`` is
    ``L^{-T}`` of ``2U``.

    Returns ``(delta, objective, mode, status, nodes)`` where ``status`` is
    0 = optimal, 1 = infeasible, 2 = node budget exhausted (incumbent
    returned if any).
    """
    n = t.shape[0]
    m = M.shape[0]
    a = -2.0 * (U @ t)
    stack = np.empty((2 * m + 2, m), np.int64)
    stack[0, :] = -1
    top = 1
    best = np.inf
    best_x = t.copy()
    best_mode = np.zeros(m, np.int64)
    nodes = 0
    exhausted = False
    while top > 0:
        if nodes >= max_nodes:
            exhausted = True
            break
        top -= 1
        fixed = stack[top].copy()
        nodes += 1
        C, b, neq = _node_constraints(M, c, nx, n, fixed, big_m)
        x, mult, st, _ = dual_active_set(J, a, C, b, neq, qp_tol, 50 * (C.shape[0] + n))
        if st != QP_OPTIMAL:
            continue
        obj = _wdist(U, x, t)
        if obj >= best - 1e-12 * (1.0 + abs(best)):
            continue
        lam = x[nx:nx + m]
        y = M @ x + c
        bi = -1
        worst = comp_tol
        for i in range(m):
            if fixed[i] < 0:
                v = lam[i] * y[i]
                if v > worst:
                    worst = v
                    bi = i
        if bi < 0:
            best = obj
            best_x = x
            for i in range(m):
                if fixed[i] >= 0:
                    best_mode[i] = fixed[i]
                else:
                    best_mode[i] = 1 if lam[i] <= y[i] else 0
            continue
        # push the less promising child first so the other is explored first
        first = 1 if lam[bi] > y[bi] else 0
        stack[top, :] = fixed
        stack[top, bi] = first
        top += 1
        stack[top, :] = fixed
        stack[top, bi] = 1 - first
        top += 1
    if best == np.inf:
        return best_x, best, best_mode, 2 if exhausted else 1, nodes
    return best_x, best, best_mode, 2 if exhausted else 0, nodes


@jit
def snap_pair(a, b):
    """Closest point of {a >= 0, b >= 0, ab = 0} to (a, b)."""
    if a <= 0.0 and b <= 0.0:
        return 0.0, 0.0
    # distance to the a-axis vs the b-axis
    da = min(a, 0.0) ** 2 + b * b
    db = a * a + min(b, 0.0) ** 2
    if da < db:
        return max(a, 0.0), 0.0
    if db < da:
        return 0.0, max(b, 0.0)
    if a >= b:
        return max(a, 0.0), 0.0
    return 0.0, max(b, 0.0)


@jit
def _chol_solve(L, rhs):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        acc = rhs[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, n):
            acc -= L[k, i] * x[k]
        x[i] = acc / L[i, i]
    return x


@jit
def admm_project(L, U, t, M, c, nx, rho, iters):
    """Inner consensus ADMM for the single-step projection.

    The (lam, gap) pairs are copied into ``omega``; each sweep does a
    weighted least-squares solve with ``L L' = 2U + 2 rho (S'S + M'M)``,
    an elementwise complementarity snap and a scaled dual update.

    Returns ``(delta, omega, residuals, diverged)``.  ``delta`` is the last
    iterate, or the best one by primal residual when the iteration diverged.
    """
    n = t.shape[0]
    m = M.shape[0]
    om_l = np.empty(m)
    om_y = np.empty(m)
    for i in range(m):
        yi = c[i]
        for j in range(n):
            yi += M[i, j] * t[j]
        om_l[i], om_y[i] = snap_pair(t[nx + i], yi)
    mu_l = np.zeros(m)
    mu_y = np.zeros(m)
    Ut2 = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += U[i, j] * t[j]
        Ut2[i] = 2.0 * acc
    res = np.empty(iters)
    best = np.inf
    best_x = t.copy()
    x = t.copy()
    rhs = np.empty(n)
    diverged = False
    for k in range(iters):
        # rhs = 2 U t + 2 rho (M'(om_y - mu_y - c) + S'(om_l - mu_l))
        for j in range(n):
            rhs[j] = Ut2[j]
        for i in range(m):
            g = 2.0 * rho * (om_y[i] - mu_y[i] - c[i])
            for j in range(n):
                rhs[j] += M[i, j] * g
            rhs[nx + i] += 2.0 * rho * (om_l[i] - mu_l[i])
        x = _chol_solve(L, rhs)
        r = 0.0
        for i in range(m):
            yi = c[i]
            for j in range(n):
                yi += M[i, j] * x[j]
            li = x[nx + i]
            om_l[i], om_y[i] = snap_pair(li + mu_l[i], yi + mu_y[i])
            dl = li - om_l[i]
            dy = yi - om_y[i]
            mu_l[i] += dl
            mu_y[i] += dy
            r = max(r, abs(dl), abs(dy))
        res[k] = r
        if r < best:
            best = r
            best_x = x
        if r > 1e6:
            diverged = True
            return best_x, np.concatenate((om_l, om_y)), res[:k + 1], diverged
    return x, np.concatenate((om_l, om_y)), res, diverged


@jit
def lcp_project_batch(targets, E, F, H, c, nx, max_pivots, piv_tol):
    """LCP projection of every row of ``targets``; (x, u) slices kept.

    Returns ``(deltas, status)``; rows with nonzero status still need a
    fallback solve by the caller.
    """
    N = targets.shape[0]
    m = F.shape[0]
    out = targets.copy()
    status = np.zeros(N, np.int64)
    for k in range(N):
        xk = targets[k, :nx]
        uk = targets[k, nx + m:]
        q = E @ xk + H @ uk + c
        lam, st, _ = lemke(F, q, max_pivots, piv_tol)
        status[k] = st
        out[k, nx:nx + m] = lam
    return out, status
