"""Constrained DDP for linear time-varying tracking problems.

Cost convention (no 1/2 factors):

    J = sum_{k=0}^{T-1} [ (x_{k+1} - xref_{k+1})^T Q_{k+1} (x_{k+1} - xref_{k+1})
                          + u_k^T R u_k ]

`solve_lqt` is the unconstrained path; on linear dynamics it converges in one
backward/forward sweep and must agree with a Riccati recursion. `solve_grf_ddp`
adds per-foot friction-pyramid constraints (|fx| <= mu fz, |fy| <= mu fz,
0 <= fz <= fmax) handled inside the backward pass by a primal active-set QP;
the feedback gain is restricted to the active constraints' null space, and a
cheap feasibility clamp runs after every forward rollout. Legs with fmax = 0
(swing) are pinned to zero force and carry no QP variables.

Accepted iterations never increase the cost (backtracking line search); the
solver returns converged=False if the line search stalls before the expected
cost decrease falls under tol.
"""

from dataclasses import dataclass

import numpy as np

from ..backend import njit


class WeightError(ValueError):
    """Raised for indefinite Q / non-positive-definite R weights."""


@dataclass
class DdpResult:
    controls: np.ndarray  # (T, m)
    states: np.ndarray  # (T+1, n)
    iterations: int
    converged: bool
    cost: float
    constraint_violation: float = 0.0


def check_weights(Q, R):
    eq = np.linalg.eigvalsh(np.asarray(Q, dtype=float))
    er = np.linalg.eigvalsh(np.asarray(R, dtype=float))
    if eq.min() < -1e-12:
        raise WeightError("Q must be positive semidefinite")
    if er.min() <= 0:
        raise WeightError("R must be positive definite")


@njit(cache=True)
def _rollout_cost(A, B, c, x0, xref, Qs, R, us):
    T = us.shape[0]
    n = x0.shape[0]
    xs = np.empty((T + 1, n))
    xs[0] = x0
    cost = 0.0
    for k in range(T):
        xk = xs[k]
        uk = us[k]
        xn = A[k] @ xk + B[k] @ uk + c[k]
        xs[k + 1] = xn
        dx = xn - xref[k + 1]
        cost += dx @ (Qs[k + 1] @ dx) + uk @ (R @ uk)
    return xs, cost


@njit(cache=True)
def _solve_lqt_kernel(A, B, c, x0, xref, Qs, R, us, max_iter, tol):
    T, m = us.shape
    n = x0.shape[0]
    xs, cost = _rollout_cost(A, B, c, x0, xref, Qs, R, us)
    du = np.empty((T, m))
    Ks = np.empty((T, m, n))
    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        # backward pass
        Vx = 2.0 * (Qs[T] @ (xs[T] - xref[T]))
        Vxx = 2.0 * Qs[T]
        expected = 0.0
        for k in range(T - 1, -1, -1):
            Ak = A[k]
            Bk = B[k]
            Qx = Ak.T @ Vx
            if k > 0:
                Qx = Qx + 2.0 * (Qs[k] @ (xs[k] - xref[k]))
            Qu = 2.0 * (R @ us[k]) + Bk.T @ Vx
            VA = Vxx @ Ak
            Qxx = Ak.T @ VA
            if k > 0:
                Qxx = Qxx + 2.0 * Qs[k]
            Quu = 2.0 * R + Bk.T @ (Vxx @ Bk)
            Qux = Bk.T @ VA
            duk = np.linalg.solve(Quu, -Qu)
            Kk = np.linalg.solve(Quu, -Qux)
            du[k] = duk
            Ks[k] = Kk
            expected += Qu @ duk + 0.5 * duk @ (Quu @ duk)
            Vx = Qx + Kk.T @ (Quu @ duk) + Kk.T @ Qu + Qux.T @ duk
            Vxx = Qxx + Kk.T @ (Quu @ Kk) + Kk.T @ Qux + Qux.T @ Kk
            Vxx = 0.5 * (Vxx + Vxx.T)
        if expected > -tol:
            converged = True
            break
        # forward pass with backtracking
        improved = False
        alpha = 1.0
        for _ls in range(12):
            xs_new = np.empty((T + 1, n))
            us_new = np.empty((T, m))
            xs_new[0] = x0
            new_cost = 0.0
            for k in range(T):
                uk = us[k] + alpha * du[k] + Ks[k] @ (xs_new[k] - xs[k])
                us_new[k] = uk
                xn = A[k] @ xs_new[k] + B[k] @ uk + c[k]
                xs_new[k + 1] = xn
                dx = xn - xref[k + 1]
                new_cost += dx @ (Qs[k + 1] @ dx) + uk @ (R @ uk)
            if new_cost < cost - 1e-14:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        delta = cost - new_cost
        xs = xs_new
        us = us_new
        cost = new_cost
        if delta < tol:
            converged = True
            break
    return us, xs, iterations, converged, cost


def solve_lqt(A, B, c, x0, xref, Q, R, u_init=None, max_iter=50, tol=1e-6):
    """Unconstrained LTV tracking DDP. Q may be (n,n) or (T+1,n,n)."""
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    x0 = np.ascontiguousarray(x0, dtype=float)
    xref = np.ascontiguousarray(xref, dtype=float)
    T, n, m = B.shape[0], B.shape[1], B.shape[2]
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 2:
        Qs = np.ascontiguousarray(np.broadcast_to(Q, (T + 1, n, n)))
    else:
        Qs = np.ascontiguousarray(Q)
    R = np.ascontiguousarray(R, dtype=float)
    check_weights(Qs[1], R)
    us = np.zeros((T, m)) if u_init is None else np.ascontiguousarray(u_init, dtype=float).copy()
    us, xs, iterations, converged, cost = _solve_lqt_kernel(
        A, B, c, x0, xref, Qs, R, us, max_iter, tol
    )
    return DdpResult(us, xs, iterations, bool(converged), float(cost))


@njit(cache=True)
def _pyramid_rows(mu, fmax):
    """Constraint rows G f <= h for one foot: the friction pyramid."""
    G = np.zeros((6, 3))
    h = np.zeros(6)
    G[0, 0] = 1.0
    G[0, 2] = -mu
    G[1, 0] = -1.0
    G[1, 2] = -mu
    G[2, 1] = 1.0
    G[2, 2] = -mu
    G[3, 1] = -1.0
    G[3, 2] = -mu
    G[4, 2] = 1.0
    h[4] = fmax
    G[5, 2] = -1.0
    return G, h


@njit(cache=True)
def _clamp_pyramid(f, mu, fmax):
    """Cheap feasibility projection onto one foot's pyramid (not Euclidean)."""
    fz = f[2]
    if fz < 0.0:
        fz = 0.0
    elif fz > fmax:
        fz = fmax
    lim = mu * fz
    fx = f[0]
    fy = f[1]
    if fx > lim:
        fx = lim
    elif fx < -lim:
        fx = -lim
    if fy > lim:
        fy = lim
    elif fy < -lim:
        fy = -lim
    out = np.empty(3)
    out[0] = fx
    out[1] = fy
    out[2] = fz
    return out


@njit(cache=True)
def _active_set_qp(H, g, G, h, max_iter):
    """min 1/2 d^T H d + g^T d  s.t.  G d <= h, with h >= 0 (0 feasible).

    Primal active-set method. Returns (d, active mask, ok flag). On iteration
    overrun the current feasible iterate is returned with ok = False.
    """
    mf = H.shape[0]
    nc = G.shape[0]
    d = np.zeros(mf)
    active = np.zeros(nc, dtype=np.int64)
    ok = True
    for _it in range(max_iter):
        na = int(active.sum())
        # equality-constrained subproblem on the current working set
        if na == 0:
            d_eq = np.linalg.solve(H, -g)
            lam = np.zeros(0)
        else:
            Ga = np.empty((na, mf))
            ha = np.empty(na)
            idx = np.empty(na, dtype=np.int64)
            j = 0
            for i in range(nc):
                if active[i] == 1:
                    Ga[j] = G[i]
                    ha[j] = h[i]
                    idx[j] = i
                    j += 1
            Hg = np.linalg.solve(H, -g)
            HGt = np.linalg.solve(H, Ga.T)
            S = Ga @ HGt
            for i in range(na):
                S[i, i] += 1e-12
            lam = np.linalg.solve(S, Ga @ Hg - ha)
            d_eq = Hg - HGt @ lam
        step = d_eq - d
        if np.max(np.abs(step)) < 1e-11:
            # stationary on working set: check multipliers
            if na == 0:
                return d, active, ok
            worst = -1
            worst_val = -1e-9
            for j in range(na):
                if lam[j] < worst_val:
                    worst_val = lam[j]
                    worst = j
            if worst < 0:
                return d, active, ok
            active[idx[worst]] = 0
            continue
        # ratio test against inactive constraints
        alpha = 1.0
        blocker = -1
        for i in range(nc):
            if active[i] == 1:
                continue
            gs = G[i] @ step
            if gs > 1e-12:
                room = h[i] - G[i] @ d
                a = room / gs
                if a < alpha:
                    alpha = a
                    blocker = i
        if alpha > 0.0:
            d = d + alpha * step
        if blocker >= 0:
            active[blocker] = 1
        else:
            # full step to the working-set optimum; loop once more to verify
            continue
    return d, active, False


@njit(cache=True)
def _reduced_inverse_apply(H, Ga, M):
    """Columns of P @ M where P = Hinv - Hinv Ga^T (Ga Hinv Ga^T)^-1 Ga Hinv."""
    HM = np.linalg.solve(H, M)
    na = Ga.shape[0]
    if na == 0:
        return HM
    HGt = np.linalg.solve(H, Ga.T)
    S = Ga @ HGt
    for i in range(na):
        S[i, i] += 1e-12
    return HM - HGt @ np.linalg.solve(S, Ga @ HM)


@njit(cache=True)
def _grf_project(us, mu, fmax):
    """Clamp every foot force into its pyramid, in place."""
    T = us.shape[0]
    for k in range(T):
        for leg in range(4):
            f = _clamp_pyramid(us[k, 3 * leg : 3 * leg + 3], mu[k, leg], fmax[k, leg])
            us[k, 3 * leg] = f[0]
            us[k, 3 * leg + 1] = f[1]
            us[k, 3 * leg + 2] = f[2]


@njit(cache=True)
def _grf_violation(us, mu, fmax):
    worst = 0.0
    T = us.shape[0]
    for k in range(T):
        for leg in range(4):
            fx = us[k, 3 * leg]
            fy = us[k, 3 * leg + 1]
            fz = us[k, 3 * leg + 2]
            lim = mu[k, leg] * fz
            for v in (
                -fz,
                fz - fmax[k, leg],
                abs(fx) - lim,
                abs(fy) - lim,
            ):
                if v > worst:
                    worst = v
    return worst


@njit(cache=True)
def _solve_grf_kernel(A, B, c, x0, xref, Qs, R, mu, fmax, us, max_iter, tol):
    T = us.shape[0]
    n = x0.shape[0]
    m = 12
    _grf_project(us, mu, fmax)
    xs, cost = _rollout_cost(A, B, c, x0, xref, Qs, R, us)
    du = np.zeros((T, m))
    Ks = np.zeros((T, m, n))
    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        Vx = 2.0 * (Qs[T] @ (xs[T] - xref[T]))
        Vxx = 2.0 * Qs[T]
        expected = 0.0
        for k in range(T - 1, -1, -1):
            Ak = A[k]
            Bk = B[k]
            Qx = Ak.T @ Vx
            if k > 0:
                Qx = Qx + 2.0 * (Qs[k] @ (xs[k] - xref[k]))
            Qu = 2.0 * (R @ us[k]) + Bk.T @ Vx
            VA = Vxx @ Ak
            Qxx = Ak.T @ VA
            if k > 0:
                Qxx = Qxx + 2.0 * Qs[k]
            Quu = 2.0 * R + Bk.T @ (Vxx @ Bk)
            Qux = Bk.T @ VA

            # stance legs carry QP variables; swing legs are pinned to zero
            free = np.zeros(m, dtype=np.int64)
            nstance = 0
            for leg in range(4):
                if fmax[k, leg] > 0.0:
                    nstance += 1
                    for r in range(3):
                        free[3 * leg + r] = 1
            duk = np.zeros(m)
            Kk = np.zeros((m, n))
            if nstance > 0:
                mf = 3 * nstance
                fidx = np.empty(mf, dtype=np.int64)
                j = 0
                for i in range(m):
                    if free[i] == 1:
                        fidx[j] = i
                        j += 1
                Hf = np.empty((mf, mf))
                gf = np.empty(mf)
                for a in range(mf):
                    gf[a] = Qu[fidx[a]]
                    for b in range(mf):
                        Hf[a, b] = Quu[fidx[a], fidx[b]]
                # pyramid rows on the free variables, shifted to the nominal
                ncon = 6 * nstance
                Gf = np.zeros((ncon, mf))
                hf = np.zeros(ncon)
                row = 0
                col = 0
                for leg in range(4):
                    if fmax[k, leg] <= 0.0:
                        continue
                    Gleg, hleg = _pyramid_rows(mu[k, leg], fmax[k, leg])
                    for r in range(6):
                        for cc in range(3):
                            Gf[row, col + cc] = Gleg[r, cc]
                        resid = hleg[r]
                        for cc in range(3):
                            resid -= Gleg[r, cc] * us[k, fidx[col + cc]]
                        if resid < 0.0:
                            resid = 0.0
                        hf[row] = resid
                        row += 1
                    col += 3
                df, active, _qp_ok = _active_set_qp(Hf, gf, Gf, hf, 40)
                na = int(active.sum())
                Ga = np.empty((na, mf))
                j = 0
                for i in range(ncon):
                    if active[i] == 1:
                        Ga[j] = Gf[i]
                        j += 1
                Qux_f = np.empty((mf, n))
                for a in range(mf):
                    Qux_f[a] = Qux[fidx[a]]
                Kf = -_reduced_inverse_apply(Hf, Ga, Qux_f)
                for a in range(mf):
                    duk[fidx[a]] = df[a]
                    Kk[fidx[a]] = Kf[a]
            # pinned legs: drive any residual force to zero
            for i in range(m):
                if free[i] == 0:
                    duk[i] = -us[k, i]
            du[k] = duk
            Ks[k] = Kk
            expected += Qu @ duk + 0.5 * duk @ (Quu @ duk)
            Vx = Qx + Kk.T @ (Quu @ duk) + Kk.T @ Qu + Qux.T @ duk
            Vxx = Qxx + Kk.T @ (Quu @ Kk) + Kk.T @ Qux + Qux.T @ Kk
            Vxx = 0.5 * (Vxx + Vxx.T)
        if expected > -tol:
            converged = True
            break
        improved = False
        alpha = 1.0
        new_cost = cost
        for _ls in range(12):
            xs_new = np.empty((T + 1, n))
            us_new = np.empty((T, m))
            xs_new[0] = x0
            new_cost = 0.0
            for k in range(T):
                uk = us[k] + alpha * du[k] + Ks[k] @ (xs_new[k] - xs[k])
                for leg in range(4):
                    f = _clamp_pyramid(
                        uk[3 * leg : 3 * leg + 3], mu[k, leg], fmax[k, leg]
                    )
                    uk[3 * leg] = f[0]
                    uk[3 * leg + 1] = f[1]
                    uk[3 * leg + 2] = f[2]
                us_new[k] = uk
                xn = A[k] @ xs_new[k] + B[k] @ uk + c[k]
                xs_new[k + 1] = xn
                dx = xn - xref[k + 1]
                new_cost += dx @ (Qs[k + 1] @ dx) + uk @ (R @ uk)
            if new_cost < cost - 1e-14:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        delta = cost - new_cost
        xs = xs_new
        us = us_new
        cost = new_cost
        if delta < tol:
            converged = True
            break
    violation = _grf_violation(us, mu, fmax)
    return us, xs, iterations, converged, cost, violation


def solve_grf_ddp(
    A, B, c, x0, xref, Q, R, mu, fmax, u_init=None, max_iter=50, tol=1e-6
):
    """Pyramid-constrained DDP over ground reaction forces (m = 12)."""
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    x0 = np.ascontiguousarray(x0, dtype=float)
    xref = np.ascontiguousarray(xref, dtype=float)
    T, n = B.shape[0], B.shape[1]
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 2:
        Qs = np.ascontiguousarray(np.broadcast_to(Q, (T + 1, n, n)))
    else:
        Qs = np.ascontiguousarray(Q)
    R = np.ascontiguousarray(R, dtype=float)
    check_weights(Qs[1], R)
    mu = np.ascontiguousarray(mu, dtype=float)
    fmax = np.ascontiguousarray(fmax, dtype=float)
    us = np.zeros((T, 12)) if u_init is None else np.ascontiguousarray(u_init, dtype=float).copy()
    us, xs, iterations, converged, cost, violation = _solve_grf_kernel(
        A, B, c, x0, xref, Qs, R, mu, fmax, us, max_iter, tol
    )
    return DdpResult(us, xs, iterations, bool(converged), float(cost), float(violation))
