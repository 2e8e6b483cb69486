"""Compiled one-dimensional (d = 1) evaluation of the right-hand side.

The horizontal Fourier multipliers are applied as dense Nx x Nx matrices
acting on the last axis; for the grid sizes used here that is cheaper than
an FFT pair. The arithmetic mirrors dynamics.rhs / pressure.solve_neumann,
which remain the reference implementation (and the d = 2 path).
"""

import numpy as np
import numba as nb

from .calculus import mollifier_symbol

# reassociation only; nan/inf semantics are kept so the blow-up checks still work
_FASTMATH = {"reassoc", "contract", "nsz", "arcp"}

STATUS_OK = 0
STATUS_JACOBIAN = 1
STATUS_NO_CONVERGENCE = 2
STATUS_CFL = 3
STATUS_NONFINITE = 4
STATUS_SERIES_EXIT = 5


def _multiplier_matrix(grid, symbol):
    """Matrix M with f @ M = irfft(rfft(f) * symbol) along the last axis."""
    ws = grid.workspace
    eye = np.eye(grid.Nx)
    return np.ascontiguousarray(ws.bwd(ws.fwd(eye) * symbol))


def _real_basis(Nx):
    x = np.arange(Nx)
    cols = [np.full(Nx, 1 / np.sqrt(Nx))]
    wav = [0.0]
    for k in range(1, Nx // 2):
        cols.append(np.sqrt(2 / Nx) * np.cos(2 * np.pi * k * x / Nx))
        cols.append(np.sqrt(2 / Nx) * np.sin(2 * np.pi * k * x / Nx))
        wav += [k, k]
    cols.append((-1.0) ** x / np.sqrt(Nx))
    wav.append(0.0)  # Nyquist: the spectral derivative drops it
    return np.ascontiguousarray(np.stack(cols, axis=1)), np.array(wav)


class Operators1D:
    """Precomputed matrices for one (grid, delta, coef, mu) combination."""

    def __init__(self, grid, delta, coef, mu):
        from .pressure import flat_blocks
        ws = grid.workspace
        self.Dx = _multiplier_matrix(grid, ws.ik[0])
        mask = ws.dealias_mask.astype(float)
        if delta:
            mask = mask * mollifier_symbol(delta, grid)
        self.Tm = _multiplier_matrix(grid, mask)
        self.TD = _multiplier_matrix(grid, mask * ws.ik[0])
        Q, wav = _real_basis(grid.Nx)
        self.Q = Q
        self.QT = np.ascontiguousarray(Q.T)
        scale = 2 * np.pi / grid.L
        Mh, K = flat_blocks(grid, coef)
        Nc = grid.Nr - 1
        lower = np.zeros((Nc, grid.Nx))
        cp = np.zeros((Nc, grid.Nx))
        den = np.zeros((Nc, grid.Nx))
        for m, k in enumerate(wav):
            T = mu * (scale * k) ** 2 * Mh - K
            if k == 0:
                # singular Neumann block: pin the first unknown; the dropped row is
                # implied by the zero-sum residual and the pinned constant is projected out
                T[0, :] = 0.0
                T[0, 0] = 1.0
            lower[:, m], cp[:, m], den[:, m] = _thomas_factors(T)
        self.lower, self.cp, self.den = lower, cp, den


def _thomas_factors(T):
    n = T.shape[0]
    a = np.zeros(n)
    a[1:] = np.diag(T, -1)
    b = np.diag(T).copy()
    c = np.zeros(n)
    c[:-1] = np.diag(T, 1)
    cp = np.zeros(n)
    den = np.zeros(n)
    prev = 0.0
    for k in range(n):
        den[k] = 1.0 / (b[k] - a[k] * prev)
        cp[k] = c[k] * den[k]
        prev = cp[k]
    return a, cp, den


_OPS_CACHE = {}


def operators(grid, delta, coef, mu):
    key = (grid, float(delta), float(mu), np.asarray(coef, dtype=float).tobytes())
    ops = _OPS_CACHE.get(key)
    if ops is None:
        if len(_OPS_CACHE) > 16:
            _OPS_CACHE.clear()
        ops = _OPS_CACHE[key] = Operators1D(grid, delta, coef, mu)
    return ops


@nb.njit(cache=True)
def workspace(Nr, Nx):
    """Scratch arrays for stage, allocated once per run; see stage for the roles."""
    Nc = Nr - 1
    return (np.empty((Nc, Nx)), np.empty((Nr, Nx)), np.empty((Nr, Nx)), np.empty((Nr, Nx)),
            np.empty((Nr, Nx)), np.empty((3 * Nr, Nx)), np.empty((Nr, Nx)), np.empty((Nc, Nx)),
            np.empty((Nc, Nx)), np.empty((Nc, Nx)), np.empty((Nc, Nx)), np.empty((Nc, Nx)),
            np.empty((Nc, Nx)), np.empty((Nc, Nx)), np.empty((Nc, Nx)), np.empty((Nc + 1, Nx)),
            np.empty((Nc, Nx)), np.empty((Nc, Nx)))


@nb.njit(cache=True, fastmath=_FASTMATH, error_model="numpy")
def _null_part(col, Nc):
    """Map column sums (in place) to the r-constant mean and Nyquist components, the null space."""
    Nx = col.size
    se = 0.0
    so = 0.0
    for j in range(0, Nx, 2):
        se += col[j]
        so += col[j + 1]
    n = Nc * Nx
    for j in range(0, Nx, 2):
        col[j] = (se + so) / n + (se - so) / n
        col[j + 1] = (se + so) / n - (se - so) / n


@nb.njit(cache=True, fastmath=_FASTMATH, error_model="numpy")
def _dot(a, b):
    s = 0.0
    for k in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += a[k, j] * b[k, j]
    return s


@nb.njit(cache=True, fastmath=_FASTMATH, error_model="numpy")
def _apply_L_parts(P, dxP, Jc, eps_dxeta, cx, cr, Dx, inv_h, F, H, HD):
    """Split form of L P: fills HD (horizontal part) and the nodal vertical flux F.

    L P = HD + (F[1:] - F[:-1]) / h; dxP = P @ Dx.
    """
    Nc, Nx = P.shape
    Xprev = np.empty(Nx)
    for j in range(Nx):
        x = cx[0, j] * Jc[0, j] * dxP[0, j]
        Xprev[j] = x
        F[0, j] = eps_dxeta[0, j] * x
    for k in range(1, Nc):
        for j in range(Nx):
            dq = (P[k, j] - P[k - 1, j]) * inv_h
            gx = 0.5 * (Jc[k - 1, j] * dxP[k - 1, j] + Jc[k, j] * dxP[k, j])
            x = cx[k, j] * (gx + eps_dxeta[k, j] * dq)
            F[k, j] = eps_dxeta[k, j] * x + cr[k, j] * dq
            H[k - 1, j] = Jc[k - 1, j] * 0.5 * (Xprev[j] + x)
            Xprev[j] = x
    for j in range(Nx):
        x = cx[Nc, j] * Jc[Nc - 1, j] * dxP[Nc - 1, j]
        F[Nc, j] = eps_dxeta[Nc, j] * x
        H[Nc - 1, j] = Jc[Nc - 1, j] * 0.5 * (Xprev[j] + x)
    np.dot(H, Dx, HD)


@nb.njit(cache=True, fastmath=_FASTMATH, error_model="numpy")
def _precond(r, Q, QT, lower, cp, den, C, z):
    """z = Thomas solve of the flat operator per real Fourier mode, projected.

    Column 0 of the real basis is the x-mean and the last column the Nyquist
    mode, so the null-space projection only touches those two columns.
    """
    np.dot(r, Q, C)
    Nc, Nx = C.shape
    for j in range(Nx):
        C[0, j] *= den[0, j]
    for k in range(1, Nc):
        for j in range(Nx):
            C[k, j] = (C[k, j] - lower[k, j] * C[k - 1, j]) * den[k, j]
    for k in range(Nc - 2, -1, -1):
        for j in range(Nx):
            C[k, j] -= cp[k, j] * C[k + 1, j]
    m0 = 0.0
    mn = 0.0
    for k in range(Nc):
        m0 += C[k, 0]
        mn += C[k, Nx - 1]
    m0 /= Nc
    mn /= Nc
    for k in range(Nc):
        C[k, 0] -= m0
        C[k, Nx - 1] -= mn
    np.dot(C, QT, z)


@nb.njit(cache=True, fastmath=_FASTMATH, error_model="numpy")
def _pcg(b, bn, P, dxP, Jc, eps_dxeta, cx, cr, Dx, h, Q, QT, lower, cp, den, tol, max_iter, ws):
    """Solve -L P = b in place for b already projected off the null space, bn = |b|.

    dxP tracks P @ Dx along the iterates. The null-space part of the warm start P
    does not affect the residual and is left for the caller's gauge fix.
    Returns (iterations, converged).
    """
    Nc, Nx = b.shape
    inv_h = 1.0 / h
    r, z, p, dxp, Ap, F, H, C = ws[10], ws[11], ws[12], ws[13], ws[14], ws[15], ws[16], ws[17]
    if bn == 0.0:
        P[:] = 0.0
        dxP[:] = 0.0
        return 0, True
    _apply_L_parts(P, dxP, Jc, eps_dxeta, cx, cr, Dx, inv_h, F, H, Ap)
    rr = 0.0
    for k in range(Nc):
        for j in range(Nx):
            v = Ap[k, j] + (F[k + 1, j] - F[k, j]) * inv_h + b[k, j]
            r[k, j] = v
            rr += v * v
    if np.sqrt(rr) <= tol * bn:
        return 0, True
    _precond(r, Q, QT, lower, cp, den, C, z)
    rz = 0.0
    for k in range(Nc):
        for j in range(Nx):
            p[k, j] = z[k, j]
            rz += r[k, j] * z[k, j]
    for it in range(1, max_iter + 1):
        np.dot(p, Dx, dxp)
        _apply_L_parts(p, dxp, Jc, eps_dxeta, cx, cr, Dx, inv_h, F, H, Ap)
        pAp = 0.0
        for k in range(Nc):
            for j in range(Nx):
                a = -(Ap[k, j] + (F[k + 1, j] - F[k, j]) * inv_h)
                Ap[k, j] = a
                pAp += p[k, j] * a
        alpha = rz / pAp
        rr = 0.0
        for k in range(Nc):
            for j in range(Nx):
                P[k, j] += alpha * p[k, j]
                dxP[k, j] += alpha * dxp[k, j]
                v = r[k, j] - alpha * Ap[k, j]
                r[k, j] = v
                rr += v * v
        if np.sqrt(rr) <= tol * bn:
            return it, True
        _precond(r, Q, QT, lower, cp, den, C, z)
        rz_new = _dot(r, z)
        beta = rz_new / rz
        for k in range(Nc):
            for j in range(Nx):
                p[k, j] = z[k, j] + beta * p[k, j]
        rz = rz_new
    return max_iter, False


@nb.njit(cache=True, fastmath=_FASTMATH, error_model="numpy")
def _jacobian_min(eta, c1, c2):
    Nr, Nx = eta.shape
    m = np.inf
    for j in range(Nx):
        a = 1.0 - c1 * (-3 * eta[0, j] + 4 * eta[1, j] - eta[2, j])
        b = 1.0 - c1 * (3 * eta[Nr - 1, j] - 4 * eta[Nr - 2, j] + eta[Nr - 3, j])
        if np.isnan(a) or np.isnan(b):
            return np.nan
        m = min(m, a, b)
    for k in range(1, Nr - 1):
        for j in range(Nx):
            a = 1.0 - c1 * (eta[k + 1, j] - eta[k - 1, j])
            if np.isnan(a):
                return np.nan
            m = min(m, a)
    for k in range(Nr - 1):
        for j in range(Nx):
            m = min(m, 1.0 - c2 * (eta[k + 1, j] - eta[k, j]))
    return m


@nb.njit(cache=True, fastmath=_FASTMATH, error_model="numpy")
def stage(U, b, use_series, eps, mu, h_star, vbar, dvbar_c, coef, n2, a2, a3,
          Dx, Tm, TD, Q, QT, lower, cp, den, h, tol, max_iter, P, dxP, ws, dU):
    """Tendency dU of the stacked state U = (V, w, eta), shape (3, Nr, Nx).

    P and dxP = P @ Dx hold the warm start and are overwritten with the new pressure;
    ws comes from workspace(Nr, Nx). Returns (iterations, status, min_jacobian), where
    min_jacobian is only evaluated when the Jacobian check fails (STATUS_JACOBIAN).
    """
    _, Nr, Nx = U.shape
    Nc = Nr - 1
    V = U[0]
    w = U[1]
    eta = U[2]
    Jc, cr, cx, eps_dxeta, Vt, G, dxd, horiz, rhs = (ws[0], ws[1], ws[2], ws[3], ws[4], ws[5],
                                                     ws[6], ws[7], ws[8])
    inv_h = 1.0 / h
    inv_mu = 1.0 / mu
    # geometry; count failures rather than take a min so the loops vectorize and nan is caught
    c1 = 0.5 * eps * inv_h
    c2 = eps * inv_h
    bad = 0
    for j in range(Nx):
        cr[0, j] = 1.0 - c1 * (-3 * eta[0, j] + 4 * eta[1, j] - eta[2, j])
        cr[Nr - 1, j] = 1.0 - c1 * (3 * eta[Nr - 1, j] - 4 * eta[Nr - 2, j] + eta[Nr - 3, j])
    for k in range(1, Nr - 1):
        for j in range(Nx):
            cr[k, j] = 1.0 - c1 * (eta[k + 1, j] - eta[k - 1, j])
    for k in range(Nr):
        ck = coef[k]
        for j in range(Nx):
            J = cr[k, j]
            bad += not (J >= h_star)
            q = ck / J
            cr[k, j] = q
            cx[k, j] = mu * q
    sj = 0.0
    for k in range(Nc):
        for j in range(Nx):
            J = 1.0 - c2 * (eta[k + 1, j] - eta[k, j])
            bad += not (J >= h_star)
            Jc[k, j] = J
            sj += J
    if bad:
        return 0, STATUS_JACOBIAN, _jacobian_min(eta, c1, c2)
    # dealiased advection of all three fields at once
    U2 = U.reshape(3 * Nr, Nx)
    dU2 = dU.reshape(3 * Nr, Nx)
    np.dot(eta, Dx, eps_dxeta)
    np.dot(V, Tm, Vt)
    np.dot(U2, TD, G)
    for k in range(Nr):
        for j in range(Nx):
            vel = vbar[k] + eps * Vt[k, j]
            G[k, j] *= vel
            G[Nr + k, j] *= vel
            G[2 * Nr + k, j] *= vel
            eps_dxeta[k, j] *= eps
    np.dot(G, Tm, dU2)
    FV = dU[0]
    Fw = dU[1]
    deta = dU[2]
    if use_series:
        for k in range(Nr):
            s0 = n2[k]
            s1 = -0.5 * eps * a2[k]
            s2 = eps * eps * a3[k] * (1.0 / 6.0)
            for j in range(Nx):
                e = eta[k, j]
                Fw[k, j] = -Fw[k, j] - (s0 * e + e * e * (s1 + s2 * e)) * inv_mu
                FV[k, j] = -FV[k, j]
                deta[k, j] = w[k, j] - deta[k, j]
    else:
        for k in range(Nr):
            for j in range(Nx):
                Fw[k, j] = -Fw[k, j] - b[k, j] * inv_mu
                FV[k, j] = -FV[k, j]
                deta[k, j] = w[k, j] - deta[k, j]
    for j in range(Nx):
        deta[0, j] = 0.0
        deta[Nr - 1, j] = 0.0
    # divergence-consistent pressure data, -L P = rhs
    np.dot(deta, Dx, dxd)
    gprev = np.empty(Nx)
    for j in range(Nx):
        gprev[j] = eps_dxeta[0, j] * FV[0, j] - Fw[0, j] + eps * dxd[0, j] * V[0, j]
    for k in range(Nc):
        for j in range(Nx):
            g1 = (eps_dxeta[k + 1, j] * FV[k + 1, j] - Fw[k + 1, j]
                  + eps * dxd[k + 1, j] * V[k + 1, j])
            horiz[k, j] = (Jc[k, j] * 0.5 * (FV[k, j] + FV[k + 1, j])
                           - eps * (deta[k + 1, j] - deta[k, j]) * inv_h
                           * 0.5 * (V[k, j] + V[k + 1, j]))
            rhs[k, j] = (g1 - gprev[j]) * inv_h + 0.5 * (dxd[k, j] + dxd[k + 1, j]) * dvbar_c[k]
            gprev[j] = g1
    hD = ws[9]
    np.dot(horiz, Dx, hD)
    col = np.zeros(Nx)
    for k in range(Nc):
        for j in range(Nx):
            v = -mu * (rhs[k, j] + hD[k, j])
            rhs[k, j] = v
            col[j] += v
    for j in range(Nx):
        rhs[0, j] += mu * Fw[0, j] * inv_h
        rhs[Nc - 1, j] -= mu * Fw[Nr - 1, j] * inv_h
        col[j] += mu * (Fw[0, j] - Fw[Nr - 1, j]) * inv_h
    _null_part(col, Nc)
    bb = 0.0
    for k in range(Nc):
        for j in range(Nx):
            v = rhs[k, j] - col[j]
            rhs[k, j] = v
            bb += v * v
    its, ok = _pcg(rhs, np.sqrt(bb), P, dxP, Jc, eps_dxeta, cx, cr, Dx, h, Q, QT, lower, cp,
                   den, tol, max_iter, ws)
    status = STATUS_OK if ok else STATUS_NO_CONVERGENCE
    # gauge: zero J-weighted mean; differences and dxP do not see the constant
    shift = _dot(Jc, P) / sj
    # pressure gradient and tendencies
    dV = FV
    dw = Fw
    for j in range(Nx):
        dV[0, j] -= cr[0, j] * Jc[0, j] * dxP[0, j]
        dV[Nr - 1, j] -= cr[Nr - 1, j] * Jc[Nc - 1, j] * dxP[Nc - 1, j]
        dw[0, j] = 0.0
        dw[Nr - 1, j] = 0.0
    for k in range(1, Nr - 1):
        for j in range(Nx):
            gx = 0.5 * (Jc[k - 1, j] * dxP[k - 1, j] + Jc[k, j] * dxP[k, j])
            dq = (P[k, j] - P[k - 1, j]) * inv_h
            dV[k, j] -= cr[k, j] * (gx + eps_dxeta[k, j] * dq)
            dw[k, j] += cr[k, j] * dq * inv_mu
            P[k - 1, j] -= shift
    for j in range(Nx):
        P[Nc - 1, j] -= shift
    return its, status, np.nan


@nb.njit(cache=True, fastmath=_FASTMATH, error_model="numpy")
def rk4_run(U, P, dxP, n_steps, dt, cfl, dx_grid, series_switch, eps, mu, h_star,
            vbar, dvbar_c, coef, n2, a2, a3, Dx, Tm, TD, Q, QT, lower, cp, den, h, tol,
            max_iter):
    """Up to n_steps RK4 steps with the series buoyancy, on the stacked state U = (V, w, eta).

    Stops early, before touching the fields of the offending step, when the CFL bound
    fails or eps*max|eta| leaves the series range; stops after the step on a degenerate
    Jacobian, a failed solve or non-finite values. P and dxP are updated in place.
    Returns (U, steps_done, status, min_jacobian, total_iterations), with
    min_jacobian evaluated only for STATUS_JACOBIAN.
    """
    _, Nr, Nx = U.shape
    dummy = np.zeros((1, 1))
    ws = workspace(Nr, Nx)
    U = U.copy()
    A = np.empty_like(U)
    S = np.empty_like(U)
    dU = np.empty_like(U)
    u = U.reshape(-1)
    a_ = A.reshape(-1)
    s_ = S.reshape(-1)
    du = dU.reshape(-1)
    m = u.size
    total = 0
    c = dt / 6.0
    vlim = cfl * dx_grid / abs(dt)
    for n in range(n_steps):
        fast = 0
        big = 0
        for k in range(Nr):
            for j in range(Nx):
                fast += abs(vbar[k] + eps * U[0, k, j]) > vlim
                big += eps * abs(U[2, k, j]) >= series_switch
        if fast:
            return U, n, STATUS_CFL, np.nan, total
        if eps != 0 and big:
            return U, n, STATUS_SERIES_EXIT, np.nan, total
        a_[:] = u
        for s in range(4):
            its, status, jm = stage(U if s == 0 else S, dummy, True, eps, mu, h_star, vbar,
                                    dvbar_c, coef, n2, a2, a3, Dx, Tm, TD, Q, QT, lower, cp,
                                    den, h, tol, max_iter, P, dxP, ws, dU)
            total += its
            if status != STATUS_OK:
                return U, n, status, jm, total
            wt = c if s == 0 or s == 3 else 2 * c
            if s < 3:
                a = dt if s == 2 else 0.5 * dt
                for i in range(m):
                    d = du[i]
                    a_[i] += wt * d
                    s_[i] = u[i] + a * d
            else:
                for i in range(m):
                    a_[i] += wt * du[i]
        for j in range(Nx):
            for f in (1, 2):
                A[f, 0, j] = 0.0
                A[f, Nr - 1, j] = 0.0
        bad = 0
        for i in range(m):
            bad += not np.isfinite(a_[i])
        u[:] = a_
        if bad:
            return U, n + 1, STATUS_NONFINITE, np.nan, total
    return U, n_steps, STATUS_OK, np.nan, total
