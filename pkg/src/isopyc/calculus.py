"""Discrete isopycnal operators, Fourier multipliers, mollifier and Sobolev norms.

Horizontal derivatives are spectral (the Nyquist mode is dropped so that dx
stays skew-adjoint); vertical derivatives are second-order finite differences
with one-sided stencils at r = 0 and r = 1.
"""

import numpy as np
import scipy.fft as sfft

from .errors import JacobianDegenerate


class SpectralWorkspace:
    """Real-to-complex transforms over the last d axes plus wavenumber tables."""

    def __init__(self, grid):
        self.grid = grid
        d, Nx, L = grid.d, grid.Nx, grid.L
        self.axes = tuple(range(-d, 0))
        self.s = (Nx,) * d
        n_full = np.fft.fftfreq(Nx, 1.0 / Nx)
        n_half = np.arange(Nx // 2 + 1, dtype=float)
        scale = 2 * np.pi / L
        if d == 1:
            n = [n_half]
        else:
            n = [n_full[:, None], n_half[None, :]]
        # wavenumbers, Nyquist kept (for real symbols like Lambda^s)
        self.k = [scale * ni for ni in n]
        self.xi2 = sum(ki ** 2 for ki in self.k)
        # derivative symbols with the Nyquist mode removed
        self.ik = []
        for ni, ki in zip(n, self.k):
            ik = 1j * ki * (np.abs(ni) < Nx // 2)
            self.ik.append(ik)
        keep = np.ones(np.broadcast(*n).shape, dtype=bool)
        for ni in n:
            keep &= np.abs(ni) <= Nx / 3
        self.dealias_mask = keep

    def fwd(self, f):
        if len(self.axes) == 1:
            return sfft.rfft(f, axis=-1)
        return sfft.rfftn(f, axes=self.axes)

    def bwd(self, F):
        if len(self.axes) == 1:
            return sfft.irfft(F, n=self.s[0], axis=-1)
        return sfft.irfftn(F, s=self.s, axes=self.axes)

    def apply(self, f, symbol):
        return self.bwd(self.fwd(f) * symbol)


def _ws(grid):
    return grid.workspace


def dx(f, grid, j=0):
    """Spectral derivative along horizontal direction j."""
    ws = _ws(grid)
    return ws.apply(f, ws.ik[j])


def grad_x(f, grid):
    """Horizontal gradient, stacked on a new leading axis of length d."""
    ws = _ws(grid)
    F = ws.fwd(f)
    return ws.bwd(np.stack([F * ik for ik in ws.ik]))


def div_x(V, grid):
    ws = _ws(grid)
    F = ws.fwd(V)
    return ws.bwd(sum(F[j] * ws.ik[j] for j in range(grid.d)))


def _real(f):
    """As a floating array, keeping extended precision when given."""
    f = np.asarray(f)
    return f if np.issubdtype(f.dtype, np.floating) else f.astype(float)


def dr(f, grid):
    """Second-order vertical derivative along the r axis of a scalar or vector field."""
    f = _real(f)
    a = np.moveaxis(f, -(grid.d + 1), 0)
    out = np.empty_like(a)
    h = grid.dr
    out[1:-1] = (a[2:] - a[:-2]) / (2 * h)
    out[0] = (-3 * a[0] + 4 * a[1] - a[2]) / (2 * h)
    out[-1] = (3 * a[-1] - 4 * a[-2] + a[-3]) / (2 * h)
    return np.moveaxis(out, 0, -(grid.d + 1))


def dealias(f, grid):
    ws = _ws(grid)
    return ws.apply(f, ws.dealias_mask)


def mul(a, b, grid):
    """Product with the 2/3 rule: truncate both factors, multiply, truncate."""
    return dealias(dealias(a, grid) * dealias(b, grid), grid)


def lambda_pow(f, s, grid):
    """Fourier multiplier (1 + |xi|^2)^(s/2), level by level in r."""
    if s == 0:
        return np.array(_real(f))
    ws = _ws(grid)
    return ws.apply(_real(f), (1 + ws.xi2) ** (0.5 * s))


def dsq_lambda(f, s, grid):
    """Fourier multiplier |xi|^2 (1 + |xi|^2)^((s-2)/2)."""
    ws = _ws(grid)
    return ws.apply(_real(f), ws.xi2 * (1 + ws.xi2) ** (0.5 * (s - 2)))


def chi(t):
    """Smooth cutoff: 1 on [0, 1], 0 on [2, inf), C-infinity in between."""
    t = np.asarray(t, dtype=float)
    out = np.where(t <= 1, 1.0, 0.0)
    band = (t > 1) & (t < 2)
    if band.any():
        u = t[band] - 1
        a = np.exp(-1 / (1 - u))
        b = np.exp(-1 / u)
        out[band] = a / (a + b)
    return out


def mollifier_symbol(delta, grid):
    ws = _ws(grid)
    return chi(delta * np.sqrt(ws.xi2))


def mollify(f, delta, grid):
    """J_delta: multiply mode xi by chi(delta |xi|)."""
    if delta == 0:
        return np.array(f, dtype=float)
    return _ws(grid).apply(f, mollifier_symbol(delta, grid))


def inner(f, g, grid):
    """L^2 inner product on S_r: trapezoid in r, exact (Parseval) in x.

    Vector fields are summed over their components.
    """
    w = grid.column(grid.trap_weights) * grid.cell_area
    return float(np.sum(np.asarray(f) * np.asarray(g) * w))


def l2_norm(f, grid):
    return float(np.sqrt(max(inner(f, f, grid), 0.0)))


def sobolev_norm(f, s, k, grid):
    """sum_{l=0}^{k} || Lambda^(s-l) d_r^l f ||_{L^2}."""
    if k < 0 or k > s:
        raise ValueError("need 0 <= k <= s")
    total = 0.0
    g = _real(f)
    for l in range(int(k) + 1):
        if l:
            g = dr(g, grid)
        total += l2_norm(lambda_pow(g, s - l, grid), grid)
    return total


class DiffOps:
    """Isopycnal derivatives for one snapshot of eta.

    grad_phi_x f = grad_x f + eps (grad_x eta / J) d_r f and
    dr_phi f = -d_r f / J with J = 1 + eps h, h = -d_r eta.
    """

    def __init__(self, grid, eta, epsilon, h_star=None):
        self.grid = grid
        self.eta = np.asarray(eta, dtype=float)
        self.epsilon = float(epsilon)
        self.h = -dr(self.eta, grid)
        self.J = 1.0 + self.epsilon * self.h
        self.min_jacobian = float(self.J.min())
        if h_star is not None and not self.min_jacobian >= h_star:
            raise JacobianDegenerate(self.min_jacobian, h_star)
        if not self.min_jacobian > 0:
            raise JacobianDegenerate(self.min_jacobian, 0.0)
        self.dxeta = grad_x(self.eta, grid)
        if self.epsilon:
            inv_j = 1.0 / self.J
            self.coef = np.stack([mul(self.epsilon * g, inv_j, grid) for g in self.dxeta])
        else:
            self.coef = None

    @classmethod
    def for_state(cls, state, params):
        return cls(state.grid, state.eta, params.epsilon, params.h_star)

    def grad_phi_x(self, f):
        g = grad_x(f, self.grid)
        if self.coef is None:
            return g
        df = dr(f, self.grid)
        return g + np.stack([mul(c, df, self.grid) for c in self.coef])

    def dr_phi(self, f):
        return -dr(f, self.grid) / self.J

    def grad_phi(self, f):
        """Full isopycnal gradient (grad_phi_x f, dr_phi f), d+1 components."""
        return np.concatenate([self.grad_phi_x(f), self.dr_phi(f)[None]])

    def grad_phi_mu(self, f, mu):
        g = self.grad_phi(f)
        g[:-1] *= np.sqrt(mu)
        return g

    def div_phi_mu(self, U, mu=1.0):
        """sqrt(mu) grad_phi_x . V + dr_phi w for U = (V, w)."""
        V, w = U
        V = np.asarray(V, dtype=float).reshape(self.grid.vshape)
        out = self.dr_phi(w)
        div = 0.0
        for j in range(self.grid.d):
            div = div + self.grad_phi_x(V[j])[j]
        return np.sqrt(mu) * div + out


def grad_phi_x(f, ops):
    return ops.grad_phi_x(f)


def dr_phi(f, ops):
    return ops.dr_phi(f)


def div_phi_mu(U, ops, mu):
    return ops.div_phi_mu(U, mu)
