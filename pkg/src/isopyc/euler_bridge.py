"""Change of variables between isopycnal fields on S_r and Eulerian fields on the strip S_z.

The isopycnal point (x, r) sits at height z = -r + eps eta(x, r). The Eulerian
fields live on a uniform z-grid, stored as a Grid whose vertical coordinate is
the depth -z, so that r-index k and depth-index j have the same layout.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .domain import FlowState, Grid
from .errors import InterpolationDomain, JacobianDegenerate, MonotonicityViolation, RootFindFailure

TAYLOR_SWITCH = 1e-6
ROOT_TOL = 1e-12
MAX_NEWTON = 50

_KINDS = {"pchip": PchipInterpolator, "spline": CubicSpline}


@dataclass
class EulerianState:
    """Eulerian perturbation velocity and total density on the depth grid.

    grid.r holds depth = -z, so row j is at z = -grid.r[j]. V has shape
    (d,) + grid.shape; w and rho have grid.shape.
    """

    grid: Grid
    V: np.ndarray
    w: np.ndarray
    rho: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        g = self.grid
        self.V = np.array(self.V, dtype=float).reshape(g.vshape)
        self.w = np.array(self.w, dtype=float).reshape(g.shape)
        self.rho = np.array(self.rho, dtype=float).reshape(g.shape)

    @property
    def z(self):
        return -self.grid.r

    @property
    def Nz(self):
        return self.grid.Nr


def _columns(a, grid):
    """View a (..., Nr, X...) array as (..., Nr, ncol)."""
    lead = a.shape[: a.ndim - grid.d - 1]
    return a.reshape(lead + (grid.Nr, -1))


def _check_jacobian(state, params):
    J = state.jacobian(params.epsilon)
    jmin = float(J.min())
    if not jmin >= params.h_star:
        raise JacobianDegenerate(jmin, params.h_star)


def eta_to_z(state, params):
    """z(x, r) = -r + eps eta(x, r), on the isopycnal grid."""
    _check_jacobian(state, params)
    g = state.grid
    z = -g.column(g.r) + params.epsilon * state.eta
    z[0] = 0.0
    z[-1] = -1.0
    return z


def velocity_shift(r, eta, profile, epsilon):
    """[Vbar(r) - Vbar(r - eps eta)] / eps, in Taylor form for tiny eps.

    Adding it to the isopycnal V gives the Eulerian perturbation velocity at the
    displaced point, since Vbar(r) + eps V = Vbar_eul(z) + eps V_eul with Vbar_eul(z) = Vbar(-z).
    """
    if epsilon < TAYLOR_SWITCH:
        return eta * profile.vbar(r, 1) - 0.5 * epsilon * eta ** 2 * profile.vbar(r, 2)
    return (profile.vbar(r) - profile.vbar(r - epsilon * eta)) / epsilon


def _eval_ppoly(pp, cell, t):
    """Evaluate a PPoly of shape (4, m, ncol) at local offsets t in cells `cell` of each column."""
    col = np.arange(cell.shape[-1])
    c = pp.c[:, cell, col]
    return ((c[0] * t + c[1]) * t + c[2]) * t + c[3]


def _eval_ppoly_deriv(pp, cell, t):
    col = np.arange(cell.shape[-1])
    c = pp.c[:, cell, col]
    return (3 * c[0] * t + 2 * c[1]) * t + c[2]


def to_eulerian(state, profile, params, Nz, kind="spline"):
    """Interpolate isopycnal fields onto a uniform Eulerian grid with Nz levels.

    Velocities and the depth map r(z) are interpolated per column with `kind`
    ("spline": not-a-knot cubic; "pchip": monotone cubic). The density is the
    composition rho(x, z) = rho_profile(r(x, z)); r(z) always uses the monotone
    interpolant so the stratification stays monotone.
    """
    g = state.grid
    eps = params.epsilon
    z = eta_to_z(state, params)
    eg = Grid(d=g.d, Nx=g.Nx, Nr=Nz, L=g.L)
    zt = -eg.r
    r = g.column(g.r) * np.ones(g.shape)
    shift = velocity_shift(r, state.eta, profile, eps) if profile.has_shear else 0.0
    fields = np.concatenate([state.V + shift, state.w[None]])
    zc = _columns(z, g)
    fc = _columns(fields, g)
    rc = _columns(r, g)
    ncol = zc.shape[1]
    out = np.empty((fields.shape[0], Nz, ncol))
    depth = np.empty((Nz, ncol))
    interp = _KINDS[kind]
    for i in range(ncol):
        zi = zc[::-1, i]
        if zt.min() < zi[0] - 1e-14 or zt.max() > zi[-1] + 1e-14:
            raise InterpolationDomain(f"z-grid escapes [{zi[0]:.3g}, {zi[-1]:.3g}] in column {i}")
        out[:, :, i] = interp(zi, fc[:, ::-1, i], axis=1)(zt)
        depth[:, i] = PchipInterpolator(zi, rc[::-1, i])(zt)
    depth[0] = 0.0
    depth[-1] = 1.0
    shape = (Nz,) + g.shape[1:]
    rho = profile.rho(depth).reshape(shape)
    V = out[:-1].reshape((g.d,) + shape)
    w = out[-1].reshape(shape)
    w[0] = 0.0
    w[-1] = 0.0
    return EulerianState(eg, V, w, rho, state.t)


def _check_monotone(rho_c, dz, params):
    slope = np.diff(rho_c, axis=0) / dz
    floor = params.c_star / params.h_sup
    if not slope.min() >= floor:
        j, i = np.unravel_index(int(np.argmin(slope)), slope.shape)
        raise MonotonicityViolation(
            f"d rho / d depth = {slope[j, i]:.4g} < {floor:.4g} between levels {j} and {j + 1} in column {i}")


def _solve_levels(pp, target, depth_grid):
    """Per column, find depth q with rho(q) = target (increasing in q) by bracketed Newton."""
    nz = depth_grid.size
    ncol = target.shape[1]
    lo_val = pp(depth_grid[0])
    hi_val = pp(depth_grid[-1])
    if np.any(target < lo_val[None] - 1e-12 * np.abs(lo_val)) or np.any(target > hi_val[None] + 1e-12 * np.abs(hi_val)):
        raise RootFindFailure("target density outside the column's density range")
    samples = pp.c[-1]  # rho at the left end of each cell
    cell = np.empty(target.shape, dtype=np.intp)
    for i in range(ncol):
        cell[:, i] = np.clip(np.searchsorted(samples[:, i], target[:, i], side="right") - 1, 0, nz - 2)
    h = depth_grid[1] - depth_grid[0]
    lo = np.zeros(target.shape)
    hi = np.full(target.shape, h)
    tol = ROOT_TOL * (hi_val - lo_val)[None] * np.ones_like(target)
    t = 0.5 * h * np.ones(target.shape)
    for _ in range(MAX_NEWTON):
        f = _eval_ppoly(pp, cell, t) - target
        done = np.abs(f) <= tol
        if done.all():
            break
        lo = np.where(f < 0, t, lo)
        hi = np.where(f > 0, t, hi)
        df = _eval_ppoly_deriv(pp, cell, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - f / df
        bad = ~(tn > lo) | ~(tn < hi)
        t = np.where(done, t, np.where(bad, 0.5 * (lo + hi), tn))
    else:
        f = _eval_ppoly(pp, cell, t) - target
        if not np.all(np.abs(f) <= tol):
            raise RootFindFailure(f"density root not converged: residual {np.abs(f).max():.3e}")
    return depth_grid[cell] + t, cell, t


def from_eulerian(eul, profile, params, grid, kind="spline"):
    """Recover the isopycnal state on `grid` from Eulerian fields.

    For each column and level r_k, the height z_k solves rho(x, z_k) = rho_profile(r_k),
    with rho interpolated monotonically in depth. Then eps eta = z + r, and the
    velocities are interpolated at z_k and shifted back.
    """
    eg = eul.grid
    if eg.Nx != grid.Nx or eg.d != grid.d or eg.L != grid.L:
        raise ValueError("Eulerian and isopycnal grids must share the horizontal grid")
    eps = params.epsilon
    depth_grid = eg.r
    rho_c = _columns(eul.rho, eg)
    _check_monotone(rho_c, eg.dr, params)
    pp = PchipInterpolator(depth_grid, rho_c, axis=0)
    ncol = rho_c.shape[1]
    target = np.repeat(profile.rho_of_r[:, None], ncol, axis=1)
    depth, cell, t = _solve_levels(pp, target, depth_grid)
    depth[0] = 0.0
    depth[-1] = 1.0
    r = grid.r[:, None]
    eta_c = (r - depth) / eps if eps > 0 else np.zeros_like(depth)
    eta_c[0] = 0.0
    eta_c[-1] = 0.0
    fields = _columns(np.concatenate([eul.V, eul.w[None]]), eg)
    vals = np.empty((fields.shape[0], grid.Nr, ncol))
    interp = _KINDS[kind]
    for i in range(ncol):
        vals[:, :, i] = interp(depth_grid, fields[:, :, i], axis=1)(depth[:, i])
    shape = grid.shape
    eta = eta_c.reshape(shape)
    V = vals[:-1].reshape((grid.d,) + shape)
    if profile.has_shear:
        V = V - velocity_shift(grid.column(grid.r) * np.ones(shape), eta, profile, eps)
    w = vals[-1].reshape(shape)
    w[0] = 0.0
    w[-1] = 0.0
    return FlowState(grid, V, w, eta, eul.t)
