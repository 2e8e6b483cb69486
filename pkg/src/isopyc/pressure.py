"""Anisotropic Neumann problem for the pressure, hydrostatic split and Leray projector.

Velocities and eta live on the r-nodes. The pressure lives at the Nr-1 cell
centres r_{k+1/2}, and the discrete divergence is evaluated there in Piola
form

    J div^phi U = div_x(J V) + d_r(eps grad_x eta . V - w),

with the gradient defined as the exact negative adjoint of this divergence.
The elliptic operator L = div(rho^-1 grad .) is then symmetric negative
semidefinite in the plain (uniform weight) inner product on cell centres,
and its eta = 0 counterpart is tridiagonal per horizontal Fourier mode.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .calculus import DiffOps, grad_x, div_x, dr
from .errors import CompatibilityDefect, JacobianDegenerate, NoConvergence

TOL_COMPAT = 1e-8


def _rs(a, s, d):
    """Slice along the r axis (position -(d+1))."""
    return a[(Ellipsis, s) + (slice(None),) * d]


def avg_nc(f, grid):
    d = grid.d
    return 0.5 * (_rs(f, slice(1, None), d) + _rs(f, slice(None, -1), d))


def diff_nc(f, grid):
    d = grid.d
    return (_rs(f, slice(1, None), d) - _rs(f, slice(None, -1), d)) / grid.dr


def avg_cn(c, grid):
    """Adjoint of avg_nc for cell weights dr and trapezoid node weights."""
    d = grid.d
    ax = -(d + 1)
    mid = 0.5 * (_rs(c, slice(1, None), d) + _rs(c, slice(None, -1), d))
    return np.concatenate([_rs(c, slice(0, 1), d), mid, _rs(c, slice(-1, None), d)], axis=ax)


def diff_cn(c, grid):
    """Centre-to-node difference on interior nodes; boundary nodes are zero."""
    d = grid.d
    ax = -(d + 1)
    mid = (_rs(c, slice(1, None), d) - _rs(c, slice(None, -1), d)) / grid.dr
    z = np.zeros_like(_rs(c, slice(0, 1), d))
    return np.concatenate([z, mid, z], axis=ax)


def centers_to_nodes(c, grid):
    """Second-order interpolation of a centre field to nodes (linear extrapolation at the walls)."""
    d = grid.d
    ax = -(d + 1)
    c0, c1 = _rs(c, slice(0, 1), d), _rs(c, slice(1, 2), d)
    cm, cm1 = _rs(c, slice(-1, None), d), _rs(c, slice(-2, -1), d)
    mid = 0.5 * (_rs(c, slice(1, None), d) + _rs(c, slice(None, -1), d))
    return np.concatenate([1.5 * c0 - 0.5 * c1, mid, 1.5 * cm - 0.5 * cm1], axis=ax)


class StaggeredGeometry:
    """Metric terms of one eta snapshot on nodes and cell centres."""

    def __init__(self, grid, eta, epsilon, h_star=None):
        self.grid = grid
        self.eta = np.asarray(eta, dtype=float)
        self.epsilon = float(epsilon)
        eps = self.epsilon
        self.J_n = 1.0 - eps * dr(self.eta, grid)
        self.J_c = 1.0 - eps * diff_nc(self.eta, grid)
        self.min_jacobian = float(min(self.J_n.min(), self.J_c.min()))
        floor = 0.0 if h_star is None else h_star
        if not self.min_jacobian >= floor or not self.min_jacobian > 0:
            raise JacobianDegenerate(self.min_jacobian, floor)
        self.dxeta = grad_x(self.eta, grid)
        self.eps_dxeta = eps * self.dxeta

    @classmethod
    def from_state(cls, state, params):
        return cls(state.grid, state.eta, params.epsilon, params.h_star)

    def jdiv(self, V, w):
        """J times the isopycnal divergence of (V, w), at cell centres."""
        g = self.grid
        flux = np.einsum("i...,i...->...", self.eps_dxeta, V) - w
        return div_x(self.J_c * avg_nc(V, g), g) + diff_nc(flux, g)

    def shear_term(self, vbar):
        """avg(grad_x eta) . d_r Vbar, the eps-cancelled contribution of (1/eps) div^phi Vbar."""
        g = self.grid
        dvb = g.column((vbar[:, 1:] - vbar[:, :-1]) / g.dr)
        return np.einsum("i...,i...->...", avg_nc(self.dxeta, g), dvb)

    def full_div(self, V, w, vbar=None):
        """Discrete J * (div^phi U + (1/eps) div^phi_x Vbar) at cell centres."""
        out = self.jdiv(V, w)
        if vbar is not None:
            out = out + self.shear_term(vbar)
        return out

    def grad(self, q):
        """(Gx, Gr) with <q, jdiv(V, w)> = -<Gx, V> - <Gr, w>; approximates J grad^phi q."""
        g = self.grid
        dq = diff_cn(q, g)
        Gx = avg_cn(self.J_c * grad_x(q, g), g) + self.eps_dxeta * dq
        return Gx, -dq

    def div_norm(self, D):
        """L^2 norm of D / J_c over cell centres."""
        g = self.grid
        return float(np.sqrt(np.sum((D / self.J_c) ** 2) * g.dr * g.cell_area))


def flat_blocks(grid, coef):
    """Vertical blocks of the eta = 0 operator: horizontal mass M_h and vertical stiffness K.

    On a Fourier mode with wavenumber xi the flat operator is -mu xi^2 M_h + K.
    """
    Nr, h = grid.Nr, grid.dr
    Nc = Nr - 1
    A = np.zeros((Nc, Nr))
    D = np.zeros((Nc, Nr))
    for k in range(Nc):
        A[k, k] = A[k, k + 1] = 0.5
        D[k, k], D[k, k + 1] = -1 / h, 1 / h
    Acn = np.zeros((Nr, Nc))
    Dcn = np.zeros((Nr, Nc))
    Acn[0, 0] = Acn[-1, -1] = 1.0
    for k in range(1, Nr - 1):
        Acn[k, k - 1] = Acn[k, k] = 0.5
        Dcn[k, k - 1], Dcn[k, k] = -1 / h, 1 / h
    coef = np.asarray(coef, dtype=float)
    return A @ (coef[:, None] * Acn), D @ (coef[:, None] * Dcn)


class FlatPreconditioner:
    """Exact inverse of the eta = 0 operator, one dense vertical block per Fourier mode."""

    def __init__(self, grid, coef, mu):
        self.grid = grid
        ws = grid.workspace
        Nc = grid.Nr - 1
        Mh, K = flat_blocks(grid, coef)
        xi2 = sum(np.abs(ik) ** 2 for ik in ws.ik)
        xi2 = np.broadcast_to(xi2, np.broadcast(*ws.k).shape)
        self.spec_shape = xi2.shape
        uniq, inv = np.unique(np.round(xi2.ravel(), 12), return_inverse=True)
        blocks = np.empty((len(uniq), Nc, Nc))
        for m, u in enumerate(uniq):
            T = mu * u * Mh - K
            blocks[m] = np.linalg.pinv(T) if u == 0 else np.linalg.inv(T)
        self.blocks = np.ascontiguousarray(blocks[inv])
        self.null_modes = (xi2.ravel() == 0)

    def __call__(self, r):
        """Approximately solve (-L) z = r."""
        ws = self.grid.workspace
        R = ws.fwd(r)
        Nc = R.shape[0]
        M = R.reshape(Nc, -1).T
        Rr = np.stack([M.real, M.imag], axis=-1)
        Z = np.matmul(self.blocks, Rr)
        Zc = (Z[..., 0] + 1j * Z[..., 1]).T.reshape(R.shape)
        return ws.bwd(Zc)


_PRECOND_CACHE = {}


def flat_preconditioner(grid, coef, mu):
    coef = np.asarray(coef, dtype=float)
    key = (grid, float(mu), coef.tobytes())
    pc = _PRECOND_CACHE.get(key)
    if pc is None:
        if len(_PRECOND_CACHE) > 32:
            _PRECOND_CACHE.clear()
        pc = _PRECOND_CACHE[key] = FlatPreconditioner(grid, coef, mu)
    return pc


def _null_patterns(grid):
    """x-patterns (constant in r) annihilated by the discrete operator: mean and Nyquist checkerboards."""
    d, Nx = grid.d, grid.Nx
    c = (-1.0) ** np.arange(Nx)
    one = np.ones(Nx)
    pats = []
    for choice in np.ndindex(*(2,) * d):
        vecs = [c if b else one for b in choice]
        p = vecs[0] if d == 1 else np.outer(vecs[0], vecs[1])
        pats.append(p / np.sqrt(np.sum(p * p)))
    return pats


def project_range(q, grid, patterns=None):
    """Remove the components of q along the operator's null space."""
    pats = patterns or _null_patterns(grid)
    col = q.mean(axis=0)
    out = q.copy()
    for p in pats:
        out -= np.sum(col * p) * p
    return out


class EllipticOperator:
    """L P = jdiv(mu coef Gx P / J_n, coef Gr P / J_n), coef = 1/rho on nodes."""

    def __init__(self, geom, coef, mu):
        self.geom = geom
        self.grid = geom.grid
        self.mu = float(mu)
        self.coef = np.asarray(coef, dtype=float)
        c = self.grid.column(self.coef) / geom.J_n
        self.cx = self.mu * c
        self.cr = c

    def fluxes(self, P):
        Gx, Gr = self.geom.grad(P)
        return self.cx * Gx, self.cr * Gr

    def __call__(self, P):
        X, W = self.fluxes(P)
        return self.geom.jdiv(X, W)


@dataclass
class EllipticProblem:
    geometry: StaggeredGeometry
    coef: np.ndarray
    mu: float
    rhs_interior: np.ndarray
    neumann_top: np.ndarray
    neumann_bottom: np.ndarray
    form: str = "divergence_form"
    compat_defect: float = 0.0
    tol_compat: float = TOL_COMPAT

    @property
    def grid(self):
        return self.geometry.grid

    def assembled_rhs(self):
        """Right-hand side of L P = b including the Neumann data."""
        g = self.grid
        b = self.geometry.J_c * self.rhs_interior
        b[0] -= self.neumann_top / g.dr
        b[-1] += self.neumann_bottom / g.dr
        return b


def make_problem(geometry, coef, mu, rhs_interior, neumann_top=None, neumann_bottom=None,
                 form="divergence_form", tol_compat=TOL_COMPAT):
    """Build an EllipticProblem and record its relative compatibility defect."""
    g = geometry.grid
    hshape = g.shape[1:]
    top = np.zeros(hshape) if neumann_top is None else np.asarray(neumann_top, dtype=float)
    bot = np.zeros(hshape) if neumann_bottom is None else np.asarray(neumann_bottom, dtype=float)
    rhs = np.asarray(rhs_interior, dtype=float)
    if rhs.shape[0] == g.Nr:
        rhs = avg_nc(rhs, g)
    jf = geometry.J_c * rhs
    net = np.sum(jf) * g.dr - np.sum(top) + np.sum(bot)
    scale = np.sum(np.abs(jf)) * g.dr + np.sum(np.abs(top)) + np.sum(np.abs(bot))
    defect = abs(net) / scale if scale > 0 else 0.0
    return EllipticProblem(geometry, np.asarray(coef, dtype=float), float(mu), rhs, top, bot,
                           form, float(defect), tol_compat)


def pcg(apply_A, b, precond, project, tol, max_iter, x0=None):
    """Preconditioned conjugate gradients for SPD A on the range of project."""
    b = project(b)
    bn = np.sqrt(np.sum(b * b))
    if bn == 0:
        return np.zeros_like(b), 0, 0.0
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = project(x0)
        r = project(b - apply_A(x))
    rn = np.sqrt(np.sum(r * r))
    if rn <= tol * bn:
        return x, 0, rn / bn
    z = project(precond(r))
    p = z.copy()
    rz = np.sum(r * z)
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        alpha = rz / np.sum(p * Ap)
        x += alpha * p
        r -= alpha * Ap
        rn = np.sqrt(np.sum(r * r))
        if rn <= tol * bn:
            return x, it, rn / bn
        z = project(precond(r))
        rz_new = np.sum(r * z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(max_iter, rn / bn)


@dataclass
class PressureField:
    P: np.ndarray
    grad_P: np.ndarray
    grad_mu_P: np.ndarray
    residual_norm: float
    iterations: int
    mu: float

    def nodes(self, grid):
        return centers_to_nodes(self.P, grid)


def solve_neumann(problem, tol=1e-10, max_iter=500, x0=None, tol_compat=None):
    """Solve the Neumann problem to relative residual tol; J_c-weighted zero-mean gauge."""
    tc = problem.tol_compat if tol_compat is None else tol_compat
    if problem.compat_defect > tc:
        raise CompatibilityDefect(problem.compat_defect, tc)
    geom = problem.geometry
    g = geom.grid
    op = EllipticOperator(geom, problem.coef, problem.mu)
    pc = flat_preconditioner(g, problem.coef, problem.mu)
    pats = _null_patterns(g)
    project = lambda q: project_range(q, g, pats)
    b = problem.assembled_rhs()
    P, its, res = pcg(lambda q: -op(q), -b, pc, project, tol, max_iter, x0)
    P -= np.sum(geom.J_c * P) / np.sum(geom.J_c)
    return _pressure_field(P, op, problem, its, res)


def _pressure_field(P, op, problem, its, res):
    geom = op.geom
    Gx, Gr = geom.grad(P)
    grad = np.concatenate([Gx, Gr[None]]) / geom.J_n
    # on the walls the normal derivative is the Neumann datum
    rho = 1.0 / problem.coef
    grad[-1][0] = rho[0] * problem.neumann_top
    grad[-1][-1] = rho[-1] * problem.neumann_bottom
    grad_mu = grad.copy()
    grad_mu[:-1] *= np.sqrt(op.mu)
    return PressureField(P, grad, grad_mu, float(res), int(its), op.mu)


def pressure_rhs_pointwise(state, profile, params):
    """Pointwise right-hand side at the nodes, with the 1/eps cancellations done by hand:

    -mu [eps (grad eta . Vbar')^2 / J^2 + 2 eps (d_i eta / J) Vbar_j' d^phi_j V_i
         - 2 (Vbar_j' / J) d^phi_j w + eps d^phi_i U_j d^phi_j U_i] - d^phi_r b
    """
    from .dynamics import buoyancy
    g = state.grid
    eps, mu = params.epsilon, params.mu
    ops = DiffOps(g, state.eta, eps, params.h_star)
    J = ops.J
    vbp = g.column(profile.vbar_prime)
    b = buoyancy(state, profile, params)
    d = g.d
    # full isopycnal gradient of each velocity component: grads[j][i] = d^phi_i U_j
    grads = [ops.grad_phi(state.V[j]) for j in range(d)] + [ops.grad_phi(state.w)]
    gw = grads[-1]
    sdot = np.einsum("i...,i...->...", ops.dxeta, vbp)
    out = eps * sdot ** 2 / J ** 2
    out = out - 2 * np.einsum("j...,j...->...", vbp, gw[:d]) / J
    if eps:
        for i in range(d):
            for j in range(d):
                out = out + 2 * eps * ops.dxeta[i] * vbp[j] * grads[i][j] / J
        quad = 0.0
        for i in range(d + 1):
            for j in range(d + 1):
                quad = quad + grads[j][i] * grads[i][j]
        out = out + eps * quad
    return -mu * out - ops.dr_phi(b)


def assemble_pressure_rhs(state, profile, params, form="divergence", delta=None):
    """EllipticProblem for the pressure of the given state.

    form="divergence" (used by the time stepper) takes the discrete divergence of
    the pressure-free tendencies, which is exactly compatible with the Neumann data.
    form="pointwise" evaluates the closed-form right-hand side at the nodes; its
    discrete compatibility defect is only O(dr^2), so solving it requires a looser
    tol_compat.
    """
    from .dynamics import buoyancy, free_tendency
    g = state.grid
    geom = StaggeredGeometry.from_state(state, params)
    coef = 1.0 / profile.momentum_density
    if form == "divergence":
        FV, Fw, deta = free_tendency(state, profile, params, delta)
        rhs_c = params.mu * (geom.jdiv(FV, Fw) + geometry_rate(geom, state, profile, deta))
        return make_problem(geom, coef, params.mu, rhs_c / geom.J_c,
                            params.mu * Fw[0], params.mu * Fw[-1], "divergence_form")
    if form == "pointwise":
        b = buoyancy(state, profile, params)
        return make_problem(geom, coef, params.mu, pressure_rhs_pointwise(state, profile, params),
                            -b[0], -b[-1], "pointwise_form")
    raise ValueError(f"unknown form {form!r}")


def geometry_rate(geom, state, profile, deta):
    """Derivative of the discrete full divergence with respect to eta, in direction deta."""
    g = geom.grid
    eps = geom.epsilon
    dxd = grad_x(deta, g)
    vb = g.column((profile.vbar_of_r[:, 1:] - profile.vbar_of_r[:, :-1]) / g.dr)
    out = np.einsum("i...,i...->...", avg_nc(dxd, g), vb)
    if eps:
        V = state.V
        dJc = -eps * diff_nc(deta, g)
        out = out + div_x(dJc * avg_nc(V, g), g)
        out = out + diff_nc(eps * np.einsum("i...,i...->...", dxd, V), g)
    return out


def divergence_residual(state, profile, params, geom=None):
    """L^2 norm of the full divergence constraint (Vbar part eps-cancelled)."""
    geom = geom or StaggeredGeometry(state.grid, state.eta, params.epsilon)
    return geom.div_norm(geom.full_div(state.V, state.w, profile.vbar_of_r))


def hydrostatic_split(state, profile, params):
    """P_h = int_0^r rho b dr' and the residual of (1/rho) d^phi_r P_h + b - eps h b / J = 0."""
    from .dynamics import buoyancy
    g = state.grid
    b = buoyancy(state, profile, params)
    rho = g.column(profile.momentum_density)
    Ph = cumulative_trapezoid(rho * b, dx=g.dr, axis=0, initial=0.0)
    ops = DiffOps(g, state.eta, params.epsilon)
    res = ops.dr_phi(Ph) / rho + b - params.epsilon * ops.h * b / ops.J
    return Ph, res


def leray_project(U, geom, tol=1e-10, vbar=None, max_iter=500, return_info=False):
    """Remove the isopycnal gradient part of U = (V, w).

    Solves div^phi grad^phi psi = div^phi U with d^phi_r psi = 0 on the walls
    and returns U - grad^phi psi. If vbar is given the divergence includes the
    eps-cancelled shear term, i.e. the full velocity Vbar + eps U is projected and
    the perturbation is returned. Boundary rows of w are set to zero first.
    """
    g = geom.grid
    V = np.array(U[0], dtype=float).reshape(g.vshape)
    w = np.array(U[1], dtype=float).reshape(g.shape)
    w[0] = 0.0
    w[-1] = 0.0
    D = geom.full_div(V, w, vbar)
    coef = np.ones(g.Nr)
    prob = make_problem(geom, coef, 1.0, D / geom.J_c)
    # the divergence is exactly compatible up to rounding
    field = solve_neumann(prob, tol, max_iter, tol_compat=np.inf)
    Gx, Gr = geom.grad(field.P)
    V = V - Gx / geom.J_n
    w = w - Gr / geom.J_n
    if return_info:
        after = geom.div_norm(geom.full_div(V, w, vbar))
        return (V, w), {"iterations": field.iterations, "residual": field.residual_norm,
                        "div_before": geom.div_norm(D), "div_after": after}
    return V, w
