"""Grids, parameters, equilibrium profiles and flow-state containers."""

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CavitationViolation, StabilityViolation


@dataclass(frozen=True)
class Grid:
    """Periodic horizontal grid (torus of period L) times r in [0, 1].

    Scalar fields have shape (Nr, Nx) for d = 1 and (Nr, Nx, Nx) for d = 2.
    Vector fields carry a leading component axis of length d.
    """

    d: int = 1
    Nx: int = 64
    Nr: int = 33
    L: float = 2 * math.pi

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if self.Nx < 8 or self.Nx % 2:
            raise ValueError(f"Nx must be even and >= 8, got {self.Nx}")
        if self.Nr < 5:
            raise ValueError(f"Nr must be >= 5, got {self.Nr}")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def dr(self):
        return 1.0 / (self.Nr - 1)

    @property
    def dx(self):
        return self.L / self.Nx

    @property
    def shape(self):
        return (self.Nr,) + (self.Nx,) * self.d

    @property
    def vshape(self):
        return (self.d,) + self.shape

    @cached_property
    def r(self):
        return np.linspace(0.0, 1.0, self.Nr)

    @cached_property
    def r_centers(self):
        return 0.5 * (self.r[1:] + self.r[:-1])

    @cached_property
    def x(self):
        return np.arange(self.Nx) * self.dx

    def mesh(self):
        """Coordinate arrays broadcast to the scalar field shape: (R, X) or (R, X1, X2)."""
        axes = [self.r] + [self.x] * self.d
        return np.meshgrid(*axes, indexing="ij")

    def mesh_centers(self):
        axes = [self.r_centers] + [self.x] * self.d
        return np.meshgrid(*axes, indexing="ij")

    def column(self, a):
        """Reshape an r-profile of length Nr (or Nr-1) so it broadcasts over x."""
        a = np.asarray(a)
        return a.reshape(a.shape[:-1] + (a.shape[-1],) + (1,) * self.d)

    @cached_property
    def trap_weights(self):
        w = np.full(self.Nr, self.dr)
        w[0] = w[-1] = 0.5 * self.dr
        return w

    @property
    def cell_area(self):
        return self.dx ** self.d

    @cached_property
    def workspace(self):
        from .calculus import SpectralWorkspace
        return SpectralWorkspace(self)


@dataclass
class SimParams:
    epsilon: float = 0.1
    mu: float = 1.0
    delta: float = 0.0
    dt: float = 1e-3
    t_end: float = 1.0
    cfl: float = 0.4
    h_star: float = 0.1
    h_sup: float = 10.0
    c_star: float = 1e-3
    rho_min: float = 1e-3
    rho_max: float = 1e3
    s_diag: int = 3
    k_diag: int = 2
    pressure_tol: float = 1e-10
    pressure_max_iter: int = 500
    norm_ceiling: float = 1e12
    g: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if not 0.0 < self.h_star <= self.h_sup:
            raise ValueError("need 0 < h_star <= h_sup")
        if not self.c_star > 0:
            raise ValueError("c_star must be positive")
        if not 0.0 < self.rho_min < self.rho_max:
            raise ValueError("need 0 < rho_min < rho_max")
        if self.epsilon > math.sqrt(self.mu):
            warnings.warn(f"epsilon = {self.epsilon} exceeds sqrt(mu) = {math.sqrt(self.mu):.4g}",
                          stacklevel=2)


class Closure:
    """Scalar function of r with optional analytic derivatives.

    derivs[n-1] is the n-th derivative. Missing derivatives fall back to
    fourth-order central differences of the next lower one.
    """

    def __init__(self, f: Callable, *derivs: Callable, step: float = 1e-3):
        self.f = f
        self.derivs = tuple(derivs)
        self.step = step

    def __call__(self, r, n=0):
        r = np.asarray(r, dtype=float)
        if n == 0:
            return np.broadcast_to(np.asarray(self.f(r), dtype=float), r.shape).copy()
        if n <= len(self.derivs):
            return np.broadcast_to(np.asarray(self.derivs[n - 1](r), dtype=float), r.shape).copy()
        s = self.step
        g = lambda q: self(q, n - 1)
        return (-g(r + 2 * s) + 8 * g(r + s) - 8 * g(r - s) + g(r - 2 * s)) / (12 * s)

    @classmethod
    def constant(cls, c=0.0):
        z = lambda r: np.zeros_like(r)
        return cls(lambda r: np.full_like(r, c), z, z, z)


def exp_density(rate=1.0, rho0=1.0):
    """rho(r) = rho0 * exp(rate * r); N^2 = rate."""
    return Closure(*(lambda r, k=k: rho0 * rate ** k * np.exp(rate * r) for k in range(4)))


def linear_density(slope=1.0, rho0=1.0):
    return Closure(lambda r: rho0 * (1 + slope * r), lambda r: np.full_like(r, rho0 * slope),
                   lambda r: np.zeros_like(r), lambda r: np.zeros_like(r))


def tanh_pycnocline(rho0=1.0, delta_rho=0.5, r0=0.5, width=0.1, slope=0.05):
    """Smooth density jump of size delta_rho centred at r0 over a weak linear background."""

    def f(r):
        return rho0 * (1 + slope * r) + 0.5 * delta_rho * (1 + np.tanh((r - r0) / width))

    def f1(r):
        sech2 = 1 - np.tanh((r - r0) / width) ** 2
        return rho0 * slope + 0.5 * delta_rho * sech2 / width

    def f2(r):
        t = np.tanh((r - r0) / width)
        return -delta_rho * t * (1 - t ** 2) / width ** 2

    def f3(r):
        t = np.tanh((r - r0) / width)
        return -delta_rho * (1 - t ** 2) * (1 - 3 * t ** 2) / width ** 3

    return Closure(f, f1, f2, f3)


def linear_shear(shear=0.0, u0=0.0):
    """Vbar(r) = u0 + shear * r, so Vbar' is constant."""
    return Closure(lambda r: u0 + shear * r, lambda r: np.full_like(r, shear),
                   lambda r: np.zeros_like(r), lambda r: np.zeros_like(r))


def tanh_jet(u0=0.5, r0=0.5, width=0.2):
    def f1(r):
        return u0 * (1 - np.tanh((r - r0) / width) ** 2) / width

    def f2(r):
        t = np.tanh((r - r0) / width)
        return -2 * u0 * t * (1 - t ** 2) / width ** 2

    return Closure(lambda r: u0 * np.tanh((r - r0) / width), f1, f2)


@dataclass(eq=False)
class StratificationProfile:
    """Equilibrium density rho(r) and shear Vbar(r), sampled on the r-grid.

    With boussinesq=True the momentum equations use unit density while the
    buoyancy is still evaluated from the density closure.
    """

    grid: Grid
    rho_closure: Closure
    vbar_closures: tuple
    rho_of_r: np.ndarray
    rho_prime: np.ndarray
    vbar_of_r: np.ndarray
    vbar_prime: np.ndarray
    boussinesq: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def N2(self):
        return self.rho_prime / self.rho_of_r

    @property
    def momentum_density(self):
        if self.boussinesq:
            return np.ones_like(self.rho_of_r)
        return self.rho_of_r

    @property
    def eta_weight(self):
        """Weight of |eta|^2 in the energy: momentum density times N^2 (= rho' when not Boussinesq)."""
        return self.momentum_density * self.N2

    def rho(self, r, n=0):
        return self.rho_closure(r, n)

    def vbar(self, r, n=0):
        r = np.asarray(r, dtype=float)
        return np.stack([c(r, n) for c in self.vbar_closures])

    @property
    def has_shear(self):
        return bool(np.any(self.vbar_prime != 0))


def _as_closure(c):
    if c is None:
        return Closure.constant(0.0)
    if isinstance(c, Closure):
        return c
    return Closure(c)


def build_profile(closure_rho, closure_vbar, grid: Grid, params: SimParams, boussinesq=False):
    """Sample the equilibrium closures on the grid and check stability bounds.

    closure_vbar is None (no shear), a single closure (shear along the first
    horizontal direction) or a sequence of d closures.
    """
    rho_c = _as_closure(closure_rho)
    if closure_vbar is None or callable(closure_vbar):
        first = _as_closure(closure_vbar)
        vbar_c = (first,) + tuple(Closure.constant(0.0) for _ in range(grid.d - 1))
    else:
        vbar_c = tuple(_as_closure(c) for c in closure_vbar)
        if len(vbar_c) != grid.d:
            raise ValueError(f"need {grid.d} shear closures, got {len(vbar_c)}")
    r = grid.r
    rho = rho_c(r)
    drho = rho_c(r, 1)
    if not np.all(np.isfinite(rho)) or not np.all(np.isfinite(drho)):
        raise CavitationViolation("density closure is not finite on [0, 1]")
    if rho.min() < params.rho_min or rho.max() > params.rho_max:
        raise CavitationViolation(
            f"density range [{rho.min():.4g}, {rho.max():.4g}] leaves "
            f"[{params.rho_min:.4g}, {params.rho_max:.4g}]")
    if drho.min() < params.c_star:
        k = int(np.argmin(drho))
        raise StabilityViolation(f"rho' = {drho[k]:.4g} < c_star = {params.c_star:.4g} at r = {r[k]:.4g}")
    vb = np.stack([c(r) for c in vbar_c])
    dvb = np.stack([c(r, 1) for c in vbar_c])
    shear = np.sqrt((dvb ** 2).sum(axis=0)).max()
    if shear > math.sqrt(params.mu):
        warnings.warn(f"sup|Vbar'| = {shear:.4g} exceeds sqrt(mu) = {math.sqrt(params.mu):.4g}",
                      stacklevel=2)
    return StratificationProfile(grid, rho_c, vbar_c, rho, drho, vb, dvb, boussinesq)


def profile_from_samples(r, rho, vbar, grid, params, boussinesq=False):
    """Profile from sampled columns, interpolated by cubic splines."""
    from scipy.interpolate import CubicSpline

    def spline_closure(values):
        cs = CubicSpline(r, values)
        return Closure(cs, cs.derivative(1), cs.derivative(2), cs.derivative(3))

    vbar = np.atleast_2d(vbar) if vbar is not None else np.zeros((1, len(r)))
    closures = [spline_closure(v) for v in vbar]
    while len(closures) < grid.d:
        closures.append(Closure.constant(0.0))
    return build_profile(spline_closure(rho), closures[:grid.d], grid, params, boussinesq)


def brunt_vaisala(profile: StratificationProfile):
    """N^2(r) = rho'(r) / rho(r) on the r-grid."""
    return profile.rho_prime / profile.rho_of_r


def miles_howard_margin(profile: StratificationProfile, g_nondim=1.0):
    """inf over the grid of g N^2 / |Vbar'|^2 minus 1/4, +inf without shear.

    With rho_eq(-r) = rho(r) one has -rho_eq'/rho_eq = N^2 and |V_eq'| = |Vbar'|.
    """
    s2 = (profile.vbar_prime ** 2).sum(axis=0)
    mask = s2 > 0
    if not mask.any():
        return math.inf
    ratio = g_nondim * profile.N2[mask] / s2[mask]
    return float(ratio.min() - 0.25)


BOUNDARY_TOL = 1e-12


class FlowState:
    """Perturbation fields (V, w, eta) at time t.

    V has shape (d,) + grid.shape; w and eta have grid.shape. Boundary rows of
    w and eta must vanish exactly. h = -d_r eta is derived on access.
    """

    __slots__ = ("grid", "t", "V", "w", "eta")

    def __init__(self, grid: Grid, V, w, eta, t=0.0):
        self.grid = grid
        self.t = float(t)
        self.V = np.array(V, dtype=float).reshape(grid.vshape)
        self.w = np.array(w, dtype=float).reshape(grid.shape)
        self.eta = np.array(eta, dtype=float).reshape(grid.shape)
        for name in ("w", "eta"):
            a = getattr(self, name)
            edge = max(np.abs(a[0]).max(), np.abs(a[-1]).max())
            # rounding-level boundary values (e.g. sin(pi)) are snapped to zero
            if edge > BOUNDARY_TOL * max(1.0, np.abs(a).max()):
                raise ValueError(f"{name} must vanish on r = 0 and r = 1 (found {edge:.3e})")
            a[0] = 0.0
            a[-1] = 0.0

    @classmethod
    def zeros(cls, grid, t=0.0):
        return cls(grid, np.zeros(grid.vshape), np.zeros(grid.shape), np.zeros(grid.shape), t)

    @property
    def h(self):
        from .calculus import dr
        return -dr(self.eta, self.grid)

    def jacobian(self, epsilon):
        return 1.0 + epsilon * self.h

    def copy(self):
        return FlowState(self.grid, self.V, self.w, self.eta, self.t)

    def is_finite(self):
        return bool(np.isfinite(self.V).all() and np.isfinite(self.w).all() and np.isfinite(self.eta).all())

    def max_amplitude(self):
        return float(max(np.abs(self.V).max(), np.abs(self.w).max(), np.abs(self.eta).max()))

    def scaled(self, lam):
        return FlowState(self.grid, lam * self.V, lam * self.w, lam * self.eta, self.t)

    def __repr__(self):
        return f"FlowState(t={self.t:.6g}, grid={self.grid}, max|.|={self.max_amplitude():.3e})"


def _random_modes(grid, rng, kmax, nmax, vertical):
    """Random combination of Fourier-in-x times cos/sin(n pi r) modes, decaying in k and n."""
    X = grid.mesh()[1:]
    r = grid.column(grid.r)
    out = np.zeros(grid.shape)
    for n in range(0 if vertical == "cos" else 1, nmax + 1):
        col = np.cos(n * np.pi * r) if vertical == "cos" else np.sin(n * np.pi * r)
        for kv in np.ndindex(*(2 * kmax + 1,) * grid.d):
            k = np.array(kv) - kmax
            phase = sum(kj * 2 * np.pi / grid.L * Xj for kj, Xj in zip(k, X))
            amp = rng.standard_normal(2) / (1.0 + k @ k + n * n) ** 2
            out += col * (amp[0] * np.cos(phase) + amp[1] * np.sin(phase))
    return out


def random_state(grid, rng, amplitude=0.1, epsilon=0.1, kmax=3, nmax=3, jacobian_floor=0.5):
    """Smooth random perturbation with min(1 + eps h) >= jacobian_floor.

    Each field is a finite sum of low modes, scaled to max amplitude `amplitude`;
    eta is shrunk further if needed to respect the Jacobian floor.
    """
    from .calculus import dr
    rng = np.random.default_rng(rng)
    V = np.stack([_random_modes(grid, rng, kmax, nmax, "cos") for _ in range(grid.d)])
    w = _random_modes(grid, rng, kmax, nmax, "sin")
    eta = _random_modes(grid, rng, kmax, nmax, "sin")
    V *= amplitude / max(np.abs(V).max(), 1e-300)
    w *= amplitude / max(np.abs(w).max(), 1e-300)
    eta *= amplitude / max(np.abs(eta).max(), 1e-300)
    slope = epsilon * np.abs(dr(eta, grid)).max()
    if slope > 1.0 - jacobian_floor:
        eta *= (1.0 - jacobian_floor) / slope
    return FlowState(grid, V, w, eta)


@dataclass
class EnergyReport:
    E0: float
    E: float
    contributions: dict
    div_residual: float
    min_jacobian: float
    mh_margin: float
    blown_up: bool
    t: float = 0.0
    status: str = "healthy"
