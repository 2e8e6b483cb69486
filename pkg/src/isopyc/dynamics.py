"""Buoyancy, right-hand side of the isopycnal system, initial data and RK4 stepping."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .calculus import dr, grad_x, div_x, l2_norm, mollifier_symbol
from .domain import BOUNDARY_TOL, FlowState
from .errors import BlownUp, CFLViolation, DomainEscape, JacobianDegenerate, NoConvergence
from .pressure import (PressureField, StaggeredGeometry, geometry_rate, leray_project,
                       make_problem, solve_neumann)

try:
    from . import kernels
except ImportError:  # numba missing: numpy reference path only
    kernels = None

# below this |eps * eta| the buoyancy is evaluated from its Taylor series
SERIES_SWITCH = 1e-4
CLOSURE_MARGIN = 0.25


def _rho_derivs(profile, n):
    cache = profile._cache
    key = ("rho_deriv", n)
    if key not in cache:
        cache[key] = profile.rho(profile.grid.r, n)
    return cache[key]


def _buoyancy_parts(eta, profile, epsilon):
    """Return (b, b_tilde) for displacement eta."""
    g = profile.grid
    col = g.column
    rho = col(profile.rho_of_r)
    n2 = col(profile.N2)
    if epsilon == 0:
        r2 = col(_rho_derivs(profile, 2))
        return n2 * eta, -0.5 * eta ** 2 * r2 / rho
    x = epsilon * eta
    ax = np.abs(x)
    if ax.max() >= SERIES_SWITCH:
        r = col(g.r)
        shifted = r - x
        if shifted.min() < -CLOSURE_MARGIN or shifted.max() > 1 + CLOSURE_MARGIN:
            raise DomainEscape(f"level r - eps*eta reaches [{shifted.min():.4g}, {shifted.max():.4g}]")
        b_direct = (1.0 - profile.rho(shifted) / rho) / epsilon
    else:
        b_direct = None
    r1 = col(profile.rho_prime)
    r2 = col(_rho_derivs(profile, 2))
    r3 = col(_rho_derivs(profile, 3))
    quad = eta * eta * (-0.5 * r2 + x * r3 / 6.0) / rho
    b_series = n2 * eta + epsilon * quad
    if b_direct is None:
        return b_series, quad
    small = ax < SERIES_SWITCH
    b = np.where(small, b_series, b_direct)
    bt = np.where(small, quad, (b_direct - n2 * eta) / epsilon)
    return b, bt


def buoyancy(state, profile, params):
    """b = (1 - rho(r - eps eta) / rho(r)) / eps, and N^2 eta at eps = 0."""
    return _buoyancy_parts(state.eta, profile, params.epsilon)[0]


def buoyancy_remainder(state, profile, params):
    """b_tilde = (b - N^2 eta) / eps, and -eta^2 rho'' / (2 rho) at eps = 0."""
    return _buoyancy_parts(state.eta, profile, params.epsilon)[1]


@dataclass
class Tendency:
    dV: np.ndarray
    dw: np.ndarray
    deta: np.ndarray
    pressure: Optional[object] = None


def _advect(state, profile, params, delta):
    """Dealiased (and optionally mollified) horizontal advection of V, w and eta."""
    g = state.grid
    ws = g.workspace
    d = g.d
    eps = params.epsilon
    mask = ws.dealias_mask
    if delta:
        mask = mask * mollifier_symbol(delta, g)
    fields = np.concatenate([state.V, state.w[None], state.eta[None]])
    Fh = ws.fwd(fields) * mask
    grads = ws.bwd(np.stack([Fh * ik for ik in ws.ik]))
    vel = g.column(profile.vbar_of_r)
    if eps:
        vel = vel + eps * ws.bwd(ws.fwd(state.V) * mask)
    prod = np.einsum("j...,jf...->f...", vel, grads)
    return ws.bwd(ws.fwd(prod) * mask)


def free_tendency(state, profile, params, delta=None):
    """Pressure-free tendencies (F_V, F_w, d eta) with F_w containing -b/mu."""
    delta = params.delta if delta is None else delta
    d = state.grid.d
    adv = _advect(state, profile, params, delta)
    b = buoyancy(state, profile, params)
    FV = -adv[:d]
    Fw = -adv[d] - b / params.mu
    deta = state.w - adv[d + 1]
    deta[0] = 0.0
    deta[-1] = 0.0
    return FV, Fw, deta


def rhs(state, profile, params, delta=None, guess=None):
    """Tendency of system (E) (or its mollified form when delta > 0)."""
    if not state.is_finite():
        raise BlownUp("non-finite field", state.t)
    try:
        geom = StaggeredGeometry.from_state(state, params)
    except JacobianDegenerate as exc:
        raise BlownUp(str(exc), state.t, exc.min_jacobian) from exc
    g = state.grid
    mu = params.mu
    FV, Fw, deta = free_tendency(state, profile, params, delta)
    rhs_c = mu * (geom.jdiv(FV, Fw) + geometry_rate(geom, state, profile, deta))
    coef = 1.0 / profile.momentum_density
    prob = make_problem(geom, coef, mu, rhs_c / geom.J_c, mu * Fw[0], mu * Fw[-1])
    pf = solve_neumann(prob, params.pressure_tol, params.pressure_max_iter, x0=guess)
    c = g.column(coef)
    dV = FV - c * pf.grad_P[:-1]
    dw = Fw - c * pf.grad_P[-1] / mu
    dw[0] = 0.0
    dw[-1] = 0.0
    return Tendency(dV, dw, deta, pf)


def _series_coefficients(profile):
    cache = profile._cache
    if "series" not in cache:
        rho = profile.rho_of_r
        cache["series"] = (np.ascontiguousarray(profile.N2),
                           _rho_derivs(profile, 2) / rho, _rho_derivs(profile, 3) / rho,
                           np.ascontiguousarray(profile.vbar_of_r[0]),
                           np.diff(profile.vbar_of_r[0]) / profile.grid.dr,
                           np.ascontiguousarray(1.0 / profile.momentum_density))
    return cache["series"]


def rhs_compiled(state, profile, params, delta=None, guess=None):
    """Same tendency as rhs, evaluated by the compiled d = 1 kernel."""
    g = state.grid
    if g.d != 1 or kernels is None:
        raise ValueError("compiled right-hand side needs d = 1 and numba")
    if not state.is_finite():
        raise BlownUp("non-finite field", state.t)
    delta = params.delta if delta is None else delta
    eps, mu = params.epsilon, params.mu
    n2, a2, a3, vb, dvb, coef = _series_coefficients(profile)
    ops = kernels.operators(g, delta, coef, mu)
    use_series = eps == 0 or eps * np.abs(state.eta).max() < SERIES_SWITCH
    b = np.zeros((1, 1)) if use_series else buoyancy(state, profile, params)
    P = np.zeros((g.Nr - 1, g.Nx)) if guess is None else np.array(guess, dtype=float)
    dxP = P @ ops.Dx
    U = np.stack([state.V[0], state.w, state.eta])
    dU = np.empty_like(U)
    its, status, jmin = kernels.stage(
        U, b, use_series, eps, mu, params.h_star, vb, dvb, coef, n2, a2, a3, ops.Dx, ops.Tm,
        ops.TD, ops.Q, ops.QT, ops.lower, ops.cp, ops.den, g.dr, params.pressure_tol,
        params.pressure_max_iter, P, dxP, kernels.workspace(g.Nr, g.Nx), dU)
    if status == kernels.STATUS_JACOBIAN:
        raise BlownUp(f"min(1+eps*h) = {jmin:.6g} < h_star = {params.h_star:.6g}", state.t, jmin)
    if status == kernels.STATUS_NO_CONVERGENCE:
        raise NoConvergence(params.pressure_max_iter, np.nan)
    pf = PressureField(P, None, None, params.pressure_tol, its, mu)
    return Tendency(dU[0][None], dU[1], dU[2], pf)


def max_speed(state, profile, params):
    vel = state.grid.column(profile.vbar_of_r) + params.epsilon * state.V
    return float(np.sqrt((vel ** 2).sum(axis=0)).max())


def cfl_limit(state, profile, params):
    vmax = max_speed(state, profile, params)
    return np.inf if vmax == 0 else params.cfl * state.grid.dx / vmax


def _axpy(state, a, k):
    return FlowState(state.grid, state.V + a * k.dV, state.w + a * k.dw, state.eta + a * k.deta,
                     state.t + a)


def _series_valid(state, params):
    return params.epsilon == 0 or params.epsilon * np.abs(state.eta).max() < SERIES_SWITCH


def _compiled_run(state, profile, params, n_steps, dt, delta, cache):
    """Run up to n_steps inside the compiled integrator; returns (state, steps_done, status)."""
    g = state.grid
    eps, mu = params.epsilon, params.mu
    n2, a2, a3, vb, dvb, coef = _series_coefficients(profile)
    ops = kernels.operators(g, delta, coef, mu)
    P = cache.get("P")
    P = np.zeros((g.Nr - 1, g.Nx)) if P is None else np.array(P, dtype=float)
    dxP = P @ ops.Dx
    U, done, status, jmin, its = kernels.rk4_run(
        np.stack([state.V[0], state.w, state.eta]), P, dxP, n_steps, dt, params.cfl, g.dx,
        SERIES_SWITCH, eps, mu, params.h_star, vb, dvb, coef, n2, a2, a3, ops.Dx, ops.Tm,
        ops.TD, ops.Q, ops.QT, ops.lower, ops.cp, ops.den, g.dr, params.pressure_tol,
        params.pressure_max_iter)
    cache["P"] = P
    t = state.t + done * dt
    if status == kernels.STATUS_JACOBIAN:
        raise BlownUp(f"min(1+eps*h) = {jmin:.6g} < h_star = {params.h_star:.6g}", t, jmin)
    if status == kernels.STATUS_NO_CONVERGENCE:
        raise NoConvergence(params.pressure_max_iter, np.nan)
    if status == kernels.STATUS_NONFINITE:
        raise BlownUp("non-finite field", t)
    new = state if done == 0 else FlowState(g, U[0][None], U[1], U[2], t)
    if status == kernels.STATUS_CFL:
        raise CFLViolation(dt, cfl_limit(new, profile, params))
    return new, done, status


def _use_compiled(state, compiled):
    if compiled is None:
        return state.grid.d == 1 and kernels is not None
    return compiled


def step(state, profile, params, dt=None, delta=None, cache=None, compiled=None):
    """One classical RK4 step; cache (a dict) carries the pressure between calls as a warm start.

    compiled=None uses the compiled kernel whenever d = 1 and numba is available.
    """
    dt = params.dt if dt is None else dt
    delta = params.delta if delta is None else delta
    compiled = _use_compiled(state, compiled)
    cache = {} if cache is None else cache
    if compiled and _series_valid(state, params):
        new, done, _ = _compiled_run(state, profile, params, 1, dt, delta, cache)
        if done == 1:
            return new
    limit = cfl_limit(state, profile, params)
    if abs(dt) > limit:
        raise CFLViolation(dt, limit)
    rhs_fn = rhs_compiled if compiled else rhs
    guess = cache.get("P")
    k1 = rhs_fn(state, profile, params, delta, guess)
    k2 = rhs_fn(_axpy(state, dt / 2, k1), profile, params, delta, k1.pressure.P)
    k3 = rhs_fn(_axpy(state, dt / 2, k2), profile, params, delta, k2.pressure.P)
    k4 = rhs_fn(_axpy(state, dt, k3), profile, params, delta, k3.pressure.P)
    cache["P"] = k4.pressure.P
    c = dt / 6.0
    V = state.V + c * (k1.dV + 2 * k2.dV + 2 * k3.dV + k4.dV)
    w = state.w + c * (k1.dw + 2 * k2.dw + 2 * k3.dw + k4.dw)
    eta = state.eta + c * (k1.deta + 2 * k2.deta + 2 * k3.deta + k4.deta)
    for f in (w, eta):
        f[0] = 0.0
        f[-1] = 0.0
    new = FlowState(state.grid, V, w, eta, state.t + dt)
    if not new.is_finite():
        raise BlownUp("non-finite field", new.t)
    return new


def reconstruct_w(V, ops, profile=None):
    """Integrate d_r w = J grad^phi_x . V + grad_x eta . Vbar' upward from w(0) = 0.

    Returns (w, defect) where defect = max_x |w(r = 1)|.
    """
    g = ops.grid
    V = np.asarray(V, dtype=float).reshape(g.vshape)
    integrand = ops.J * div_x(V, g) + ops.epsilon * np.einsum("i...,i...->...", ops.dxeta, dr(V, g))
    if profile is not None:
        integrand = integrand + np.einsum("i...,i...->...", ops.dxeta, g.column(profile.vbar_prime))
    w = cumulative_trapezoid(integrand, dx=g.dr, axis=0, initial=0.0)
    return w, float(np.abs(w[-1]).max())


def prepare_initial_data(V_raw, w_raw, eta_raw, profile, params, return_info=False):
    """Project raw perturbation fields onto the divergence-free, boundary-compatible set."""
    g = profile.grid
    eta = np.array(eta_raw, dtype=float).reshape(g.shape)
    edge = max(np.abs(eta[0]).max(), np.abs(eta[-1]).max())
    if edge > BOUNDARY_TOL * max(1.0, np.abs(eta).max()):
        raise ValueError(f"eta_raw must vanish on r = 0 and r = 1 (found {edge:.3e})")
    eta[0] = 0.0
    eta[-1] = 0.0
    geom = StaggeredGeometry(g, eta, params.epsilon, params.h_star)
    (V, w), info = leray_project((V_raw, w_raw), geom, params.pressure_tol,
                                 vbar=profile.vbar_of_r, max_iter=params.pressure_max_iter,
                                 return_info=True)
    w[0] = 0.0
    w[-1] = 0.0
    state = FlowState(g, V, w, eta)
    if return_info:
        return state, info
    return state


def h_continuity_residual(state_before, state_after, dt, params, profile=None):
    """L^2 norm of eps (h1 - h0)/dt + div_x((1 + eps h)(Vbar + eps V)) at the midpoint."""
    g = state_before.grid
    eps = params.epsilon
    h0, h1 = state_before.h, state_after.h
    Vm = 0.5 * (state_before.V + state_after.V)
    hm = 0.5 * (h0 + h1)
    vel = eps * Vm
    if profile is not None:
        vel = vel + g.column(profile.vbar_of_r)
    res = eps * (h1 - h0) / dt + div_x((1 + eps * hm) * vel, g)
    return l2_norm(res, g)


def integrate(state, profile, params, n_steps=None, t_end=None, callback=None, every=1,
              compiled=None):
    """Advance with fixed dt; callback(state) is called every `every` steps and at the end."""
    cache = {}
    if n_steps is None:
        t_end = params.t_end if t_end is None else t_end
        n_steps = int(round((t_end - state.t) / params.dt))
    compiled = _use_compiled(state, compiled)
    n = 0
    while n < n_steps:
        target = min(n_steps, (n // every + 1) * every)
        if compiled and _series_valid(state, params):
            state, done, _ = _compiled_run(state, profile, params, target - n, params.dt,
                                           params.delta, cache)
            n += done
            if done == 0:
                state = step(state, profile, params, cache=cache, compiled=True)
                n += 1
        else:
            state = step(state, profile, params, cache=cache, compiled=compiled)
            n += 1
        if callback is not None and (n % every == 0 or n == n_steps):
            callback(state)
    return state
