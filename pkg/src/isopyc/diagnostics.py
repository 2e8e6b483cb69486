"""Energy functional, good unknowns, commutation residuals and blow-up monitoring."""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .calculus import dr, dsq_lambda, grad_x, inner, l2_norm, lambda_pow, sobolev_norm
from .domain import EnergyReport, miles_howard_margin
from .errors import InsufficientData, JacobianDegenerate
from .pressure import StaggeredGeometry, divergence_residual


@dataclass(frozen=True)
class OperatorLabel:
    """Lambda^(s-l) d_r^l (kind "LamDr", 1 <= l <= s) or |D|^2 Lambda^(s-2) (kind "DsqLam")."""

    kind: str
    l: int = 0

    def __post_init__(self):
        if self.kind not in ("LamDr", "DsqLam"):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind == "LamDr" and self.l < 1:
            raise ValueError("LamDr needs l >= 1")

    @classmethod
    def lam_dr(cls, l):
        return cls("LamDr", int(l))

    @classmethod
    def dsq_lam(cls):
        return cls("DsqLam")

    def apply(self, f, s, grid):
        f = np.asarray(f)
        if self.kind == "DsqLam":
            return dsq_lambda(f, s, grid)
        g = f
        for _ in range(self.l):
            g = dr(g, grid)
        return lambda_pow(g, s - self.l, grid)

    def __str__(self):
        return f"LamDr({self.l})" if self.kind == "LamDr" else "DsqLam"


def operator_set(s):
    """The operators used in the energy: Lambda^(s-l) d_r^l for 1 <= l <= s, and |D|^2 Lambda^(s-2)."""
    return [OperatorLabel.lam_dr(l) for l in range(1, int(s) + 1)] + [OperatorLabel.dsq_lam()]


def _jacobian(state, params):
    J = state.jacobian(params.epsilon)
    jmin = float(J.min())
    if not jmin >= params.h_star:
        raise JacobianDegenerate(jmin, params.h_star)
    return J


def _good_unknown(f, eta, J, eps, op, s, grid):
    out = op.apply(f, s, grid)
    if eps:
        out = out + eps * op.apply(eta, s, grid) * dr(f, grid) / J
    return out


def good_unknown(f, state, params, op, s=None, J=None):
    """f^Lambda = Lambda f + eps (Lambda eta / (1 + eps h)) d_r f."""
    s = params.s_diag if s is None else s
    J = _jacobian(state, params) if J is None else J
    return _good_unknown(f, state.eta, J, params.epsilon, op, s, state.grid)


def _isopycnal_gradient(f, eta, eps, J, grid):
    """(grad_phi_x f, dr_phi f) with pointwise products, stacked on a leading axis."""
    df = dr(f, grid)
    gx = grad_x(f, grid) + eps * grad_x(eta, grid) * df / J
    return np.concatenate([gx, (-df / J)[None]])


def alinhac_commutation_residual(f, state, params, op, s=None, precision=np.longdouble):
    """L^2 norm of Lambda grad_phi f - grad_phi f^Lambda - eps (Lambda eta) dr_phi grad_phi f - eps R1.

    eps R1 = -(d phi)^(-T) [Lambda; (d phi)^T, grad_phi f] uses the symmetric commutator
    [Lambda; A, g] = Lambda(A g) - (Lambda A) g - A (Lambda g). The identity is exact in
    the continuum, so the value measures discretization error only. The terms are
    evaluated in `precision` (extended by default): the high-order multipliers amplify
    transform round-off by up to |xi|^s, which would otherwise mask the flat-geometry
    exactness.
    """
    g = state.grid
    d = g.d
    eps = params.epsilon
    s = params.s_diag if s is None else s
    _jacobian(state, params)
    f = np.asarray(f).astype(precision)
    eta = state.eta.astype(precision)
    J = 1 - eps * dr(eta, g)
    lam = lambda u: op.apply(u, s, g)

    G = _isopycnal_gradient(f, eta, eps, J, g)
    lhs = np.stack([lam(c) for c in G])
    t1 = _isopycnal_gradient(_good_unknown(f, eta, J, eps, op, s, g), eta, eps, J, g)
    t2 = eps * lam(eta) * np.stack([-dr(c, g) / J for c in G])

    # (d phi)^T = [[I, a], [0, -J]] with a = eps grad_x eta
    a = eps * grad_x(eta, g)

    def A_times(u):
        return np.concatenate([u[:d] + a * u[d], (-J * u[d])[None]])

    lam_one = lam(np.ones(g.shape, dtype=precision))
    lam_a = np.stack([lam(c) for c in a])
    lamA_G = np.concatenate([lam_one * G[:d] + lam_a * G[d], (-lam(J) * G[d])[None]])
    comm = np.stack([lam(c) for c in A_times(G)]) - lamA_G - A_times(lhs)
    # (d phi)^(-T) = [[I, a / J], [0, -1 / J]]
    eps_r1 = -np.concatenate([comm[:d] + a / J * comm[d], (-comm[d] / J)[None]])
    res = lhs - t1 - t2 - eps_r1
    return l2_norm(res, g)


def low_index(grid, params):
    """Horizontal index of the low-regularity norm, s0 + 3/2 with s0 = d/2 + 0.01, capped at s."""
    sigma = grid.d / 2 + 0.01 + 1.5
    if sigma > params.s_diag:
        warnings.warn(f"s_diag = {params.s_diag} is below the low index {sigma:.2f}; using s_diag",
                      stacklevel=3)
        sigma = float(params.s_diag)
    return sigma


def _components(state):
    """(name, field, factor) for the prognostic unknowns; factor is mu for w."""
    V = state.V
    return [(f"V{j}", V[j]) for j in range(state.grid.d)] + [("w", state.w), ("eta", state.eta)]


def _energy_terms(state, profile, params):
    """Per-field (E0 part, high part) together with the pieces used by the bracket."""
    g = state.grid
    s = params.s_diag
    if s < 2:
        warnings.warn("energy needs s_diag >= 2 for the |D|^2 Lambda^(s-2) term", stacklevel=3)
    mu = params.mu
    sigma = low_index(g, params)
    J = _jacobian(state, params)
    rho = g.column(profile.momentum_density)
    w_vel = rho * J
    w_eta = g.column(profile.eta_weight) * np.ones(g.shape)
    ops = operator_set(s)
    out = {}
    for name, f in _components(state):
        factor = mu if name == "w" else 1.0
        low = factor * sobolev_norm(f, sigma, 2, g) ** 2
        high = 0.0
        gaps = []
        if name == "eta":
            for op in ops:
                lf = op.apply(f, s, g)
                high += inner(w_eta * lf, lf, g)
                gaps.append(0.0)
            weight = w_eta
        else:
            for op in ops:
                gu = good_unknown(f, state, params, op, s, J)
                high += factor * inner(w_vel * gu, gu, g)
                gaps.append(l2_norm(gu - op.apply(f, s, g), g))
            weight = w_vel
        out[name] = dict(low=low, high=high, factor=factor, gaps=gaps, weight=weight, field=f)
    return out


def energy(state, profile, params, geom=None):
    """EnergyReport with E0 (low-regularity part) and E = E0 + good-unknown part."""
    g = state.grid
    mh = miles_howard_margin(profile, params.g)
    if not state.is_finite():
        return EnergyReport(math.nan, math.nan, {}, math.nan, math.nan, mh, True, state.t, "blown_up")
    jmin = float(state.jacobian(params.epsilon).min())
    if not jmin >= params.h_star:
        return EnergyReport(math.nan, math.nan, {}, math.nan, jmin, mh, True, state.t, "blown_up")
    terms = _energy_terms(state, profile, params)
    E0 = sum(t["low"] for t in terms.values())
    E = E0 + sum(t["high"] for t in terms.values())
    contributions = {k: t["low"] + t["high"] for k, t in terms.items()}
    if geom is None:
        geom = StaggeredGeometry(g, state.eta, params.epsilon)
    div = divergence_residual(state, profile, params, geom)
    status = "near_degenerate" if jmin < 2 * params.h_star else "healthy"
    return EnergyReport(E0, E, contributions, div, jmin, mh, False, state.t, status)


def energy_equivalence_check(state, profile, params, raise_on_failure=False):
    """Return (ratio, lower, upper, ok) for E / (|V|_{H^s}^2 + mu |w|_{H^s}^2 + |eta|_{H^s}^2).

    The bracket is assembled per field from the realized weights m <= weight <= M,
    the good-unknown gaps tau = max ||f^Lambda - Lambda f|| / ||f||_{H^s}, and
    kappa = (1 + xi1^2)^2 / xi1^4, xi1 = 2 pi / L, which bounds Lambda^s by
    |D|^2 Lambda^(s-2) off the x-mean mode:

        lower = min(1, m / max(kappa, 1)) / (s + 1) - 2 m (s + 1) tau
        upper = 1 + M (1 + 2 tau + (s + 1) tau^2)

    The ratio of sums lies between the smallest lower and largest upper bound.
    Returns ratio = nan (check skipped, ok = True) for the zero state.
    """
    g = state.grid
    s = params.s_diag
    xi1 = 2 * np.pi / g.L
    kappa = max((1 + xi1 ** 2) ** 2 / xi1 ** 4, 1.0)
    terms = _energy_terms(state, profile, params)
    num = 0.0
    den = 0.0
    lows = []
    ups = []
    for t in terms.values():
        n = sobolev_norm(t["field"], s, s, g)
        if n == 0:
            continue
        num += t["low"] + t["high"]
        den += t["factor"] * n ** 2
        m = float(t["weight"].min())
        M = float(t["weight"].max())
        tau = max(t["gaps"]) / n
        lows.append(min(1.0, m / kappa) / (s + 1) - 2 * m * (s + 1) * tau)
        ups.append(1 + M * (1 + 2 * tau + (s + 1) * tau ** 2))
    if den == 0:
        return math.nan, math.nan, math.nan, True
    ratio = num / den
    lower, upper = min(lows), max(ups)
    ok = lower <= ratio <= upper
    if raise_on_failure and not ok:
        raise AssertionError(f"energy ratio {ratio:.6g} outside [{lower:.6g}, {upper:.6g}]")
    return ratio, lower, upper, ok


def quadratic_energy(state, profile, params):
    """L^2-level energy split: kinetic rho J (|V|^2 + mu w^2) and potential (rho N^2) eta^2, each halved."""
    g = state.grid
    rhoJ = g.column(profile.momentum_density) * state.jacobian(params.epsilon)
    kin = inner(rhoJ * state.V, state.V, g) + params.mu * inner(rhoJ * state.w, state.w, g)
    pot = inner(g.column(profile.eta_weight) * state.eta, state.eta, g)
    return {"kinetic": 0.5 * kin, "potential": 0.5 * pot}


@dataclass(frozen=True)
class MonitorStatus:
    kind: str  # "Healthy", "JacobianNearDegenerate" or "BlownUp"
    min_jacobian: float
    reason: Optional[str] = None

    @property
    def healthy(self):
        return self.kind == "Healthy"

    @property
    def blown_up(self):
        return self.kind == "BlownUp"


def blowup_monitor(state, params):
    """Classify a state by the Jacobian margin, finiteness and the H^s norm ceiling."""
    if not state.is_finite():
        return MonitorStatus("BlownUp", math.nan, "non-finite field")
    jmin = float(state.jacobian(params.epsilon).min())
    if not jmin >= params.h_star:
        return MonitorStatus("BlownUp", jmin, f"min(1+eps*h) = {jmin:.6g} < h_star = {params.h_star:.6g}")
    g = state.grid
    s = params.s_diag
    norm = sum(sobolev_norm(f, s, s, g) for _, f in _components(state))
    if not norm <= params.norm_ceiling:
        return MonitorStatus("BlownUp", jmin, f"H^{s} norm {norm:.6g} above ceiling {params.norm_ceiling:.6g}")
    if jmin < 2 * params.h_star:
        return MonitorStatus("JacobianNearDegenerate", jmin)
    return MonitorStatus("Healthy", jmin)


MIN_SAMPLES = 10


def growth_rate_fit(series):
    """Least-squares slope of log E against t over the samples with E > 0."""
    data = np.asarray(series, dtype=float).reshape(-1, 2)
    t, E = data[:, 0], data[:, 1]
    keep = np.isfinite(t) & np.isfinite(E) & (E > 0)
    if keep.sum() < MIN_SAMPLES:
        raise InsufficientData(f"need at least {MIN_SAMPLES} positive samples, got {int(keep.sum())}")
    t, logE = t[keep], np.log(E[keep])
    if np.ptp(t) == 0:
        raise InsufficientData("all samples at the same time")
    slope, _ = np.polyfit(t, logE, 1)
    return float(slope)
