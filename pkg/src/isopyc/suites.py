"""Verification suites.

Each criterion function takes a RunConfig (for the base resolution and seed)
and returns a list of Check records. SUITES groups them under the names
accepted by `isopyc verify`.
"""

import math
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .calculus import inner
from .diagnostics import (OperatorLabel, alinhac_commutation_residual, energy,
                          energy_equivalence_check, growth_rate_fit, quadratic_energy)
from .domain import (FlowState, Grid, SimParams, build_profile, exp_density, linear_density,
                     linear_shear, random_state, tanh_jet, tanh_pycnocline)
from .dynamics import buoyancy, integrate, prepare_initial_data
from .euler_bridge import from_eulerian, to_eulerian
from .pressure import (StaggeredGeometry, divergence_residual, hydrostatic_split, make_problem,
                       solve_neumann)


@dataclass
class Check:
    name: str
    value: float
    bound: str
    passed: bool
    detail: str = ""

    def row(self):
        mark = "PASS" if self.passed else "FAIL"
        line = f"{self.name:<52} {self.value:>12.4e}  {self.bound:<18} {mark}"
        return line + (f"  ({self.detail})" if self.detail else "")


def at_most(name, value, limit, detail=""):
    return Check(name, float(value), f"<= {limit:.3g}", bool(value <= limit), detail)


def at_least(name, value, limit, detail=""):
    return Check(name, float(value), f">= {limit:.3g}", bool(value >= limit), detail)


def within(name, value, lo, hi, detail=""):
    return Check(name, float(value), f"in [{lo:.3g}, {hi:.3g}]", bool(lo <= value <= hi), detail)


def levels(Nr):
    """Vertical resolutions with the base Nr halved and doubled in dr."""
    return [(Nr - 1) // 2 + 1, Nr, 2 * (Nr - 1) + 1]


def order(drs, errs):
    """Least-squares slope of log err against log dr."""
    return float(np.polyfit(np.log(drs), np.log(errs), 1)[0])


def _l2_centres(e, g):
    return float(np.sqrt(np.sum(e ** 2) * g.dr * g.cell_area))


# 1 -------------------------------------------------------------------------

def elliptic_manufactured(cfg):
    """Flat operator, rho = 1: P* = cos x cos(pi r) solves mu P_xx + P_rr = -(mu + pi^2) P*."""
    Nx, Nr = cfg["grid.Nx"], cfg["grid.Nr"]
    checks = []
    for mu in (1.0, 0.25):
        errs, drs, horiz = [], [], 0.0
        for n in levels(Nr):
            g = Grid(d=1, Nx=Nx, Nr=n)
            geom = StaggeredGeometry(g, np.zeros(g.shape), 0.0)
            Rc, Xc = g.mesh_centers()
            exact = np.cos(Xc) * np.cos(np.pi * Rc)
            prob = make_problem(geom, np.ones(n), mu, -(mu + np.pi ** 2) * exact)
            e = solve_neumann(prob, tol=1e-13).P - exact
            errs.append(_l2_centres(e, g))
            drs.append(g.dr)
            # the forcing is one x-mode, so any error outside it is horizontal error
            E = np.fft.rfft(e, axis=-1)
            E[:, 1] = 0.0
            horiz = max(horiz, _l2_centres(np.fft.irfft(E, n=Nx, axis=-1), g))
        detail = ", ".join(f"{x:.2e}" for x in errs)
        checks.append(within(f"elliptic mu={mu:g}: Richardson slope in dr", order(drs, errs), 1.8, 2.2, detail))
        checks.append(at_most(f"elliptic mu={mu:g}: horizontal error", horiz, 1e-10))
    return checks


# 2 -------------------------------------------------------------------------

def elliptic_variable(cfg):
    """eps = 0.2, eta = 0.5 sin x r(1-r): PCG iterations to 1e-10 stay bounded under refinement."""
    Nx, Nr = cfg["grid.Nx"], cfg["grid.Nr"]
    checks = []
    for (nx, nr) in zip((Nx // 2, Nx, 2 * Nx), levels(Nr)):
        g = Grid(d=1, Nx=nx, Nr=nr)
        R, X = g.mesh()
        geom = StaggeredGeometry(g, 0.5 * np.sin(X) * R * (1 - R), 0.2)
        # a discrete divergence is exactly compatible with homogeneous Neumann data
        V = (np.cos(X) * np.exp(R))[None]
        w = np.sin(np.pi * R) * np.sin(2 * X)
        rhs = geom.jdiv(V, w) / geom.J_c
        for mu in (1.0, 0.25):
            field = solve_neumann(make_problem(geom, np.ones(nr), mu, rhs), tol=1e-10, max_iter=500)
            checks.append(at_most(f"variable elliptic Nx={nx} Nr={nr} mu={mu:g}: PCG iterations",
                                  field.iterations, 60, f"residual {field.residual_norm:.1e}"))
    return checks


# 3 -------------------------------------------------------------------------

def hydrostatic_identity(cfg):
    """max |(1/rho) dr_phi P_h + b - eps h b / J| against 5 dr^2 max|rho b|, and its order."""
    Nx, Nr = cfg["grid.Nx"], cfg["grid.Nr"]
    p = SimParams(epsilon=0.1, mu=1.0)
    errs, drs, checks = [], [], []
    for n in levels(Nr):
        g = Grid(d=1, Nx=Nx, Nr=n)
        prof = build_profile(exp_density(1.0), None, g, p)
        R, X = g.mesh()
        state = FlowState(g, np.zeros(g.vshape), np.zeros(g.shape), 0.5 * np.sin(X) * R * (1 - R) * (1 + R))
        _, res = hydrostatic_split(state, prof, p)
        scale = np.abs(g.column(prof.rho_of_r) * buoyancy(state, prof, p)).max()
        err = np.abs(res).max()
        errs.append(err)
        drs.append(g.dr)
        checks.append(at_most(f"hydrostatic residual Nr={n}", err, 5 * g.dr ** 2 * scale))
    checks.append(within("hydrostatic residual: order in dr", order(drs, errs), 1.8, 2.2))
    return checks


# 4 -------------------------------------------------------------------------

ALINHAC_OPS = (OperatorLabel.lam_dr(1), OperatorLabel.dsq_lam())


def alinhac_identity(cfg):
    """Commutation residual for Lambda^(s-1) d_r and |D|^2 Lambda^(s-2), s = 3."""
    Nx, Nr = cfg["grid.Nx"], cfg["grid.Nr"]
    p = SimParams(epsilon=0.1, s_diag=3)
    res = {op: [] for op in ALINHAC_OPS}
    drs = []
    for n in levels(Nr) + [4 * (Nr - 1) + 1]:
        g = Grid(d=1, Nx=Nx, Nr=n)
        R, X = g.mesh()
        state = FlowState(g, np.zeros(g.vshape), np.zeros(g.shape), 0.5 * np.sin(X) * R * (1 - R) * (1 + R))
        f = np.cos(X) * np.exp(R) + np.sin(2 * X) * R ** 2
        for op in ALINHAC_OPS:
            res[op].append(alinhac_commutation_residual(f, state, p, op))
        drs.append(g.dr)
    g = Grid(d=1, Nx=Nx, Nr=Nr)
    R, X = g.mesh()
    flat = FlowState.zeros(g)
    f = np.cos(X) * np.exp(R) + np.sin(2 * X) * R ** 2
    checks = []
    for op in ALINHAC_OPS:
        detail = ", ".join(f"{x:.2e}" for x in res[op])
        checks.append(within(f"Alinhac {op}: order in dr", order(drs, res[op]), 1.7, 2.3, detail))
        checks.append(at_most(f"Alinhac {op}: flat-geometry residual",
                              alinhac_commutation_residual(f, flat, p, op), 1e-12))
    return checks


# 5 -------------------------------------------------------------------------

def _misfits(W, t, y):
    """Least-squares residual of y ~ a + b cos(W t) + c sin(W t), for each W."""
    C = np.cos(np.outer(W, t))
    S = np.sin(np.outer(W, t))
    n = t.size
    G = np.empty((W.size, 3, 3))
    G[:, 0, 0] = n
    G[:, 0, 1] = G[:, 1, 0] = C.sum(1)
    G[:, 0, 2] = G[:, 2, 0] = S.sum(1)
    G[:, 1, 1] = np.einsum("ij,ij->i", C, C)
    G[:, 2, 2] = np.einsum("ij,ij->i", S, S)
    G[:, 1, 2] = G[:, 2, 1] = np.einsum("ij,ij->i", C, S)
    b = np.stack([np.full(W.size, y.sum()), C @ y, S @ y], axis=1)
    coef = np.linalg.solve(G, b[..., None])[..., 0]
    return y @ y - np.einsum("ij,ij->i", coef, b)


def fit_frequency(t, y):
    """Angular frequency of the best fit y ~ a + b cos(W t) + c sin(W t)."""
    from scipy.optimize import minimize_scalar
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    t = t - t[0]
    y = (y - y.mean()) / max(np.abs(y - y.mean()).max(), 1e-300)
    # coarse peak from a zero-padded periodogram of the resampled series, then a bounded refinement
    n = 8 * t.size
    dt = np.min(np.diff(t))
    u = np.interp(np.arange(0.0, t[-1], dt), t, y)
    power = np.abs(np.fft.rfft(u - u.mean(), n))
    W = 2 * np.pi * np.fft.rfftfreq(n, dt)
    k = int(np.argmax(power[1:])) + 1
    lo, hi = W[max(k - 2, 1)], W[min(k + 2, W.size - 1)]
    return float(minimize_scalar(lambda w: _misfits(np.array([w]), t, y)[0], bounds=(lo, hi),
                                 method="bounded", options={"xatol": 1e-12}).x)


WAVE_MODES = ((1, 1), (2, 1), (1, 2))


def internal_waves(cfg, modes=WAVE_MODES, mus=(1.0, 0.25), t_end=20.0):
    """Linear standing waves: the potential-energy series oscillates at twice the mode frequency."""
    g = Grid(d=1, Nx=cfg["grid.Nx"], Nr=cfg["grid.Nr"])
    R, X = g.mesh()
    checks = []
    for k, n in modes:
        for mu in mus:
            p = SimParams(epsilon=1e-6, mu=mu, dt=1e-3, t_end=t_end)
            prof = build_profile(exp_density(1.0), None, g, p, boussinesq=True)
            state = prepare_initial_data(np.zeros(g.vshape), np.zeros(g.shape),
                                         np.sin(n * np.pi * R) * np.cos(k * X), prof, p)
            ts = [0.0]
            pe = [quadratic_energy(state, prof, p)["potential"]]

            def sample(st):
                ts.append(st.t)
                pe.append(quadratic_energy(st, prof, p)["potential"])

            integrate(state, prof, p, t_end=t_end, callback=sample, every=50)
            om2 = k ** 2 / (mu * k ** 2 + (n * np.pi) ** 2)
            om = 0.5 * fit_frequency(ts, pe)
            checks.append(at_most(f"wave (k,n)=({k},{n}) mu={mu:g}: |w^2/w_exact^2 - 1|",
                                  abs(om ** 2 / om2 - 1), 0.01, f"omega {om:.6f} vs {math.sqrt(om2):.6f}"))
    return checks


# 6 -------------------------------------------------------------------------

def equilibrium_fixed_point(cfg, n_steps=1000):
    g = Grid(d=1, Nx=cfg["grid.Nx"], Nr=cfg["grid.Nr"])
    checks = []
    for eps in (0.0, 0.1, 0.3):
        for mu in (1.0, 0.25, 0.04):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                p = SimParams(epsilon=eps, mu=mu, dt=1e-3)
            width = 0.2
            jet = tanh_jet(0.8 * math.sqrt(mu) * width, 0.5, width)  # max |Vbar'| = 0.8 sqrt(mu)
            prof = build_profile(exp_density(1.0), jet, g, p)
            out = integrate(FlowState.zeros(g), prof, p, n_steps=n_steps)
            checks.append(at_most(f"equilibrium eps={eps:g} mu={mu:g}: max amplitude", out.max_amplitude(), 1e-10))
    return checks


# 7 -------------------------------------------------------------------------

def divergence_propagation(cfg, t_end=1.0):
    Nx, Nr = cfg["grid.Nx"], cfg["grid.Nr"]
    checks = []
    for nx, nr in ((Nx // 2, levels(Nr)[0]), (Nx, Nr)):
        g = Grid(d=1, Nx=nx, Nr=nr)
        p = SimParams(epsilon=0.1, mu=0.25, dt=1e-3)
        prof = build_profile(exp_density(1.0), linear_shear(0.25), g, p)
        raw = random_state(g, cfg["initial.seed"], 0.1, p.epsilon)
        state = prepare_initial_data(raw.V, raw.w, raw.eta, prof, p)
        d0 = divergence_residual(state, prof, p)
        worst = [d0]
        integrate(state, prof, p, t_end=t_end,
                  callback=lambda st: worst.append(divergence_residual(st, prof, p)), every=10)
        checks.append(at_most(f"divergence Nx={nx} Nr={nr}: max_t div_residual", max(worst),
                              10 * (d0 + 1e-8), f"initial {d0:.2e}"))
    return checks


# 8 -------------------------------------------------------------------------

def growth_sweep(cfg, t_end=1.0, amplitude=0.3, mu=0.25):
    """Fitted log-energy growth rates over (eps, |Vbar'|) / sqrt(mu) in {0, 0.5, 1}^2."""
    g = Grid(d=1, Nx=cfg["grid.Nx"], Nr=cfg["grid.Nr"])
    axis = (0.0, 0.5, 1.0)
    raw = random_state(g, cfg["initial.seed"], amplitude, 0.5)
    rates = {}
    for a in axis:
        for b in axis:
            p = SimParams(epsilon=a * math.sqrt(mu), mu=mu, dt=1e-3)
            prof = build_profile(exp_density(1.0), linear_shear(b * math.sqrt(mu)), g, p)
            state = prepare_initial_data(raw.V, raw.w, raw.eta, prof, p)
            series = [(state.t, energy(state, prof, p).E)]
            integrate(state, prof, p, t_end=t_end,
                      callback=lambda st: series.append((st.t, energy(st, prof, p).E)), every=20)
            rates[a, b] = growth_rate_fit(series)
    keys = list(rates)
    rho = spearmanr([a + b for a, b in keys], [rates[k] for k in keys]).statistic
    pairs = [(rates[a, b], rates[a2, b]) for a, a2 in zip(axis, axis[1:]) for b in axis]
    pairs += [(rates[a, b], rates[a, b2]) for b, b2 in zip(axis, axis[1:]) for a in axis]
    mono = sum(r1 <= r2 for r1, r2 in pairs)
    detail = f"{mono}/{len(pairs)} axis steps nondecreasing; rates " + \
        " ".join(f"{rates[k]:.3g}" for k in keys)
    return [at_least("growth-rate trend: Spearman rho vs (eps + |Vbar'|)/sqrt(mu)", rho, 0.8, detail)]


# 9 -------------------------------------------------------------------------

def bridge_round_trip(cfg, resolutions=(33, 65, 129)):
    checks = []
    errs, drs = [], []
    for n in resolutions:
        g = Grid(d=1, Nx=cfg["grid.Nx"], Nr=n)
        p = SimParams(epsilon=0.1, mu=1.0)
        prof = build_profile(exp_density(1.0), tanh_jet(0.1, 0.5, 0.2), g, p)
        state = random_state(g, cfg["initial.seed"], 0.5, p.epsilon)
        back = from_eulerian(to_eulerian(state, prof, p, n), prof, p, g)
        num = sum(inner(a - b, a - b, g) for a, b in ((state.V, back.V), (state.w, back.w), (state.eta, back.eta)))
        den = sum(inner(a, a, g) for a in (state.V, state.w, state.eta))
        errs.append(math.sqrt(num / den))
        drs.append(g.dr)
    detail = ", ".join(f"{x:.2e}" for x in errs)
    checks.append(at_most(f"bridge round trip Nr=Nz={resolutions[-1]}: relative L2 error", errs[-1], 1e-6, detail))
    checks.append(at_least("bridge round trip: contraction order in dr", order(drs, errs), 2.5))
    return checks


# 10 ------------------------------------------------------------------------

def energy_bracket(cfg, n_states=100):
    g = Grid(d=1, Nx=cfg["grid.Nx"], Nr=cfg["grid.Nr"])
    rng = np.random.default_rng(cfg["initial.seed"])
    failures = 0
    worst = math.inf
    for i in range(n_states):
        mu = rng.uniform(0.1, 1.0)
        eps = rng.uniform(0.0, min(0.3, math.sqrt(mu)))
        p = SimParams(epsilon=eps, mu=mu, s_diag=3)
        kind = i % 3
        if kind == 0:
            rho = exp_density(rng.uniform(0.5, 2.0))
        elif kind == 1:
            rho = linear_density(rng.uniform(0.5, 2.0))
        else:
            rho = tanh_pycnocline(delta_rho=rng.uniform(0.1, 0.5), width=rng.uniform(0.1, 0.3))
        prof = build_profile(rho, None, g, p, boussinesq=bool(rng.integers(2)))
        state = random_state(g, rng, 10 ** rng.uniform(-3, 0), eps)
        ratio, lo, hi, ok = energy_equivalence_check(state, prof, p)
        failures += not ok
        worst = min(worst, ratio - lo, hi - ratio)
    return [at_most(f"energy bracket on {n_states} random states: failures", failures, 0,
                    f"smallest margin {worst:.3g}")]


# 11 ------------------------------------------------------------------------

STEEPENING = {
    "params.epsilon": 0.5, "params.mu": 0.25, "params.t_end": 5.0, "params.dt": 1e-3,
    "initial.kind": "w_mode", "initial.amplitude": 10.0, "output.series_every": 10,
}


def blowup_detection(cfg):
    """A strongly forced mode collapses a layer; the Jacobian channel must fire while fields are finite."""
    from .cli import execute_run
    run_cfg = cfg.replace(**{k.replace(".", "__"): v for k, v in STEEPENING.items()})
    with tempfile.TemporaryDirectory() as out:
        result = execute_run(run_cfg, out)
    rep = result.final_report
    jac = rep is not None and rep.blown_up and math.isfinite(rep.min_jacobian) \
        and rep.min_jacobian < run_cfg["params.h_star"]
    return [
        Check("blow-up run: exit code", result.exit_code, "== 3", result.exit_code == 3, result.message),
        Check("blow-up run: min_jacobian channel, finite fields", float(rep.min_jacobian) if rep else math.nan,
              f"< h_star = {run_cfg['params.h_star']:g}", bool(jac and result.last_finite)),
    ]


CRITERIA = {
    1: elliptic_manufactured,
    2: elliptic_variable,
    3: hydrostatic_identity,
    4: alinhac_identity,
    5: internal_waves,
    6: equilibrium_fixed_point,
    7: divergence_propagation,
    8: growth_sweep,
    9: bridge_round_trip,
    10: energy_bracket,
    11: blowup_detection,
}


def duality_check(cfg):
    """The discrete gradient is the negative adjoint of the discrete divergence."""
    g = Grid(d=1, Nx=cfg["grid.Nx"], Nr=cfg["grid.Nr"])
    s = random_state(g, cfg["initial.seed"], 0.3, 0.3)
    geom = StaggeredGeometry(g, s.eta, 0.3)
    q = np.random.default_rng(cfg["initial.seed"]).standard_normal((g.Nr - 1, g.Nx))
    Gx, Gr = geom.grad(q)
    # cell centres carry weight dr, nodes the trapezoid weights
    tw = g.column(g.trap_weights)
    lhs = np.sum(q * geom.jdiv(s.V, s.w)) * g.dr
    rhs = -np.sum(tw * Gx * s.V) - np.sum(tw * Gr * s.w)
    rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return [at_most("duality <q, div U> = -<grad q, U>: relative defect", rel, 1e-12)]


SUITES = {
    "elliptic": (elliptic_manufactured, elliptic_variable),
    "identities": (hydrostatic_identity, alinhac_identity, duality_check),
    "waves": (internal_waves, equilibrium_fixed_point),
    "divergence": (divergence_propagation,),
    "bridge": (bridge_round_trip,),
    "energy": (energy_bracket, blowup_detection),
    "sweep": (growth_sweep,),
}


def run_suite(name, cfg):
    """All checks of a named suite; raises KeyError for unknown names."""
    checks = []
    for fn in SUITES[name]:
        checks.extend(fn(cfg))
    return checks
