import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid

from isopyc.calculus import dr, lambda_pow
from isopyc.diagnostics import (OperatorLabel, alinhac_commutation_residual, blowup_monitor, energy,
                                energy_equivalence_check, good_unknown, growth_rate_fit, low_index,
                                operator_set, quadratic_energy)
from isopyc.domain import FlowState, Grid, SimParams, build_profile, exp_density, random_state
from isopyc.errors import InsufficientData


@pytest.fixture
def setup():
    g = Grid(Nx=16, Nr=33)
    p = SimParams(epsilon=0.1, mu=0.25, s_diag=3)
    return g, p, build_profile(exp_density(), None, g, p)


def eta_state(g, a=0.3):
    R, X = g.mesh()
    return FlowState(g, np.zeros(g.vshape), np.zeros(g.shape), a * np.sin(X) * np.sin(np.pi * R))


def test_operator_set():
    assert [str(op) for op in operator_set(3)] == ["LamDr(1)", "LamDr(2)", "LamDr(3)", "DsqLam"]
    with pytest.raises(ValueError):
        OperatorLabel("Grad")


def test_good_unknown_reduces_to_operator(setup):
    g, p, _ = setup
    R, X = g.mesh()
    f = np.cos(X) * np.exp(R)
    op = OperatorLabel.lam_dr(1)
    flat = FlowState.zeros(g)
    assert np.array_equal(good_unknown(f, flat, p, op), op.apply(f, 3, g))
    s = eta_state(g)
    p0 = SimParams(epsilon=0.0, s_diag=3)
    assert np.array_equal(good_unknown(f, s, p0, op), op.apply(f, 3, g))


def test_good_unknown_assembly(setup):
    g, p, _ = setup
    R, X = g.mesh()
    f = np.cos(X) * np.exp(R)
    s = eta_state(g)
    J = 1 + p.epsilon * (-dr(s.eta, g))
    lam_eta = lambda_pow(dr(s.eta, g), 2, g)
    expect = lambda_pow(dr(f, g), 2, g) + p.epsilon * lam_eta * dr(f, g) / J
    assert np.allclose(good_unknown(f, s, p, OperatorLabel.lam_dr(1)), expect, atol=1e-13)


def test_alinhac_flat_and_x_independent(setup):
    g, p, _ = setup
    R, X = g.mesh()
    f = np.cos(X) * np.exp(R) + np.sin(2 * X) * R ** 2
    for op in operator_set(3):
        assert alinhac_commutation_residual(f, FlowState.zeros(g), p, op) < 1e-12
    # x-independent f on an x-independent stratification: every term carries |D|^2
    layered = FlowState(g, np.zeros(g.vshape), np.zeros(g.shape), 0.3 * np.sin(np.pi * R))
    assert alinhac_commutation_residual(np.exp(R), layered, p, OperatorLabel.dsq_lam()) < 1e-12


def test_alinhac_second_order(setup):
    _, p, _ = setup
    res = []
    for Nr in (33, 65, 129):
        g = Grid(Nx=16, Nr=Nr)
        R, X = g.mesh()
        s = FlowState(g, np.zeros(g.vshape), np.zeros(g.shape), 0.5 * np.sin(X) * R * (1 - R) * (1 + R))
        res.append(alinhac_commutation_residual(np.cos(X) * np.exp(R), s, p, OperatorLabel.lam_dr(1)))
    assert np.log2(res[0] / res[1]) > 1.7 and np.log2(res[1] / res[2]) > 1.7


def test_energy_parseval_oracle(setup):
    g, p, prof = setup
    s = eta_state(g, 1.0)
    col = np.sin(np.pi * g.r)[:, None]
    w = prof.eta_weight
    sig = low_index(g, p)
    d = [col]
    for _ in range(3):
        d.append(dr(d[-1], g))
    d = [c[:, 0] for c in d]
    col = d[0]
    # sin x is an eigenfunction of Lambda with eigenvalue sqrt 2
    E0 = sum(np.sqrt(2 ** (sig - l) * np.pi * trapezoid(d[l] ** 2, dx=g.dr)) for l in range(3)) ** 2
    high = sum(2 ** (3 - l) * np.pi * trapezoid(w * d[l] ** 2, dx=g.dr) for l in (1, 2, 3))
    high += 2 ** (3 - 2) * np.pi * trapezoid(w * col ** 2, dx=g.dr)
    rep = energy(s, prof, p)
    assert rep.E0 == pytest.approx(E0, rel=1e-12)
    assert rep.E == pytest.approx(E0 + high, rel=1e-12)
    assert not rep.blown_up and rep.status == "healthy"


@given(lam=st.floats(0.01, 10.0), seed=st.integers(0, 10 ** 6))
def test_energy_homogeneous_without_coupling(lam, seed):
    g = Grid(Nx=16, Nr=17)
    p = SimParams(epsilon=0.0, mu=0.25, s_diag=3)
    prof = build_profile(exp_density(), None, g, p)
    s = random_state(g, seed, 0.2, 0.0)
    big = FlowState(g, lam * s.V, lam * s.w, lam * s.eta)
    assert energy(big, prof, p).E == pytest.approx(lam ** 2 * energy(s, prof, p).E, rel=1e-10)


@given(seed=st.integers(0, 10 ** 6), eps=st.floats(0.0, 0.5))
def test_energy_bracket(seed, eps):
    g = Grid(Nx=16, Nr=17)
    p = SimParams(epsilon=eps, mu=0.25, s_diag=3)
    prof = build_profile(exp_density(), None, g, p)
    ratio, lo, hi, ok = energy_equivalence_check(random_state(g, seed, 0.2, eps, jacobian_floor=0.5), prof, p)
    assert ok and lo <= ratio <= hi


def test_energy_zero_state(setup):
    g, p, prof = setup
    rep = energy(FlowState.zeros(g), prof, p)
    assert rep.E == 0 and rep.E0 == 0
    assert np.isnan(energy_equivalence_check(FlowState.zeros(g), prof, p)[0])
    assert quadratic_energy(FlowState.zeros(g), prof, p) == {"kinetic": 0.0, "potential": 0.0}


def _ramp_state(g, eps, target):
    """x-independent eta = a sin(pi r) with min(1 + eps h) close to 1 - target at r = 0."""
    R, X = g.mesh()
    a = target / (eps * np.pi)
    return FlowState(g, np.zeros(g.vshape), np.zeros(g.shape), a * np.sin(np.pi * R) * np.ones_like(X))


@pytest.mark.parametrize("target,kind", [(0.95, "BlownUp"), (0.85, "JacobianNearDegenerate"),
                                         (0.5, "Healthy")])
def test_monitor_thresholds(target, kind):
    g = Grid(Nx=8, Nr=257)
    p = SimParams(epsilon=0.5)
    st_ = _ramp_state(g, 0.5, target)
    status = blowup_monitor(st_, p)
    assert status.min_jacobian == pytest.approx(1 - target, abs=1e-3)
    assert status.kind == kind


def test_monitor_non_finite():
    g = Grid(Nx=8, Nr=9)
    s = FlowState.zeros(g)
    s.V[0, 3, 3] = np.nan
    assert blowup_monitor(s, SimParams()).blown_up
    assert energy(s, build_profile(exp_density(), None, g, SimParams()), SimParams()).blown_up


def test_monitor_norm_ceiling():
    g = Grid(Nx=8, Nr=9)
    s = random_state(g, 1, 1.0, 0.1)
    assert blowup_monitor(s, SimParams(norm_ceiling=1e-3)).blown_up


def test_growth_rate_fit():
    t = np.linspace(0, 1, 20)
    assert growth_rate_fit(np.column_stack([t, np.full_like(t, 3.0)])) == pytest.approx(0, abs=1e-12)
    assert growth_rate_fit(np.column_stack([t, np.exp(2 * t)])) == pytest.approx(2, abs=1e-6)
    with pytest.raises(InsufficientData):
        growth_rate_fit(np.column_stack([t[:9], np.exp(t[:9])]))
