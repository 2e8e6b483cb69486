import numpy as np
import pytest
from hypothesis import given, strategies as st

from isopyc.calculus import DiffOps
from isopyc.domain import (FlowState, Grid, SimParams, build_profile, exp_density, linear_shear,
                           random_state, tanh_jet, tanh_pycnocline)
from isopyc.dynamics import (buoyancy, buoyancy_remainder, h_continuity_residual, integrate,
                             prepare_initial_data, reconstruct_w, rhs, rhs_compiled, step)
from isopyc.errors import CFLViolation
from isopyc.pressure import StaggeredGeometry


def unit_eta(g):
    eta = np.ones(g.shape)
    eta[0] = eta[-1] = 0.0
    return FlowState(g, np.zeros(g.vshape), np.zeros(g.shape), eta)


def test_buoyancy_example():
    g = Grid(Nx=8, Nr=9)
    p = SimParams(epsilon=0.1)
    prof = build_profile(exp_density(), None, g, p)
    s = unit_eta(g)
    assert buoyancy(s, prof, p)[4, 0] == pytest.approx((1 - np.exp(-0.1)) / 0.1, rel=1e-12)
    assert buoyancy(s, prof, p)[4, 0] == pytest.approx(0.9516258, abs=1e-7)
    assert buoyancy_remainder(s, prof, p)[4, 0] == pytest.approx(-0.48374, abs=1e-5)


def test_buoyancy_linear_limit():
    g = Grid(Nx=8, Nr=9)
    p = SimParams(epsilon=0.0)
    prof = build_profile(exp_density(), None, g, p)
    s = unit_eta(g)
    assert np.allclose(buoyancy(s, prof, p), s.eta)
    assert np.allclose(buoyancy_remainder(s, prof, p)[1:-1], -0.5)


@given(eps=st.floats(1e-12, 1e-3))
def test_remainder_bounded_as_eps_vanishes(eps):
    g = Grid(Nx=8, Nr=9)
    p = SimParams(epsilon=eps)
    prof = build_profile(exp_density(), None, g, p)
    bt = buoyancy_remainder(unit_eta(g), prof, p)[1:-1]
    assert np.all(np.isfinite(bt))
    assert np.abs(bt + 0.5).max() < 1e-2


def test_reconstruct_w_flat():
    g = Grid(Nx=16, Nr=17)
    R, X = g.mesh()
    ops = DiffOps(g, np.zeros(g.shape), 0.0)
    # V independent of r: w = r d_x V, so w(1) = d_x V
    w, defect = reconstruct_w(np.sin(X)[None], ops)
    assert np.allclose(w, R * np.cos(X), atol=1e-13)
    assert defect == pytest.approx(1.0)
    _, defect = reconstruct_w((np.sin(X) * np.cos(np.pi * R))[None], ops)
    assert defect < 1e-12


def test_prepare_initial_data():
    g = Grid(Nx=16, Nr=17)
    p = SimParams(epsilon=0.2, mu=0.25)
    prof = build_profile(exp_density(), None, g, p)
    R, X = g.mesh()
    state, info = prepare_initial_data((np.cos(X) * np.exp(R))[None], R * np.sin(X),
                                       0.3 * np.sin(np.pi * R) * np.sin(X), prof, p, return_info=True)
    assert info["div_after"] <= 1e-9 * info["div_before"]
    assert np.all(state.w[[0, -1]] == 0)
    with pytest.raises(ValueError, match="eta_raw"):
        prepare_initial_data(np.zeros(g.vshape), np.zeros(g.shape), np.ones(g.shape), prof, p)


@pytest.fixture
def jet():
    g = Grid(Nx=32, Nr=17)
    p = SimParams(epsilon=0.1, mu=0.25, dt=2e-3)
    with pytest.warns(UserWarning):
        prof = build_profile(tanh_pycnocline(), tanh_jet(0.4), g, p)
    return g, p, prof


def test_equilibrium_is_steady(jet):
    g, p, prof = jet
    tend = rhs(FlowState.zeros(g), prof, p)
    for f in (tend.dV, tend.dw, tend.deta):
        assert np.abs(f).max() < 1e-12


def test_eta_tendency_boundary_rows(jet):
    g, p, prof = jet
    s = random_state(g, 4, 0.3, p.epsilon)
    tend = rhs(s, prof, p)
    assert np.all(tend.deta[[0, -1]] == 0)


def test_compiled_matches_reference(jet):
    pytest.importorskip("numba")
    g, p, prof = jet
    s = random_state(g, 5, 0.3, p.epsilon)
    a, b = rhs(s, prof, p), rhs_compiled(s, prof, p)
    for x, y in ((a.dV, b.dV), (a.dw, b.dw), (a.deta, b.deta)):
        assert np.abs(x - y).max() <= 1e-10 * (1 + np.abs(x).max())


def test_compiled_and_reference_steps_agree(jet):
    pytest.importorskip("numba")
    g, p, prof = jet
    s = random_state(g, 6, 0.2, p.epsilon)
    a = integrate(s, prof, p, n_steps=5, compiled=False)
    b = integrate(s, prof, p, n_steps=5, compiled=True)
    assert np.abs(a.eta - b.eta).max() < 1e-9 and a.t == pytest.approx(b.t)


def test_equilibrium_does_not_drift(jet):
    g, p, prof = jet
    s = integrate(FlowState.zeros(g), prof, p, n_steps=50)
    assert s.max_amplitude() < 1e-12
    assert s.t == pytest.approx(50 * p.dt)


def test_cfl_violation(jet):
    g, p, prof = jet
    s = random_state(g, 7, 0.5, p.epsilon)
    with pytest.raises(CFLViolation):
        step(s, prof, p, dt=1.0, compiled=False)


def _h_residuals(s, prof, p, dts=(4e-3, 2e-3, 1e-3)):
    return [h_continuity_residual(s, step(s, prof, p, dt=dt, compiled=False), dt, p, prof) for dt in dts]


def test_h_continuity_equilibrium():
    g = Grid(Nx=16, Nr=9)
    p = SimParams(epsilon=0.1, mu=1.0)
    prof = build_profile(exp_density(), linear_shear(0.2), g, p)
    s = FlowState.zeros(g)
    assert h_continuity_residual(s, step(s, prof, p, compiled=False), p.dt, p, prof) < 1e-13


def test_h_continuity_valid_run_is_small():
    g = Grid(Nx=32, Nr=33)
    p = SimParams(epsilon=0.05, mu=1.0)
    prof = build_profile(exp_density(), linear_shear(0.2), g, p)
    raw = random_state(g, 8, 0.2, p.epsilon, jacobian_floor=0.5)
    s = prepare_initial_data(raw.V, raw.w, raw.eta, prof, p)
    bad = _h_residuals(raw, prof, p, dts=(1e-3,))[0]
    good = _h_residuals(s, prof, p, dts=(1e-3,))[0]
    assert good < 1e-2 * bad


def test_h_continuity_spatial_order():
    res = []
    for Nx, Nr in ((32, 33), (64, 65)):
        g = Grid(Nx=Nx, Nr=Nr)
        p = SimParams(epsilon=0.05, mu=1.0)
        prof = build_profile(exp_density(), linear_shear(0.2), g, p)
        raw = random_state(g, 8, 0.2, p.epsilon, jacobian_floor=0.5)
        s = prepare_initial_data(raw.V, raw.w, raw.eta, prof, p)
        res.append(_h_residuals(s, prof, p, dts=(1e-3,))[0])
    assert np.log2(res[0] / res[1]) > 1.8
