import numpy as np
import pytest
from hypothesis import given, strategies as st

from isopyc.domain import FlowState, Grid, SimParams, build_profile, exp_density, random_state
from isopyc.errors import CompatibilityDefect
from isopyc.pressure import (StaggeredGeometry, hydrostatic_split, leray_project, make_problem,
                             solve_neumann)


def flat(g):
    return StaggeredGeometry(g, np.zeros(g.shape), 0.0)


def test_zero_data_zero_pressure():
    g = Grid(Nx=16, Nr=17)
    field = solve_neumann(make_problem(flat(g), np.ones(g.Nr), 1.0, np.zeros((g.Nr - 1, g.Nx))))
    assert np.all(field.P == 0) and field.iterations == 0


@pytest.mark.parametrize("mu", [1.0, 0.25])
def test_manufactured_second_order(mu):
    errs = []
    for Nr in (17, 33, 65):
        g = Grid(Nx=16, Nr=Nr)
        Rc, Xc = g.mesh_centers()
        exact = np.cos(Xc) * np.cos(np.pi * Rc)
        P = solve_neumann(make_problem(flat(g), np.ones(Nr), mu, -(mu + np.pi ** 2) * exact), tol=1e-13).P
        errs.append(np.abs(P - exact).max())
    assert errs[-1] < 1e-3
    assert np.log2(errs[0] / errs[1]) > 1.8 and np.log2(errs[1] / errs[2]) > 1.8


def test_gauge_and_residual():
    g = Grid(Nx=16, Nr=17)
    R, X = g.mesh()
    geom = StaggeredGeometry(g, 0.4 * np.sin(X) * R * (1 - R), 0.3)
    rhs = geom.jdiv((np.cos(X) * np.exp(R))[None], np.sin(np.pi * R) * np.sin(X)) / geom.J_c
    field = solve_neumann(make_problem(geom, np.ones(g.Nr), 0.25, rhs), tol=1e-10)
    assert field.residual_norm <= 1e-10
    assert abs(np.sum(geom.J_c * field.P)) < 1e-10 * np.abs(field.P).sum()


def test_incompatible_data_rejected():
    g = Grid(Nx=16, Nr=17)
    with pytest.raises(CompatibilityDefect):
        solve_neumann(make_problem(flat(g), np.ones(g.Nr), 1.0, np.ones((g.Nr - 1, g.Nx))))


def test_hydrostatic_flat_state():
    g = Grid(Nx=16, Nr=17)
    p = SimParams()
    prof = build_profile(exp_density(), None, g, p)
    Ph, res = hydrostatic_split(FlowState.zeros(g), prof, p)
    assert np.all(Ph == 0) and np.all(res == 0)


def _divfree(seed=3):
    g = Grid(Nx=16, Nr=17)
    s = random_state(g, seed, 0.3, 0.3)
    geom = StaggeredGeometry(g, s.eta, 0.3)
    return g, geom, leray_project((s.V, s.w), geom, tol=1e-12)


def test_leray_keeps_divergence_free():
    g, geom, (V, w) = _divfree()
    V2, w2 = leray_project((V, w), geom, tol=1e-12)
    scale = np.abs(V).max() + np.abs(w).max()
    assert np.abs(V2 - V).max() <= 10 * 1e-12 * scale
    assert geom.div_norm(geom.jdiv(V2, w2)) <= 1e-9 * scale


def test_leray_annihilates_gradient():
    g = Grid(Nx=16, Nr=17)
    geom = flat(g)
    Rc, Xc = g.mesh_centers()
    Gx, Gr = geom.grad(np.cos(Xc) * np.cos(np.pi * Rc))
    V, w = leray_project((Gx / geom.J_n, Gr / geom.J_n), geom, tol=1e-13)
    assert np.abs(V).max() < 1e-9 and np.abs(w[1:-1]).max() < 1e-9


@given(seed=st.integers(0, 10 ** 6))
def test_leray_idempotent(seed):
    g, geom, (V, w) = _divfree(seed)
    tol = 1e-10
    V1, w1 = leray_project((V, w), geom, tol=tol)
    V2, w2 = leray_project((V1, w1), geom, tol=tol)
    scale = np.abs(V1).max() + np.abs(w1).max()
    assert np.abs(V2 - V1).max() <= 10 * tol * scale


@given(seed=st.integers(0, 10 ** 6), eps=st.floats(0.0, 0.6))
def test_gradient_divergence_duality(seed, eps):
    g = Grid(Nx=16, Nr=13)
    s = random_state(g, seed, 0.3, eps)
    geom = StaggeredGeometry(g, s.eta, eps)
    q = np.random.default_rng(seed).standard_normal((g.Nr - 1, g.Nx))
    Gx, Gr = geom.grad(q)
    tw = g.column(g.trap_weights)
    lhs = np.sum(q * geom.jdiv(s.V, s.w)) * g.dr
    rhs = -np.sum(tw * Gx * s.V) - np.sum(tw * Gr * s.w)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1e-300) + 1e-14
