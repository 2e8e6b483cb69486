import numpy as np
import pytest
from hypothesis import given, strategies as st

from isopyc.calculus import (DiffOps, div_phi_mu, dr, dr_phi, dsq_lambda, dx, grad_phi_x,
                             grad_x, inner, lambda_pow, mollify, mul, sobolev_norm)
from isopyc.domain import Grid
from isopyc.errors import JacobianDegenerate

coeffs = st.lists(st.floats(-1, 1), min_size=6, max_size=6)


def smooth(grid, c):
    R, X = grid.mesh()
    return (c[0] * np.cos(X) * np.cos(np.pi * R) + c[1] * np.sin(2 * X) * R ** 2
            + c[2] * np.exp(R) + c[3] * np.cos(3 * X + 1) * np.sin(R) + c[4] * R + c[5])


def test_dx_sine(grid, mesh):
    R, X = mesh
    assert np.abs(dx(np.sin(X), grid) - np.cos(X)).max() < 1e-12


def test_dx_constant(grid):
    assert np.abs(dx(np.full(grid.shape, 3.0), grid)).max() < 1e-14


def test_dr_quadratic_exact(grid, mesh):
    R, _ = mesh
    # second-order stencils, including the one-sided ones, are exact on quadratics
    assert np.abs(dr(R ** 2, grid) - 2 * R).max() < 1e-12


def test_dr_second_order():
    errs = []
    for Nr in (17, 33, 65):
        g = Grid(Nx=8, Nr=Nr)
        R, _ = g.mesh()
        errs.append(np.abs(dr(np.sin(3 * R), g) - 3 * np.cos(3 * R)).max())
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.8)


def test_dr_vector_field(grid, mesh):
    R, X = mesh
    V = np.stack([R ** 2, R * np.cos(X)])
    out = dr(V, grid)
    assert np.allclose(out[0], 2 * R) and np.allclose(out[1], np.cos(X))


def test_grad_phi_flat(grid, mesh):
    f = smooth(grid, [1, .5, .2, .3, .1, 0])
    ops = DiffOps(grid, np.zeros(grid.shape), 0.3)
    assert np.array_equal(grad_phi_x(f, ops), grad_x(f, grid))
    assert np.allclose(dr_phi(f, ops), -dr(f, grid))


def _chain_rule_error(Nr):
    g = Grid(Nx=32, Nr=Nr)
    R, X = g.mesh()
    eps = 0.2
    f = np.sin(X) * np.cos(R)
    eta = 0.5 * np.sin(X) * R * (1 - R)
    # pull-back of the Eulerian gradient: d_x f + eps d_x eta d_r f / J, J = 1 - eps d_r eta
    J = 1 - eps * 0.5 * np.sin(X) * (1 - 2 * R)
    exact = np.cos(X) * np.cos(R) + eps * 0.5 * np.cos(X) * R * (1 - R) * (-np.sin(X) * np.sin(R)) / J
    ops = DiffOps(g, eta, eps)
    return np.abs(grad_phi_x(f, ops)[0] - exact).max()


def test_grad_phi_chain_rule():
    e = [_chain_rule_error(n) for n in (17, 33, 65)]
    assert e[-1] < 1e-4
    assert np.log2(e[0] / e[1]) > 1.8 and np.log2(e[1] / e[2]) > 1.8


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c1=coeffs, c2=coeffs)
def test_grad_phi_linear(a, b, c1, c2):
    g = Grid(Nx=16, Nr=9)
    R, X = g.mesh()
    ops = DiffOps(g, 0.3 * np.sin(np.pi * R) * np.cos(X), 0.2)
    f1, f2 = smooth(g, c1), smooth(g, c2)
    lhs = grad_phi_x(a * f1 + b * f2, ops)
    rhs = a * grad_phi_x(f1, ops) + b * grad_phi_x(f2, ops)
    assert np.abs(lhs - rhs).max() <= 1e-12 * (1 + np.abs(rhs).max())


def test_dr_phi_of_r(grid, mesh):
    R, X = mesh
    ops = DiffOps(grid, 0.4 * np.sin(np.pi * R) * np.sin(X), 0.3)
    assert np.allclose(dr_phi(R, ops), -1 / ops.J, atol=1e-13)


@given(c=coeffs)
def test_dr_phi_identity(c):
    g = Grid(Nx=16, Nr=9)
    R, X = g.mesh()
    ops = DiffOps(g, 0.3 * np.sin(np.pi * R) * np.cos(2 * X), 0.5)
    f = smooth(g, c)
    assert np.allclose(ops.J * dr_phi(f, ops), -dr(f, g), atol=1e-12)


def test_div_phi_flat_example(grid, mesh):
    R, X = mesh
    ops = DiffOps(grid, np.zeros(grid.shape), 0.0)
    out = div_phi_mu((np.sin(X)[None], (R - R ** 2) * np.cos(X)), ops, 1.0)
    assert np.abs(out - (np.cos(X) - (1 - 2 * R) * np.cos(X))).max() < 1e-12
    assert np.abs(div_phi_mu((np.zeros(grid.vshape), np.zeros(grid.shape)), ops, 1.0)).max() == 0


def test_degenerate_jacobian(grid, mesh):
    R, _ = mesh
    with pytest.raises(JacobianDegenerate):
        DiffOps(grid, 2.0 * np.sin(np.pi * R), 1.0)


def test_lambda_examples(grid, mesh):
    R, X = mesh
    assert np.allclose(lambda_pow(np.sin(X), 1, grid), np.sqrt(2) * np.sin(X))
    assert np.abs(dsq_lambda(np.full(grid.shape, 2.0), 3, grid)).max() < 1e-14
    f = smooth(grid, [1, 1, 1, 1, 1, 1])
    assert np.array_equal(lambda_pow(f, 0, grid), f)


@given(c=coeffs, s=st.floats(0, 4))
def test_lambda_commutes_with_dx(c, s):
    g = Grid(Nx=16, Nr=9)
    f = smooth(g, c)
    a = lambda_pow(dx(f, g), s, g)
    b = dx(lambda_pow(f, s, g), g)
    assert np.abs(a - b).max() <= 1e-11 * (1 + np.abs(a).max())


def test_lambda_keeps_extended_precision(grid, mesh):
    f = mesh[1].astype(np.longdouble)
    assert lambda_pow(f, 2, grid).dtype == np.longdouble
    assert dr(f, grid).dtype == np.longdouble


def test_mollifier(grid, mesh):
    R, X = mesh
    f = np.sin(X) * R
    assert np.array_equal(mollify(f, 0.0, grid), f)
    assert np.allclose(mollify(np.sin(X), 0.5, grid), np.sin(X))
    assert np.abs(mollify(np.cos(8 * X), 0.5, grid)).max() < 1e-14


def test_sobolev_examples(grid, mesh):
    R, X = mesh
    assert sobolev_norm(np.zeros(grid.shape), 2, 2, grid) == 0
    assert sobolev_norm(np.sin(X), 1, 0, grid) == pytest.approx(np.sqrt(2 * np.pi))


@given(c=coeffs, s=st.integers(1, 4))
def test_sobolev_monotone_in_k(c, s):
    g = Grid(Nx=16, Nr=9)
    f = smooth(g, c)
    vals = [sobolev_norm(f, s, k, g) for k in range(s + 1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_dealiased_product_exact_for_low_modes(grid, mesh):
    R, X = mesh
    out = mul(np.cos(X), np.sin(2 * X), grid)
    assert np.allclose(out, np.cos(X) * np.sin(2 * X), atol=1e-13)


def test_inner_trapezoid(grid, mesh):
    R, X = mesh
    # trapezoid in r is exact on linear functions; Parseval in x
    assert inner(R, np.ones(grid.shape), grid) == pytest.approx(np.pi)
