"""Tests for the space grid, banded operators and the initial datum."""

import numpy as np
import pytest

from cdolab import (
    InvalidParameterError,
    SpaceGrid,
    build_operators,
    default_grid,
    mass,
    smooth_initial_datum,
    truncate_at_barrier,
)


def test_grid_geometry():
    g = SpaceGrid(-10.0, 20.0, 101)
    assert g.dx == pytest.approx(30.0 / 102.0)
    assert len(g.interior) == 101
    assert len(g.nodes) == 103
    assert g.nodes[0] == -10.0
    assert g.nodes[-1] == pytest.approx(20.0)
    assert g.interior[0] == pytest.approx(-10.0 + g.dx)
    # the barrier sits exactly on a node for this layout
    assert np.min(np.abs(g.interior)) < 1e-12


def test_default_grid_matches_constants():
    g = default_grid()
    assert (g.a, g.b, g.d) == (-10.0, 20.0, 201)


def test_grid_validation():
    with pytest.raises(InvalidParameterError):
        SpaceGrid(5.0, -5.0, 50)
    with pytest.raises(InvalidParameterError):
        SpaceGrid(-10.0, 20.0, 2)


def test_operator_dense_matches_matvec():
    g = SpaceGrid(-2.0, 3.0, 24)
    ops = build_operators(g, beta=0.3, rho=0.4)
    rng = np.random.default_rng(5)
    v = rng.standard_normal(24)
    for op in (ops.Dx, ops.Dxx, ops.B, ops.A, ops.C):
        dense = op.to_dense()
        assert op.matvec(v) == pytest.approx(dense @ v, rel=1e-13, abs=1e-13)
    # batched matvec agrees with row-by-row
    vb = rng.standard_normal((7, 24))
    got = ops.B.matvec(vb)
    for i in range(7):
        assert got[i] == pytest.approx(ops.B.matvec(vb[i]), rel=1e-13)


def test_operator_band_values():
    g = SpaceGrid(-1.0, 1.0, 19)
    dx = g.dx
    beta, rho = 0.25, 0.36
    ops = build_operators(g, beta, rho)
    # central first derivative: (v[i+1] - v[i-1]) / (2 dx)
    assert ops.Dx.sup == pytest.approx(1.0 / (2 * dx))
    assert ops.Dx.sub == pytest.approx(-1.0 / (2 * dx))
    assert ops.Dx.diag == 0.0
    # second derivative: (v[i+1] - 2 v[i] + v[i-1]) / dx^2
    assert ops.Dxx.sup == pytest.approx(1.0 / dx**2)
    assert ops.Dxx.diag == pytest.approx(-2.0 / dx**2)
    # B = Dxx/2 - beta Dx, A = -sqrt(rho) Dx, C = (1-rho)/2 Dxx - beta Dx
    assert ops.B.sub == pytest.approx(0.5 / dx**2 + beta / (2 * dx))
    assert ops.B.sup == pytest.approx(0.5 / dx**2 - beta / (2 * dx))
    assert ops.A.sub == pytest.approx(np.sqrt(rho) / (2 * dx))
    assert ops.A.sup == pytest.approx(-np.sqrt(rho) / (2 * dx))
    assert ops.C.diag == pytest.approx(-(1 - rho) / dx**2)


def test_operators_annihilate_smooth_functions_to_second_order():
    # Dx differentiates a sine to O(dx^2)
    errs = []
    for d in (100, 200, 400):
        g = SpaceGrid(-1.0, 1.0, d)
        ops = build_operators(g, beta=0.0, rho=0.0)
        x = g.interior
        v = np.sin(x)
        # interior rows only; boundary rows miss the outside neighbour
        got = ops.Dx.matvec(v)[1:-1]
        errs.append(np.max(np.abs(got - np.cos(x)[1:-1])))
    order1 = np.log2(errs[0] / errs[1])
    order2 = np.log2(errs[1] / errs[2])
    assert order1 > 1.9
    assert order2 > 1.9


def test_initial_datum_unit_mass_and_position():
    g = default_grid()
    x0 = np.array([1.8, 2.4, 3.1, 4.2])
    v = smooth_initial_datum(x0, g)
    assert mass(v, g) == pytest.approx(1.0, rel=1e-12)
    assert np.all(v >= 0)
    # the first moment reproduces the cloud mean (hat projection is
    # first-moment exact)
    mean = g.dx * np.sum(g.interior * v)
    assert mean == pytest.approx(x0.mean(), rel=1e-12)


def test_initial_datum_single_point_on_node():
    g = SpaceGrid(-1.0, 4.0, 49)
    x_node = g.interior[20]
    v = smooth_initial_datum(np.array([x_node]), g)
    # all mass in one node
    assert v[20] == pytest.approx(1.0 / g.dx)
    assert np.sum(v > 0) == 1


def test_initial_datum_clamps_outside_positions():
    g = SpaceGrid(-1.0, 1.0, 19)
    with pytest.warns(UserWarning):
        v = smooth_initial_datum(np.array([5.0]), g)
    assert mass(v, g) == pytest.approx(1.0)


def test_truncation_zeroes_barrier_and_below():
    g = default_grid()
    v = np.ones(g.d)
    t = truncate_at_barrier(v, g)
    assert np.all(t[g.interior <= 0] == 0)
    assert np.all(t[g.interior > 0] == 1)
    # batched form
    vb = np.ones((3, g.d))
    tb = truncate_at_barrier(vb, g)
    assert tb.shape == vb.shape
    assert np.all(tb[:, g.interior > 0] == 1)


def test_mass_is_riemann_sum():
    g = SpaceGrid(0.0, 1.0, 99)
    v = np.ones(g.d)
    assert mass(v, g) == pytest.approx(99 * g.dx)
