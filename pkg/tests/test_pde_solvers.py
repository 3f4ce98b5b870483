"""Tests for the theta scheme, exact propagator and the spline shift.

The hand-rolled natural spline evaluation is checked against scipy's
CubicSpline with the same boundary conditions, which keeps an independent
route to the same numbers.
"""

import numpy as np
import pytest
from scipy.interpolate import CubicSpline
from scipy.linalg import expm

from cdolab import (
    InvalidParameterError,
    PropagatorCache,
    SpaceGrid,
    ThetaSolverPlan,
    build_operators,
    build_propagator,
    evolve_quarter_pde,
    evolve_quarter_theta,
    spline_shift,
    step_theta,
)


def _grid(d=40, a=-3.0, b=5.0):
    return SpaceGrid(a, b, d)


def _bump(grid, centre=1.0, width=0.6):
    x = grid.interior
    return np.exp(-((x - centre) ** 2) / (2 * width**2))


def test_theta_plan_validation():
    g = _grid()
    ops = build_operators(g, 0.3, 0.2)
    with pytest.raises(InvalidParameterError):
        ThetaSolverPlan.build(ops.C, 0.25, 3, rannacher=True)  # needs >= 4 steps
    plan = ThetaSolverPlan.build(ops.C, 0.25, 8)
    assert plan.rannacher


def test_step_theta_matches_dense_solve():
    g = _grid(d=30)
    ops = build_operators(g, 0.25, 0.36)
    plan = ThetaSolverPlan.build(ops.C, 0.25, 8, rannacher=False)
    stage = plan.full_stage
    rng = np.random.default_rng(4)
    u = rng.standard_normal((5, 30))
    got = step_theta(u, stage)
    cd = ops.C.to_dense()
    dt = 0.25 / 7
    lhs = np.eye(30) - 0.5 * dt * cd
    rhs = np.eye(30) + 0.5 * dt * cd
    for p in range(5):
        want = np.linalg.solve(lhs, rhs @ u[p])
        assert got[p] == pytest.approx(want, rel=1e-11, abs=1e-12)


def test_rannacher_quarter_is_implicit_halves_then_cn():
    g = _grid(d=30)
    ops = build_operators(g, 0.25, 0.36)
    plan = ThetaSolverPlan.build(ops.C, 0.25, 8, rannacher=True)
    u0 = np.atleast_2d(_bump(g))
    got = evolve_quarter_theta(u0, plan)
    u = u0
    for _ in range(4):
        u = step_theta(u, plan.half_stage)
    for _ in range(8 - 3):
        u = step_theta(u, plan.full_stage)
    assert got == pytest.approx(u, rel=1e-13)


def test_theta_converges_to_exact_propagator():
    g = _grid(d=60)
    ops = build_operators(g, 0.25, 0.36)
    p = build_propagator(ops.C, 0.25)
    u0 = _bump(g)
    want = p @ u0
    err_prev = None
    for l_points in (9, 17, 33):
        plan = ThetaSolverPlan.build(ops.C, 0.25, l_points, rannacher=False)
        got = evolve_quarter_theta(np.atleast_2d(u0), plan)[0]
        err = np.max(np.abs(got - want))
        if err_prev is not None:
            assert err < err_prev / 3.0  # second order in time
        err_prev = err


def test_propagator_matches_scipy_and_conserves_mass():
    g = _grid(d=41)
    ops = build_operators(g, 0.1, 0.5)
    p = build_propagator(ops.C, 0.25)
    assert p == pytest.approx(expm(0.25 * ops.C.to_dense()), rel=1e-12)
    # interior columns of C sum to zero, so the propagator conserves the
    # integral of anything supported well away from the edges (boundary
    # leakage decays like a Gaussian tail, ~1e-9 twelve cells in)
    col = p.sum(axis=0)
    assert col[12:-12] == pytest.approx(np.ones(41 - 24), abs=1e-7)


def test_propagator_cache_builds_once():
    g = _grid()
    ops = build_operators(g, 0.3, 0.2)
    cache = PropagatorCache()
    p1 = cache.get(ops.C, 0.25)
    p2 = cache.get(ops.C, 0.25)
    assert cache.builds == 1
    assert p1 is p2
    cache.get(ops.C, 0.5)
    assert cache.builds == 2
    ops2 = build_operators(g, 0.31, 0.2)
    cache.get(ops2.C, 0.25)
    assert cache.builds == 3


def test_spline_shift_zero_is_identity():
    g = _grid()
    u = _bump(g)
    got = spline_shift(np.atleast_2d(u), g, np.array([0.0]))[0]
    assert got == pytest.approx(u, rel=1e-12, abs=1e-14)


def test_spline_shift_matches_scipy_natural_spline():
    g = _grid(d=55)
    rng = np.random.default_rng(7)
    shifts = np.array([0.35, -1.2, 0.0, 2.7, -0.4142])
    u = np.vstack([_bump(g, c, w) for c, w in ((0.5, 0.7), (1.5, 0.4), (0.0, 1.0), (2.0, 0.9), (-1.0, 0.5))])
    u += 0.01 * rng.standard_normal(u.shape)
    got = spline_shift(u, g, shifts)
    nodes = g.nodes
    for p in range(5):
        padded = np.concatenate(([0.0], u[p], [0.0]))
        cs = CubicSpline(nodes, padded, bc_type="natural")
        xq = g.interior - shifts[p]
        want = np.where((xq >= g.a) & (xq <= g.b), cs(xq), 0.0)
        assert got[p] == pytest.approx(want, rel=1e-9, abs=1e-11)


def test_spline_shift_by_whole_cells_is_exact_at_nodes():
    g = _grid(d=48)
    u = _bump(g)
    k = 5
    s = k * g.dx
    got = spline_shift(np.atleast_2d(u), g, np.array([s]))[0]
    # u(x - s) sampled on the grid is u rolled right by k cells
    want = np.zeros_like(u)
    want[k:] = u[:-k]
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_spline_shift_warns_on_huge_shift():
    g = _grid()
    u = np.atleast_2d(_bump(g))
    with pytest.warns(UserWarning):
        spline_shift(u, g, np.array([0.8 * (g.b - g.a)]))


def test_evolve_quarter_pde_requires_exactly_one_engine():
    g = _grid()
    ops = build_operators(g, 0.3, 0.2)
    plan = ThetaSolverPlan.build(ops.C, 0.25, 8)
    prop = build_propagator(ops.C, 0.25)
    v = np.atleast_2d(_bump(g))
    dm = np.array([0.1])
    with pytest.raises(InvalidParameterError):
        evolve_quarter_pde(v, dm, 0.2, g)
    with pytest.raises(InvalidParameterError):
        evolve_quarter_pde(v, dm, 0.2, g, plan=plan, propagator=prop)


def test_evolve_quarter_pde_shifts_by_common_factor():
    g = _grid(d=80)
    rho = 0.36
    ops = build_operators(g, 0.3, rho)
    prop = build_propagator(ops.C, 0.25)
    v = np.atleast_2d(_bump(g))
    dm = np.array([0.5])
    got = evolve_quarter_pde(v, dm, rho, g, propagator=prop)
    u = v @ prop.T
    want = spline_shift(u, g, np.sqrt(rho) * dm)
    assert got == pytest.approx(want, rel=1e-12)
    # rho = 0: no shift at all
    ops0 = build_operators(g, 0.3, 0.0)
    prop0 = build_propagator(ops0.C, 0.25)
    got0 = evolve_quarter_pde(v, dm, 0.0, g, propagator=prop0)
    assert got0 == pytest.approx(v @ prop0.T, rel=1e-12)
