"""Deterministic solvers for the shifted PDE formulation.

Within one quarter the substitution ``u(t, x) = v(t, x + sqrt(rho) (M_t -
M_{T_n}))`` removes the stochastic transport and leaves the constant-
coefficient PDE

    u_t = (1 - rho)/2 u_xx - beta u_x      (operator C),

so each quarter costs either a few tridiagonal solves (theta scheme, with
Rannacher start-up: theta = 1 for the first four half time-steps, then
Crank-Nicolson) or a single dense propagator multiply ``exp(C delta)``
computed once and cached.  The stochastic part returns at the quarter end
as a pure evaluation shift: ``v(T_{n+1}, x_i) = u(delta, x_i - sqrt(rho)
Delta M)`` via natural cubic spline interpolation with zero extrapolation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm as _dense_expm

from .discretization import SpaceGrid, TridiagOperator
from .errors import InvalidParameterError, NumericError


@dataclass(frozen=True)
class _ThomasFactor:
    """Prefactored Thomas elimination for a constant-band tridiagonal.

    The left matrix never changes between steps, so the forward-elimination
    multipliers are computed once; each solve is two substitution sweeps.
    """

    sub: float
    inv_denom: np.ndarray = field(repr=False)
    cprime: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, sub: float, diag: float, sup: float, d: int) -> "_ThomasFactor":
        denom = np.empty(d)
        cprime = np.empty(d - 1)
        denom[0] = diag
        for i in range(1, d):
            cprime[i - 1] = sup / denom[i - 1]
            denom[i] = diag - sub * cprime[i - 1]
        if np.any(denom == 0.0) or not np.all(np.isfinite(denom)):
            raise NumericError("tridiagonal system is singular to working precision")
        return cls(sub=sub, inv_denom=1.0 / denom, cprime=cprime)

    def solve_axis0(self, rhs: np.ndarray) -> np.ndarray:
        """Solve in place; ``rhs`` holds one grid node per row."""
        rhs[0] *= self.inv_denom[0]
        for i in range(1, rhs.shape[0]):
            rhs[i] -= self.sub * rhs[i - 1]
            rhs[i] *= self.inv_denom[i]
        for i in range(rhs.shape[0] - 2, -1, -1):
            rhs[i] -= self.cprime[i] * rhs[i + 1]
        return rhs


@dataclass(frozen=True)
class _ThetaStage:
    """One (theta, dt) pair: cached left factorization + right operator."""

    theta: float
    dt: float
    factor: _ThomasFactor = field(repr=False)
    rhs: TridiagOperator = field(repr=False)
    lhs: TridiagOperator = field(repr=False)


@dataclass(frozen=True)
class ThetaSolverPlan:
    """Precomputed stages for one quarter of the theta scheme.

    ``l_points`` grid points per quarter means ``l_points - 1`` full steps
    of size ``dt``.  With Rannacher start-up the first two full steps are
    replaced by four implicit-Euler half steps; the remaining steps are
    Crank-Nicolson.  Without it every step is plain theta = 1/2.
    """

    C: TridiagOperator
    delta: float
    l_points: int
    rannacher: bool
    half_stage: _ThetaStage | None
    full_stage: _ThetaStage

    @classmethod
    def build(
        cls, C: TridiagOperator, delta: float, l_points: int, rannacher: bool = True
    ) -> "ThetaSolverPlan":
        if delta <= 0:
            raise InvalidParameterError(f"quarter length must be positive, got {delta}")
        if l_points < 2:
            raise InvalidParameterError(f"need at least 2 time points, got {l_points}")
        if rannacher and l_points < 4:
            raise InvalidParameterError(
                "Rannacher start-up replaces two full steps; need l_points >= 4"
            )
        dt = delta / (l_points - 1)

        def stage(theta: float, step: float) -> _ThetaStage:
            lhs = TridiagOperator(
                -theta * step * C.sub,
                1.0 - theta * step * C.diag,
                -theta * step * C.sup,
                C.d,
            )
            rhs = TridiagOperator(
                (1 - theta) * step * C.sub,
                1.0 + (1 - theta) * step * C.diag,
                (1 - theta) * step * C.sup,
                C.d,
            )
            return _ThetaStage(
                theta=theta,
                dt=step,
                factor=_ThomasFactor.build(lhs.sub, lhs.diag, lhs.sup, C.d),
                rhs=rhs,
                lhs=lhs,
            )

        half = stage(1.0, dt / 2.0) if rannacher else None
        full = stage(0.5, dt)
        return cls(
            C=C, delta=delta, l_points=l_points, rannacher=rannacher,
            half_stage=half, full_stage=full,
        )


def _matvec_axis0(op: TridiagOperator, ut: np.ndarray, out: np.ndarray) -> np.ndarray:
    """``out = op @ ut`` with grid nodes on axis 0 (paths on axis 1)."""
    np.multiply(op.diag, ut, out=out)
    out[1:] += op.sub * ut[:-1]
    out[:-1] += op.sup * ut[1:]
    return out


def step_theta(u: np.ndarray, stage: _ThetaStage) -> np.ndarray:
    """One theta step ``(I - theta dt C) u' = (I + (1-theta) dt C) u``.

    Batched over leading axes: a (n_paths, d) input solves all paths in
    the same substitution sweeps.
    """
    rhs = stage.rhs.matvec(u)
    if rhs.ndim == 1:
        return stage.factor.solve_axis0(rhs[:, None])[:, 0]
    out = np.ascontiguousarray(rhs.T)
    stage.factor.solve_axis0(out)
    return np.ascontiguousarray(out.T)


def evolve_quarter_theta(u: np.ndarray, plan: ThetaSolverPlan) -> np.ndarray:
    """Evolve one quarter: Rannacher half-steps first, then Crank-Nicolson.

    The state keeps a nodes-first layout for the whole quarter so the
    per-step cost is one banded multiply and two substitution sweeps,
    with no intermediate transposes.
    """
    squeeze = u.ndim == 1
    # Unconditional copy: the swap below would otherwise hand a view of the
    # caller's array to the scratch buffer and scribble over their input.
    ut = np.atleast_2d(u).T.copy(order="C")
    buf = np.empty_like(ut)
    schedule = []
    n_full = plan.l_points - 1
    if plan.rannacher:
        schedule.append((plan.half_stage, 4))
        n_full -= 2
    schedule.append((plan.full_stage, n_full))
    for stage, reps in schedule:
        for _ in range(reps):
            _matvec_axis0(stage.rhs, ut, buf)
            stage.factor.solve_axis0(buf)
            ut, buf = buf, ut
    out = np.ascontiguousarray(ut.T)
    return out[0] if squeeze else out


class PropagatorCache:
    """Cache of dense quarter propagators ``exp(C delta)``.

    Keyed by the operator bands and the horizon, so a pricing run with
    equal quarters performs exactly one dense exponential.
    """

    def __init__(self):
        self._cache: dict = {}
        self.builds = 0

    def get(self, C: TridiagOperator, delta: float) -> np.ndarray:
        key = (C.sub, C.diag, C.sup, C.d, delta)
        p = self._cache.get(key)
        if p is None:
            p = build_propagator(C, delta)
            self._cache[key] = p
            self.builds += 1
        return p


def build_propagator(C: TridiagOperator, delta: float) -> np.ndarray:
    """Dense ``exp(C delta)`` (Padé scaling-and-squaring)."""
    if delta <= 0:
        raise InvalidParameterError(f"horizon must be positive, got {delta}")
    p = _dense_expm(delta * C.to_dense())
    if not np.all(np.isfinite(p)):
        raise NumericError(
            f"propagator overflowed for bands ({C.sub:.3e}, {C.diag:.3e}, {C.sup:.3e}), "
            f"delta={delta}"
        )
    return p


_SPLINE_FACTOR_CACHE: dict = {}


def _spline_factor(d: int) -> _ThomasFactor:
    """Prefactored tridiag(1/6, 2/3, 1/6) system for natural-spline curvatures."""
    f = _SPLINE_FACTOR_CACHE.get(d)
    if f is None:
        f = _ThomasFactor.build(1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, d)
        _SPLINE_FACTOR_CACHE[d] = f
    return f


def _spline_curvatures(u: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Second derivatives of the natural cubic spline through (nodes, [0,u,0]).

    The interior system is tridiag(1/6, 2/3, 1/6) m = Dxx u, identical for
    every path, so a batch solves in the same substitution sweeps.
    Boundary curvatures are zero (natural condition).
    """
    h = grid.dx
    rhs = np.empty_like(u)
    rhs[...] = -2.0 * u
    rhs[..., 1:] += u[..., :-1]
    rhs[..., :-1] += u[..., 1:]
    rhs /= h * h
    if rhs.ndim == 1:
        return _spline_factor(grid.d).solve_axis0(rhs[:, None])[:, 0]
    out = np.ascontiguousarray(rhs.T)
    _spline_factor(grid.d).solve_axis0(out)
    return np.ascontiguousarray(out.T)


def spline_shift(u: np.ndarray, grid: SpaceGrid, shift) -> np.ndarray:
    """Evaluate the natural-spline interpolant of ``u`` at ``x_i - shift``.

    ``u`` is a density on the interior nodes (value 0 at both boundary
    nodes); evaluation points falling outside [a, b] read as zero (with the
    lost mass implicitly recorded by the next mass computation).  Batched:
    ``u`` of shape (n_paths, d) with one shift per path.  A shift larger
    than half the domain is almost certainly a driver bug, so it warns.
    """
    u2 = np.atleast_2d(np.asarray(u, dtype=np.float64))
    s = np.atleast_1d(np.asarray(shift, dtype=np.float64))
    if u2.shape[0] != s.shape[0]:
        raise InvalidParameterError(f"{u2.shape[0]} paths but {s.shape[0]} shifts")
    if np.any(np.abs(s) > 0.5 * (grid.b - grid.a)):
        warnings.warn(
            "common-factor shift exceeds half the domain; density mass will "
            "be lost to zero-extrapolation",
            stacklevel=2,
        )
    d, h = grid.d, grid.dx
    m2 = _spline_curvatures(u2, grid)
    # padded knot arrays including the zero boundary values/curvatures
    n_paths = u2.shape[0]
    y_pad = np.zeros((n_paths, d + 2))
    y_pad[:, 1 : d + 1] = u2
    m_pad = np.zeros((n_paths, d + 2))
    m_pad[:, 1 : d + 1] = m2
    # fractional knot coordinate of each evaluation point x_i - s
    g = np.arange(1, d + 1, dtype=np.float64)[None, :] - (s / h)[:, None]
    j = np.floor(g).astype(np.intp)
    theta = g - j
    valid = (j >= 0) & (j <= d)
    jc = np.clip(j, 0, d)
    y0 = np.take_along_axis(y_pad, jc, axis=1)
    y1 = np.take_along_axis(y_pad, jc + 1, axis=1)
    c0 = np.take_along_axis(m_pad, jc, axis=1)
    c1 = np.take_along_axis(m_pad, jc + 1, axis=1)
    omt = 1.0 - theta
    h2 = h * h / 6.0
    vals = omt * y0 + theta * y1 + h2 * ((omt**3 - omt) * c0 + (theta**3 - theta) * c1)
    vals[~valid] = 0.0
    return vals.reshape(np.shape(u))


def evolve_quarter_pde(
    v: np.ndarray,
    dm_quarter,
    rho: float,
    grid: SpaceGrid,
    *,
    plan: ThetaSolverPlan | None = None,
    propagator: np.ndarray | None = None,
) -> np.ndarray:
    """Evolve one quarter in the PDE formulation and undo the shift.

    Exactly one of ``plan`` (theta scheme) or ``propagator`` (dense Magnus
    exponential) drives the deterministic part; the common factor enters
    only through the end-of-quarter spline shift by ``sqrt(rho) Delta M``.
    Truncation at the barrier stays with the caller.
    """
    if (plan is None) == (propagator is None):
        raise InvalidParameterError("pass exactly one of plan or propagator")
    if plan is not None:
        u = evolve_quarter_theta(v, plan)
    else:
        u = v @ propagator.T
    if rho == 0.0:
        return u
    return spline_shift(u, grid, math.sqrt(rho) * np.asarray(dm_quarter))
