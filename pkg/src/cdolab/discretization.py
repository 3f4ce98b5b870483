"""Spatial discretisation: grid, finite-difference operators, initial datum.

The density of surviving distances-to-default lives on a uniform grid over
[a, b] with zero Dirichlet boundaries.  The state vector holds the d
*interior* nodes ``x_i = a + i dx`` (i = 1..d, ``dx = (b-a)/(d+1)``); the
boundary nodes x_0 = a and x_{d+1} = b carry value 0 implicitly.

Operators are tridiagonal Toeplitz:

    Dx  = (1/2dx)  tridiag(-1, 0, 1)        (central first derivative)
    Dxx = (1/dx^2) tridiag( 1,-2, 1)        (second derivative)

and the model operators are

    B = 1/2 Dxx - beta Dx          (full generator, SPDE drift part)
    A = -sqrt(rho) Dx              (common-factor transport)
    C = (1-rho)/2 Dxx - beta Dx    (generator of the shifted PDE)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

DEFAULT_DOMAIN = (-10.0, 20.0)
DEFAULT_INTERIOR_POINTS = 201


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform grid on [a, b] with d interior points and Dirichlet ends."""

    a: float
    b: float
    d: int

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.b <= self.a:
            raise InvalidParameterError(f"need finite a < b, got [{self.a}, {self.b}]")
        if self.d < 3:
            raise InvalidParameterError(f"need at least 3 interior points, got {self.d}")

    @property
    def dx(self) -> float:
        return (self.b - self.a) / (self.d + 1)

    @property
    def interior(self) -> np.ndarray:
        """Interior nodes x_1..x_d."""
        return self.a + self.dx * np.arange(1, self.d + 1)

    @property
    def nodes(self) -> np.ndarray:
        """All nodes x_0..x_{d+1} including the boundary."""
        return self.a + self.dx * np.arange(self.d + 2)


def default_grid() -> SpaceGrid:
    a, b = DEFAULT_DOMAIN
    return SpaceGrid(a, b, DEFAULT_INTERIOR_POINTS)


@dataclass(frozen=True)
class TridiagOperator:
    """d x d tridiagonal Toeplitz operator with zero-Dirichlet truncation.

    ``sub``, ``diag``, ``sup`` are the constant band values.  ``matvec``
    applies the operator to the last axis of an array, so a path ensemble of
    shape (n_paths, d) goes through in one call.
    """

    sub: float
    diag: float
    sup: float
    d: int

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[-1] != self.d:
            raise InvalidParameterError(f"operand last axis {v.shape[-1]} != d={self.d}")
        out = self.diag * v
        out[..., 1:] += self.sub * v[..., :-1]
        out[..., :-1] += self.sup * v[..., 1:]
        return out

    def add_matvec(self, v: np.ndarray, out: np.ndarray, scale=None) -> None:
        """out += scale * (T v), fused to avoid temporaries in hot loops."""
        if scale is None:
            out += self.diag * v
            out[..., 1:] += self.sub * v[..., :-1]
            out[..., :-1] += self.sup * v[..., 1:]
        else:
            s = np.asarray(scale)[..., None] if np.ndim(scale) else scale
            out += (s * self.diag) * v
            out[..., 1:] += (s * self.sub) * v[..., :-1]
            out[..., :-1] += (s * self.sup) * v[..., 1:]

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.d, self.d))
        idx = np.arange(self.d)
        m[idx, idx] = self.diag
        m[idx[1:], idx[:-1]] = self.sub
        m[idx[:-1], idx[1:]] = self.sup
        return m

    def norm1(self) -> float:
        """Exact 1-norm (max column abs sum) of the truncated operator."""
        return abs(self.sub) + abs(self.diag) + abs(self.sup)

    def __add__(self, other):
        if not isinstance(other, TridiagOperator) or other.d != self.d:
            return NotImplemented
        return TridiagOperator(
            self.sub + other.sub, self.diag + other.diag, self.sup + other.sup, self.d
        )

    def scaled(self, c: float) -> "TridiagOperator":
        return TridiagOperator(c * self.sub, c * self.diag, c * self.sup, self.d)


@dataclass(frozen=True)
class ModelOperators:
    """The discrete operators for one (grid, beta, rho) configuration."""

    grid: SpaceGrid
    beta: float
    rho: float
    Dx: TridiagOperator
    Dxx: TridiagOperator
    B: TridiagOperator
    A: TridiagOperator
    C: TridiagOperator


def build_operators(grid: SpaceGrid, beta: float, rho: float) -> ModelOperators:
    if not 0.0 <= rho < 1.0:
        raise InvalidParameterError(f"rho must lie in [0, 1), got {rho}")
    if not math.isfinite(beta):
        raise InvalidParameterError(f"beta must be finite, got {beta}")
    dx, d = grid.dx, grid.d
    Dx = TridiagOperator(-1.0 / (2 * dx), 0.0, 1.0 / (2 * dx), d)
    Dxx = TridiagOperator(1.0 / dx**2, -2.0 / dx**2, 1.0 / dx**2, d)
    B = Dxx.scaled(0.5) + Dx.scaled(-beta)
    A = Dx.scaled(-math.sqrt(rho))
    C = Dxx.scaled(0.5 * (1.0 - rho)) + Dx.scaled(-beta)
    return ModelOperators(grid=grid, beta=beta, rho=rho, Dx=Dx, Dxx=Dxx, B=B, A=A, C=C)


def smooth_initial_datum(x0: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Project a cloud of initial positions onto the grid as a density.

    Each name contributes a triangular hat of peak 1 and support 2dx centred
    on its position; the density is the hat average scaled to unit mass:

        v_i = (1/(K dx)) sum_k hat_i(x0_k).

    Positions must lie in (a + dx, b - dx) so no mass leaks into the
    boundary hats; out-of-range positions are clamped to the nearest
    admissible node with a warning.  Trapezoidal mass is exactly 1 up to
    rounding.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.size == 0 or not np.all(np.isfinite(x0)):
        raise InvalidParameterError("x0 cloud must be non-empty and finite")
    dx = grid.dx
    lo, hi = grid.a + dx, grid.b - dx
    if np.any(x0 <= lo) or np.any(x0 >= hi):
        warnings.warn(
            f"{np.sum((x0 <= lo) | (x0 >= hi))} initial positions outside "
            f"({lo:g}, {hi:g}); clamping to keep their mass on the grid",
            stacklevel=2,
        )
        x0 = np.clip(x0, lo, hi)
    K = x0.size
    v = np.zeros(grid.d, dtype=np.float64)
    # fractional node index of each name; in [1, d] after clamping
    g = (x0 - grid.a) / dx
    j = np.floor(g).astype(np.intp)
    frac = g - j
    # hat at node j takes weight (1 - frac), hat at node j+1 takes frac;
    # with positions inside (a+dx, b-dx) both land on interior nodes
    np.add.at(v, j - 1, 1.0 - frac)
    sel = (frac > 0) & (j <= grid.d - 1)
    np.add.at(v, j[sel], frac[sel])
    v /= K * dx
    return v


def mass(v: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Trapezoidal mass of a density (batched over leading axes).

    Boundary values are zero by construction, so the trapezoid rule
    degenerates to ``dx * sum(v)``.
    """
    v = np.asarray(v)
    if v.shape[-1] != grid.d:
        raise InvalidParameterError(f"density last axis {v.shape[-1]} != d={grid.d}")
    return grid.dx * v.sum(axis=-1)


def truncate_at_barrier(v: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Zero the density at nodes with x_i <= 0 (names counted as defaulted)."""
    keep = grid.interior > 0.0
    return np.asarray(v) * keep
