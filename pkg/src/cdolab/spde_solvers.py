"""Stochastic solvers for the limit density SPDE.

Between two resettlement dates the surviving-density ensemble evolves under

    dv = B v dt + A v dM_t,       B = 1/2 Dxx - beta Dx,   A = -sqrt(rho) Dx,

one realisation of the common factor M per path.  Two schemes live here:

* Euler-Maruyama on the mild form: ``v <- v + B v dt + A v dM``.
* Stochastic Magnus expansion: ``v(t) = exp(Y_t) v(0)`` with the order-2 log

      Y_t = B t + A M_t - 1/2 A^2 t + [B,A] (int_0^t M_s ds - 1/2 t M_t),

  applied through a scaled truncated-Taylor action (no dense exponential is
  ever formed for the stochastic case; the per-path log stays a banded
  operator plus two corner entries).

The common factor is drawn once per pricing run by :class:`CommonFactorDriver`
and shared by every scheme, so cross-scheme comparisons see the same noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discretization import ModelOperators, TridiagOperator
from .errors import InvalidParameterError, NumericError

#: Philox stream tags; one sub-stream per purpose keeps draws independent
#: and bitwise reproducible regardless of threading.
STREAM_COMMON = 11
STREAM_IDIOSYNCRATIC = 12
STREAM_DATASET_W = 13
STREAM_DATASET_M = 14
STREAM_TUPLES = 15
STREAM_QUOTE_W = 16
STREAM_QUOTE_M = 17


def philox_gen(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for (seed, stream)."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class CommonFactorDriver:
    """Common-factor Brownian increments for all paths and quarters.

    ``dm_fine`` holds the per-step increments on the L-point quarter grid
    (shape (n_paths, n_quarters, L-1)); ``dm_quarter`` the full-quarter
    increments and ``int_m`` the time integral of the rebased factor over
    each quarter.  With ``exact_integrals=True`` the pair (M_delta, int M)
    is drawn from its exact joint Gaussian law instead (conditionally
    ``int M | M_delta ~ N(delta M_delta / 2, delta^3 / 12)``) and no fine
    grid exists, so the Euler scheme cannot consume such a driver.
    """

    delta: float
    n_paths: int
    n_quarters: int
    l_points: int
    seed: int
    dm_fine: np.ndarray | None
    dm_quarter: np.ndarray
    int_m: np.ndarray

    @classmethod
    def generate(
        cls,
        n_paths: int,
        n_quarters: int,
        delta: float,
        l_points: int = 15,
        seed: int = 0,
        exact_integrals: bool = False,
    ) -> "CommonFactorDriver":
        if n_paths < 1 or n_quarters < 1:
            raise InvalidParameterError("need n_paths >= 1 and n_quarters >= 1")
        if l_points < 2:
            raise InvalidParameterError(f"need at least 2 grid points per quarter, got {l_points}")
        if delta <= 0:
            raise InvalidParameterError(f"quarter length must be positive, got {delta}")
        gen = philox_gen(seed, STREAM_COMMON)
        if exact_integrals:
            z = gen.standard_normal((2, n_paths, n_quarters))
            dm_q = math.sqrt(delta) * z[0]
            int_m = 0.5 * delta * dm_q + math.sqrt(delta**3 / 12.0) * z[1]
            return cls(delta, n_paths, n_quarters, l_points, seed, None, dm_q, int_m)
        dt = delta / (l_points - 1)
        dm_fine = math.sqrt(dt) * gen.standard_normal((n_paths, n_quarters, l_points - 1))
        dm_quarter = dm_fine.sum(axis=2)
        # rebased path M_0=0, M_1, ..., M_{L-1} within each quarter; trapezoid
        m_pts = np.cumsum(dm_fine, axis=2)
        int_m = dt * (m_pts.sum(axis=2) - 0.5 * m_pts[:, :, -1])
        return cls(delta, n_paths, n_quarters, l_points, seed, dm_fine, dm_quarter, int_m)

    @property
    def dt_fine(self) -> float:
        return self.delta / (self.l_points - 1)


def step_euler_maruyama(
    v: np.ndarray, B: TridiagOperator, A: TridiagOperator, dt: float, dm
) -> np.ndarray:
    """One explicit step ``v + B v dt + A v dm`` (batched; ``dm`` per path)."""
    out = v.copy()
    B.add_matvec(v, out, scale=dt)
    A.add_matvec(v, out, scale=dm)
    return out


class MagnusLog:
    """Per-path Magnus logarithm ``Y = c0 + m A + q [B,A]`` in banded form.

    The constant part ``c0 = t B - t/2 A^2`` at *every* order: the
    ``-A^2/2`` term is the Ito-to-Stratonovich drift correction, which is
    applied before the expansion is truncated.  Order 2 adds the commutator
    term ``q [B,A]`` with the per-path scalar ``q = int M ds - t/2 M_t``.
    The commutator contributes only two corner diagonal entries,
    ``+kappa q`` at (0,0) and ``-kappa q`` at (d-1,d-1) with
    ``kappa = sqrt(rho) / (2 dx^3)``; squaring A widens the band to 2 and
    adds ``rho/(4 dx^2)`` on both corner diagonal entries.
    """

    def __init__(self, ops: ModelOperators, t: float, m_delta, int_m=None, order: int = 2):
        if order not in (1, 2):
            raise InvalidParameterError(f"Magnus order must be 1 or 2, got {order}")
        if t <= 0:
            raise InvalidParameterError(f"horizon must be positive, got {t}")
        m = np.atleast_1d(np.asarray(m_delta, dtype=np.float64))
        dx = ops.grid.dx
        rho = ops.rho
        self.d = ops.grid.d
        self.order = order
        self.t = t
        self.m = m
        B, A = ops.B, ops.A

        sub1 = t * B.sub
        diag = t * B.diag
        sup1 = t * B.sup
        # -t/2 * A^2 with A^2 = rho (Dx)^2: present at every order
        a2 = rho / (4.0 * dx * dx)
        self.sub2 = -0.5 * t * a2
        self.sup2 = -0.5 * t * a2
        diag = diag + 0.5 * t * 2.0 * a2
        self.corner_const = -0.5 * t * a2  # corner diagonal part of -t/2 A^2
        if order == 2:
            if int_m is None:
                raise InvalidParameterError("order-2 Magnus needs the integral of M")
            q = np.atleast_1d(np.asarray(int_m, dtype=np.float64)) - 0.5 * t * m
            if q.shape != m.shape:
                raise InvalidParameterError("int_m and m_delta shapes differ")
            self.kappa = math.sqrt(rho) / (2.0 * dx**3)
            self.q = q
        else:
            self.kappa = 0.0
            self.q = np.zeros_like(m)
        self.diag = diag
        self.sub1_const = sub1
        self.sup1_const = sup1
        self.a_sub = A.sub
        self.a_sup = A.sup
        # per-path first bands
        self.sub1 = sub1 + m * A.sub
        self.sup1 = sup1 + m * A.sup

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Y v for a batch (n_paths, d) (or (d,) with a single path)."""
        v2 = np.atleast_2d(v)
        out = self.diag * v2
        c0 = self.corner_const + self.kappa * self.q
        cd = self.corner_const - self.kappa * self.q
        out[:, 0] += c0 * v2[:, 0]
        out[:, -1] += cd * v2[:, -1]
        out[:, 1:] += self.sub1[:, None] * v2[:, :-1]
        out[:, :-1] += self.sup1[:, None] * v2[:, 1:]
        out[:, 2:] += self.sub2 * v2[:, :-2]
        out[:, :-2] += self.sup2 * v2[:, 2:]
        return out.reshape(np.shape(v))

    def norm1_bound(self) -> float:
        """Upper bound on the max per-path 1-norm (drives Taylor scaling)."""
        corner = abs(self.corner_const) + self.kappa * np.abs(self.q)
        col = (
            np.abs(self.sub1)
            + np.abs(self.sup1)
            + abs(self.diag)
            + abs(self.sub2)
            + abs(self.sup2)
        )
        return float(np.max(col + corner))

    def to_dense(self, path: int = 0) -> np.ndarray:
        d = self.d
        y = np.zeros((d, d))
        idx = np.arange(d)
        y[idx, idx] = self.diag
        y[0, 0] += self.corner_const + self.kappa * self.q[path]
        y[-1, -1] += self.corner_const - self.kappa * self.q[path]
        y[idx[1:], idx[:-1]] = self.sub1[path]
        y[idx[:-1], idx[1:]] = self.sup1[path]
        y[idx[2:], idx[:-2]] = self.sub2
        y[idx[:-2], idx[2:]] = self.sup2
        return y


def magnus_log(ops: ModelOperators, t: float, m_delta, int_m=None, order: int = 2) -> MagnusLog:
    """Build the per-path Magnus logarithm for one quarter."""
    return MagnusLog(ops, t, m_delta, int_m=int_m, order=order)


_EXPM_THETA = 4.0  # target per-substep 1-norm for the Taylor action
_EXPM_MAX_TERMS = 64


def expm_action(y, v: np.ndarray, tol: float = 1e-11) -> np.ndarray:
    """Compute ``exp(Y) v`` by scaling + truncated Taylor series.

    ``y`` is either a dense square matrix or a :class:`MagnusLog` (batched:
    one operator per path, acting on rows of ``v``).  The substep count is
    ``ceil(norm1 / theta)`` so each Taylor series converges fast and without
    destructive cancellation; if the series fails to reach ``tol`` within
    the term budget a :class:`NumericError` with norm diagnostics is raised.
    """
    if isinstance(y, MagnusLog):
        norm1 = y.norm1_bound()
        mv = y.matvec
    else:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise InvalidParameterError(f"dense operator must be square, got {y.shape}")
        norm1 = float(np.abs(y).sum(axis=0).max())

        def mv(w):
            return w @ y.T

    if not np.isfinite(norm1):
        raise NumericError("operator norm is not finite")
    s = max(1, int(math.ceil(norm1 / _EXPM_THETA)))
    out = np.array(v, dtype=np.float64, copy=True)
    for _ in range(s):
        term = out
        acc = out.copy()
        converged = False
        for k in range(1, _EXPM_MAX_TERMS + 1):
            term = mv(term) / (s * k)
            acc += term
            if np.max(np.abs(term)) <= tol * max(np.max(np.abs(acc)), 1e-300):
                converged = True
                break
        if not converged:
            raise NumericError(
                f"Taylor action did not converge: norm1~{norm1:.3e}, substeps={s}, "
                f"terms={_EXPM_MAX_TERMS}, last term {np.max(np.abs(term)):.3e}"
            )
        out = acc
    return out


def evolve_quarter_spde(
    v: np.ndarray,
    ops: ModelOperators,
    driver: CommonFactorDriver,
    quarter: int,
    scheme: str = "em",
    expm_tol: float = 1e-11,
) -> np.ndarray:
    """Evolve the ensemble over one quarter with the chosen stochastic scheme.

    ``v`` has shape (n_paths, d) and must already be truncated at the
    barrier (the caller's duty at quarter boundaries).  Schemes: ``"em"``
    (Euler-Maruyama over the driver's fine grid), ``"sm1"``/``"sm2"``
    (stochastic Magnus of order 1/2, one exponential action per path).
    """
    if v.ndim != 2 or v.shape[0] != driver.n_paths:
        raise InvalidParameterError(
            f"ensemble shape {v.shape} does not match driver paths {driver.n_paths}"
        )
    if not 0 <= quarter < driver.n_quarters:
        raise InvalidParameterError(f"quarter {quarter} out of range")
    if scheme == "em":
        if driver.dm_fine is None:
            raise InvalidParameterError("Euler scheme needs a fine-grid driver")
        dt = driver.dt_fine
        out = v
        for step in range(driver.l_points - 1):
            out = step_euler_maruyama(out, ops.B, ops.A, dt, driver.dm_fine[:, quarter, step])
        return out
    if scheme in ("sm1", "sm2"):
        order = 2 if scheme == "sm2" else 1
        y = magnus_log(
            ops,
            driver.delta,
            driver.dm_quarter[:, quarter],
            int_m=driver.int_m[:, quarter] if order == 2 else None,
            order=order,
        )
        return expm_action(y, v, tol=expm_tol)
    raise InvalidParameterError(f"unknown stochastic scheme {scheme!r}")
