"""Single-name analytics under the structural model.

Marginally each distance-to-default is an arithmetic Brownian motion with
unit diffusion, ``X_t = x0 + beta t + B_t`` (the split into idiosyncratic
and common drivers does not change the one-dimensional law, since
``sqrt(1-rho) W + sqrt(rho) M`` is again a standard Brownian motion).  That
gives closed forms for the continuously-monitored default time
``tau = inf{t : X_t <= 0}``:

    P(tau > t) = Phi((x0 + beta t)/sqrt(t)) - exp(-2 beta x0) Phi((-x0 + beta t)/sqrt(t))

and hence for fair CDS spreads, which in turn invert into implied ``x0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .core import Schedule, X0_BRACKET
from .errors import DegenerateQuoteError, InvalidParameterError, NoSolutionError

_INVERT_MAX_ITER = 200
_INVERT_REL_TOL = 1e-10


@dataclass(frozen=True)
class SingleNameState:
    """Initial distance-to-default and drift of one name."""

    x0: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.x0) and math.isfinite(self.beta)):
            raise InvalidParameterError("x0 and beta must be finite")


def survival_prob(state: SingleNameState, t):
    """P(tau > t) for the continuously-monitored first passage to zero.

    Vectorised over ``t``.  ``t = 0`` gives 1; ``x0 <= 0`` gives 0 (the name
    is already through the barrier); negative ``t`` raises.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or not np.all(np.isfinite(t_arr)):
        raise InvalidParameterError("t must be finite and non-negative")
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)

    if state.x0 <= 0.0:
        out = np.zeros_like(t_arr)
        return float(out[0]) if scalar else out

    out = np.ones_like(t_arr)
    pos = t_arr > 0
    if np.any(pos):
        tp = t_arr[pos]
        rt = np.sqrt(tp)
        x0, beta = state.x0, state.beta
        s = ndtr((x0 + beta * tp) / rt) - np.exp(-2.0 * beta * x0) * ndtr((-x0 + beta * tp) / rt)
        out[pos] = np.clip(s, 0.0, 1.0)
    return float(out[0]) if scalar else out


def cds_quote_analytic(state: SingleNameState, sched: Schedule, lgd: float) -> float:
    """Fair CDS spread (decimal) for a unit-notional name.

    Protection leg pays ``lgd`` on default, settled at the first premium date
    after default; premium accrues ``alpha`` per period on survival:

        c = lgd * sum_j D_j (S_{j-1} - S_j) / (alpha * sum_j D_j S_j)

    Raises :class:`DegenerateQuoteError` when the premium leg annuity is
    numerically zero (name defaults almost surely before the first date).
    """
    if not 0.0 < lgd <= 1.0:
        raise InvalidParameterError(f"lgd must lie in (0, 1], got {lgd}")
    surv = survival_prob(state, sched.dates)
    surv_prev = np.concatenate(([1.0], surv[:-1]))
    protection = lgd * np.sum(sched.discounts * (surv_prev - surv))
    annuity = sched.alpha * np.sum(sched.discounts * surv)
    if annuity < 1e-14:
        raise DegenerateQuoteError(
            f"premium annuity {annuity:.3e} is numerically zero for x0={state.x0}"
        )
    return float(protection / annuity)


def invert_x0(
    target_quote: float,
    beta: float,
    sched: Schedule,
    lgd: float,
    bracket: tuple[float, float] = X0_BRACKET,
) -> float:
    """Invert the CDS quote map ``x0 -> cds_quote_analytic`` on a bracket.

    The map is strictly decreasing in ``x0`` (farther from the barrier means
    cheaper protection), so a bracketed root-finder is enough.  The result is
    polished until the relative quote residual is below 1e-10.

    Raises
    ------
    NoSolutionError
        If ``target_quote`` lies outside the attainable quote interval; the
        error carries that interval.
    """
    if not math.isfinite(target_quote) or target_quote <= 0.0:
        raise InvalidParameterError(f"target quote must be positive, got {target_quote}")
    lo, hi = bracket
    if not 0.0 < lo < hi:
        raise InvalidParameterError(f"bad bracket {bracket}")

    def f(x0: float) -> float:
        return cds_quote_analytic(SingleNameState(x0, beta), sched, lgd) - target_quote

    q_hi = f(lo) + target_quote  # quote at the risky end (x0 = lo): the largest
    q_lo = f(hi) + target_quote  # quote at the safe end (x0 = hi): the smallest
    if not (q_lo <= target_quote <= q_hi):
        raise NoSolutionError(
            f"quote {target_quote:.6g} outside attainable range "
            f"[{q_lo:.6g}, {q_hi:.6g}] for x0 in [{lo:g}, {hi:g}]",
            lo=q_lo,
            hi=q_hi,
        )
    x0 = brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=_INVERT_MAX_ITER)
    resid = abs(f(x0)) / target_quote
    if resid > _INVERT_REL_TOL:
        raise NoSolutionError(
            f"inversion stalled at relative residual {resid:.3e} for quote {target_quote:.6g}"
        )
    return float(x0)


def invert_x0_vector(quotes, beta: float, sched: Schedule, lgd: float) -> np.ndarray:
    """Invert a vector of quotes; descending quotes give ascending x0."""
    q = np.asarray(quotes, dtype=np.float64)
    return np.array([invert_x0(float(qi), beta, sched, lgd) for qi in q])
