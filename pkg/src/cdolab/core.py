"""Core model types: parameters, tranches, schedules, market quotes.

The credit model underneath is a one-factor structural model: each name
carries a distance-to-default process

    dX_t = beta dt + sqrt(1 - rho) dW_t + sqrt(rho) dM_t,

where W is idiosyncratic, M is the common factor and the drift is tied to
the asset dynamics by ``beta = (r - sigma^2/2) / sigma``.  Everything in
this module is plain bookkeeping around that: validated parameter bundles,
the quarterly premium schedule with its discount factors, and quote
containers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, ScheduleError

#: Volatility box used by calibration bounds and dataset generation.
#: Widening it is a config decision, not a hard model constraint.
SIGMA_RANGE = (0.01, 0.5)

#: Correlation box for calibration (open at 1).
RHO_RANGE = (0.0, 1.0 - 1e-6)

#: Default bracket for distance-to-default inversion.
X0_BRACKET = (1e-6, 6.0)

#: Tolerance below which small negative density values (from non-monotone
#: schemes) are tolerated; clipping to zero happens at pricing time only.
EPS_NEG = 1e-8


def derive_beta(r: float, sigma: float) -> float:
    """Risk-neutral drift of the distance-to-default, ``(r - sigma^2/2)/sigma``.

    Raises
    ------
    InvalidParameterError
        If ``sigma <= 0`` or inputs are not finite.
    """
    if not (math.isfinite(r) and math.isfinite(sigma)):
        raise InvalidParameterError(f"non-finite inputs r={r}, sigma={sigma}")
    if sigma <= 0.0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    return (r - 0.5 * sigma * sigma) / sigma


@dataclass(frozen=True)
class ModelParams:
    """Market-wide model parameters.

    ``rho`` is the common-factor loading (in [0, 1)), ``sigma`` the asset
    volatility, ``r`` the flat short rate, ``lgd`` the loss given default,
    ``alpha`` the premium period in years and ``maturity`` the deal maturity.
    ``maturity`` must be a whole number of periods of ``alpha``.
    """

    r: float
    sigma: float
    rho: float
    lgd: float = 0.6
    alpha: float = 0.25
    maturity: float = 5.0

    def __post_init__(self):
        if not all(
            math.isfinite(v)
            for v in (self.r, self.sigma, self.rho, self.lgd, self.alpha, self.maturity)
        ):
            raise InvalidParameterError("model parameters must be finite")
        if self.sigma <= 0.0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.rho < 1.0:
            raise InvalidParameterError(f"rho must lie in [0, 1), got {self.rho}")
        if not 0.0 < self.lgd <= 1.0:
            raise InvalidParameterError(f"lgd must lie in (0, 1], got {self.lgd}")
        if self.alpha <= 0.0 or self.maturity <= 0.0:
            raise InvalidParameterError("alpha and maturity must be positive")
        n = self.maturity / self.alpha
        if abs(n - round(n)) > 1e-9:
            raise ScheduleError(
                f"maturity {self.maturity} is not a whole number of {self.alpha}y periods"
            )

    @property
    def beta(self) -> float:
        return derive_beta(self.r, self.sigma)

    @property
    def n_periods(self) -> int:
        return int(round(self.maturity / self.alpha))


@dataclass(frozen=True)
class TrancheSpec:
    """Attachment/detachment pair as fractions of portfolio notional."""

    attach: float
    detach: float
    label: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.attach) and math.isfinite(self.detach)):
            raise InvalidParameterError("tranche bounds must be finite")
        if not 0.0 <= self.attach < self.detach <= 1.0:
            raise InvalidParameterError(
                f"need 0 <= attach < detach <= 1, got [{self.attach}, {self.detach}]"
            )

    @property
    def width(self) -> float:
        return self.detach - self.attach

    def __str__(self):
        return self.label or f"[{self.attach:g}, {self.detach:g}]"


def standard_tranches() -> list[TrancheSpec]:
    """The six standard tranches 0-3-6-9-12-22-100."""
    cuts = [0.0, 0.03, 0.06, 0.09, 0.12, 0.22, 1.0]
    return [TrancheSpec(a, d) for a, d in zip(cuts[:-1], cuts[1:])]


@dataclass(frozen=True)
class Schedule:
    """Premium payment schedule T_1 < ... < T_n with discount factors.

    ``dates[j]`` is T_{j+1}; T_0 = 0 is implicit.  Discounts are
    ``exp(-r * T_j)`` for the flat rate the schedule was built with.
    """

    alpha: float
    maturity: float
    r: float
    dates: np.ndarray = field(repr=False)
    discounts: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.dates)

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return (
            self.alpha == other.alpha
            and self.maturity == other.maturity
            and self.r == other.r
            and np.array_equal(self.dates, other.dates)
        )

    def __hash__(self):
        return hash((self.alpha, self.maturity, self.r, self.n))


def build_schedule(alpha: float, maturity: float, r: float) -> Schedule:
    """Build the quarterly (or ``alpha``-periodic) premium schedule.

    Raises :class:`ScheduleError` unless ``maturity/alpha`` is integral to
    1e-9, and :class:`InvalidParameterError` on non-positive tenors.
    """
    if not all(math.isfinite(v) for v in (alpha, maturity, r)):
        raise InvalidParameterError("schedule inputs must be finite")
    if alpha <= 0.0 or maturity <= 0.0:
        raise InvalidParameterError(
            f"alpha and maturity must be positive, got alpha={alpha}, maturity={maturity}"
        )
    n_real = maturity / alpha
    n = int(round(n_real))
    if n < 1 or abs(n_real - n) > 1e-9:
        raise ScheduleError(
            f"maturity {maturity} is not a whole number of {alpha}y periods (n={n_real})"
        )
    dates = alpha * np.arange(1, n + 1, dtype=np.float64)
    # pin the last date exactly to avoid drift from repeated float addition
    dates[-1] = maturity
    discounts = np.exp(-r * dates)
    return Schedule(alpha=alpha, maturity=maturity, r=r, dates=dates, discounts=discounts)


@dataclass(frozen=True)
class MarketQuotes:
    """A calibration input set: single-name CDS quotes plus tranche/index quotes.

    ``cds_quotes`` are decimal spreads, stored sorted in descending order
    (riskiest name first).  Tranche and index quotes are in basis points, as
    they come from the market.
    """

    cds_quotes: np.ndarray
    tranche_quotes: tuple  # tuple[(TrancheSpec, float bps), ...]
    index_quote_bps: float
    quote_date: str = ""

    def __post_init__(self):
        q = np.asarray(self.cds_quotes, dtype=np.float64)
        if q.ndim != 1 or q.size < 1:
            raise InvalidParameterError("need at least one CDS quote")
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise InvalidParameterError("CDS quotes must be finite and non-negative")
        q = np.sort(q)[::-1].copy()
        object.__setattr__(self, "cds_quotes", q)
        object.__setattr__(self, "tranche_quotes", tuple(self.tranche_quotes))
        for spec, bps in self.tranche_quotes:
            if not isinstance(spec, TrancheSpec):
                raise InvalidParameterError("tranche_quotes entries must be (TrancheSpec, bps)")
            if not math.isfinite(bps) or bps < 0:
                raise InvalidParameterError(f"bad tranche quote {bps} for {spec}")
        if not math.isfinite(self.index_quote_bps) or self.index_quote_bps < 0:
            raise InvalidParameterError("index quote must be finite and non-negative")

    @property
    def n_names(self) -> int:
        return len(self.cds_quotes)
