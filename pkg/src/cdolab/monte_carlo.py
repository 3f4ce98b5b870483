"""Monte Carlo reference engine and CDS dataset generation.

Two distinct default-monitoring conventions live here, on purpose:

* the *basket* simulation monitors defaults exactly on the resettlement
  dates (that is the model definition the density schemes discretise), and
* the *single-name CDS* quotes target continuous monitoring.  They are
  estimated on a fine simulation grid; in ``"bridge"`` mode every step
  multiplies in the Brownian-bridge non-crossing probability
  ``1 - exp(-2 x_k x_{k+1} / dt)``, which makes the estimator unbiased for
  the continuous barrier at any step count.  ``"discrete"`` mode keeps the
  plain grid-minimum indicator.

All randomness is drawn from counter-based Philox streams keyed by
(seed, purpose), in single array fills, so results are bitwise reproducible
under any thread count.  The dataset kernel parallelises over rows; each
row's accumulation is sequential within one worker.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .core import ModelParams, Schedule, derive_beta
from .errors import FormatError, InvalidParameterError
from .pricing import LossSurface, PricingResult, price_from_surface
from .spde_solvers import (
    STREAM_COMMON,
    STREAM_DATASET_M,
    STREAM_DATASET_W,
    STREAM_IDIOSYNCRATIC,
    STREAM_QUOTE_M,
    STREAM_QUOTE_W,
    STREAM_TUPLES,
    CommonFactorDriver,
    philox_gen,
)

DATASET_FORMAT = "cdolab-cds-dataset"
DATASET_VERSION = 1
DATASET_COLUMNS = ("rho", "beta", "x0", "quote")


@dataclass(frozen=True)
class DefaultTimes:
    """Default times per (name, path); survivors hold +inf."""

    tau: np.ndarray  # (n_names, n_paths)

    @property
    def n_names(self) -> int:
        return self.tau.shape[0]

    @property
    def n_paths(self) -> int:
        return self.tau.shape[1]


def simulate_basket(
    params: ModelParams,
    x0,
    n_paths: int,
    sched: Schedule,
    seed: int = 0,
    driver: CommonFactorDriver | None = None,
) -> DefaultTimes:
    """Simulate the K-name basket with quarterly default monitoring.

    Names share the common factor; once a name's distance-to-default is at
    or below zero on a resettlement date it is absorbed.  Passing the
    ``driver`` used by the density schemes makes the common factor
    literally identical across engines.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if np.any(x0 <= 0):
        raise InvalidParameterError("initial distances must be positive")
    k = x0.size
    n_q = sched.n
    if driver is not None:
        if driver.n_paths != n_paths or driver.n_quarters != n_q:
            raise InvalidParameterError("driver shape does not match the requested simulation")
        dmq = driver.dm_quarter
    else:
        gen_c = philox_gen(seed, STREAM_COMMON)
        dmq = math.sqrt(sched.alpha) * gen_c.standard_normal((n_paths, n_q))
    gen_i = philox_gen(seed, STREAM_IDIOSYNCRATIC)

    beta, rho, alpha = params.beta, params.rho, sched.alpha
    sw = math.sqrt((1.0 - rho) * alpha)
    sm = math.sqrt(rho)
    x = np.repeat(x0[:, None], n_paths, axis=1)
    tau = np.full((k, n_paths), np.inf)
    alive = np.ones((k, n_paths), dtype=bool)
    for q in range(n_q):
        xi = gen_i.standard_normal((k, n_paths))
        x += beta * alpha + sw * xi + sm * dmq[None, :, q]
        newly = alive & (x <= 0.0)
        tau[newly] = sched.dates[q]
        alive &= ~newly
    return DefaultTimes(tau=tau)


def surface_from_defaults(defaults: DefaultTimes, sched: Schedule, lgd: float) -> LossSurface:
    """Per-path survivor fractions at T_0=0 and the resettlement dates."""
    dates = np.concatenate(([0.0], sched.dates))
    n_paths = defaults.n_paths
    surv = np.empty((n_paths, len(dates)))
    for j, t in enumerate(dates):
        surv[:, j] = (defaults.tau > t).mean(axis=0)
    return LossSurface.from_masses(surv, dates, lgd)


def price_cdo_direct(
    params: ModelParams,
    x0,
    tranches,
    n_paths: int = 100_000,
    seed: int = 0,
    driver: CommonFactorDriver | None = None,
    premium_on_tranche: str = "previous",
    premium_on_index: str = "current",
) -> PricingResult:
    """Full-basket Monte Carlo tranche/index pricing (the model oracle)."""
    from .core import build_schedule

    sched = build_schedule(params.alpha, params.maturity, params.r)
    t0 = time.perf_counter()
    defaults = simulate_basket(params, x0, n_paths, sched, seed=seed, driver=driver)
    surface = surface_from_defaults(defaults, sched, params.lgd)
    dt = time.perf_counter() - t0
    return price_from_surface(
        surface,
        tranches,
        sched,
        scheme="mc",
        wall_time=dt,
        premium_on_tranche=premium_on_tranche,
        premium_on_index=premium_on_index,
    )


# --------------------------------------------------------------------------
# single-name CDS Monte Carlo
# --------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _cds_weights_kernel(x0, beta, sw, sm, dw, dm, spq, dt, bridge, out):
    # survival weight of each path at each quarter end, for one tuple
    n_paths = dw.shape[0]
    n_q = out.shape[1]
    for m in prange(n_paths):
        x = x0
        w = 1.0
        for q in range(n_q):
            if w > 0.0:
                base = q * spq
                for s in range(spq):
                    xn = x + beta * dt + sw * dw[m, base + s] + sm * dm[m, base + s]
                    if xn <= 0.0:
                        w = 0.0
                        break
                    if bridge:
                        arg = 2.0 * x * xn / dt
                        if arg < 40.0:
                            w *= 1.0 - np.exp(-arg)
                    x = xn
            out[m, q] = w


@njit(cache=True, parallel=True)
def _dataset_sums_kernel(rho, beta, x0, dw, dm, spq, dt, bridge, out_sums):
    # sum of survival weights over paths, per row and quarter
    n_rows = rho.shape[0]
    n_paths = dw.shape[0]
    n_q = out_sums.shape[1]
    for ridx in prange(n_rows):
        swc = np.sqrt(1.0 - rho[ridx])
        smc = np.sqrt(rho[ridx])
        b = beta[ridx]
        z0 = x0[ridx]
        for m in range(n_paths):
            x = z0
            w = 1.0
            for q in range(n_q):
                if w > 0.0:
                    base = q * spq
                    for s in range(spq):
                        xn = x + b * dt + swc * dw[m, base + s] + smc * dm[m, base + s]
                        if xn <= 0.0:
                            w = 0.0
                            break
                        if bridge:
                            arg = 2.0 * x * xn / dt
                            if arg < 40.0:
                                w *= 1.0 - np.exp(-arg)
                        x = xn
                out_sums[ridx, q] += w


def _gaussian_increments_f32(gen: np.random.Generator, n_paths: int, n_steps: int, dt: float):
    """sqrt(dt)-scaled increments, generated in column chunks to cap memory."""
    out = np.empty((n_paths, n_steps), dtype=np.float32)
    s = math.sqrt(dt)
    chunk = max(1, min(n_steps, int(64e6 // max(n_paths, 1)) or 1))
    col = 0
    while col < n_steps:
        c = min(chunk, n_steps - col)
        out[:, col : col + c] = (s * gen.standard_normal((n_paths, c))).astype(np.float32)
        col += c
    return out


def make_cds_drivers(
    n_paths: int, n_quarters: int, steps_per_quarter: int, alpha: float, seed: int,
    streams=(STREAM_QUOTE_W, STREAM_QUOTE_M),
):
    """The shared (idiosyncratic, common) driver increments for CDS MC."""
    n_steps = n_quarters * steps_per_quarter
    dt = alpha / steps_per_quarter
    dw = _gaussian_increments_f32(philox_gen(seed, streams[0]), n_paths, n_steps, dt)
    dm = _gaussian_increments_f32(philox_gen(seed, streams[1]), n_paths, n_steps, dt)
    return dw, dm, dt


def _quotes_from_survival(surv: np.ndarray, sched: Schedule, lgd: float) -> np.ndarray:
    """Vectorised quote assembly from survival curves (rows, n_dates)."""
    s = np.atleast_2d(surv)
    sprev = np.concatenate([np.ones((s.shape[0], 1)), s[:, :-1]], axis=1)
    d = sched.discounts[None, :]
    protection = lgd * np.sum(d * (sprev - s), axis=1)
    annuity = sched.alpha * np.sum(d * s, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = protection / annuity
    q[annuity < 1e-12] = np.inf
    return q


def mc_cds_quote(
    rho: float,
    beta: float,
    x0: float,
    sched: Schedule,
    lgd: float,
    n_paths: int = 100_000,
    steps_per_quarter: int = 50,
    monitoring: str = "bridge",
    seed: int = 0,
    n_batches: int = 20,
    drivers=None,
):
    """MC estimate of the continuously-monitored CDS quote, with its SE.

    Returns ``(quote, stderr)`` where the standard error comes from batch
    means over path blocks.  ``drivers`` can carry precomputed increments
    (from :func:`make_cds_drivers`) so a batch of tuples shares one driver
    set.
    """
    if monitoring not in ("bridge", "discrete"):
        raise InvalidParameterError(f"monitoring must be 'bridge' or 'discrete', got {monitoring!r}")
    if drivers is None:
        dw, dm, dt = make_cds_drivers(n_paths, sched.n, steps_per_quarter, sched.alpha, seed)
    else:
        dw, dm, dt = drivers
        n_paths = dw.shape[0]
    weights = np.empty((n_paths, sched.n))
    _cds_weights_kernel(
        float(x0), float(beta), math.sqrt(1.0 - rho), math.sqrt(rho),
        dw, dm, steps_per_quarter, dt, monitoring == "bridge", weights,
    )
    quote = float(_quotes_from_survival(weights.mean(axis=0)[None, :], sched, lgd)[0])
    # batch-means standard error
    usable = (n_paths // n_batches) * n_batches
    batches = weights[:usable].reshape(n_batches, -1, sched.n).mean(axis=1)
    bq = _quotes_from_survival(batches, sched, lgd)
    bq = bq[np.isfinite(bq)]
    if len(bq) >= 2:
        se = float(np.std(bq, ddof=1) / math.sqrt(len(bq)))
    else:
        se = float("nan")
    return quote, se


def beta_range_from_sigma_box(r: float, sigma_box=(0.01, 0.5)) -> tuple[float, float]:
    """Drift range swept by the volatility box at a fixed rate."""
    b1, b2 = derive_beta(r, sigma_box[0]), derive_beta(r, sigma_box[1])
    return (min(b1, b2), max(b1, b2))


def generate_cds_dataset(
    n_rows: int,
    out_path: str,
    sched: Schedule,
    lgd: float,
    *,
    ranges: dict | None = None,
    r: float | None = None,
    n_paths: int = 100_000,
    steps_per_quarter: int = 50,
    monitoring: str = "bridge",
    seed: int = 0,
) -> dict:
    """Write a (rho, beta, x0, quote) training dataset.

    Binary rows are little-endian float64; a JSON sidecar (same path plus
    ``.json``) records columns, ranges, seed and simulation settings.  All
    rows share one set of Brownian drivers.  Tuples whose MC annuity
    degenerates (every path defaults before the first premium date) are
    resampled; the sidecar counts them.
    """
    if n_rows < 1:
        raise InvalidParameterError("need at least one row")
    if monitoring not in ("bridge", "discrete"):
        raise InvalidParameterError(f"monitoring must be 'bridge' or 'discrete', got {monitoring!r}")
    ranges = dict(ranges or {})
    if "beta" not in ranges:
        if r is None:
            raise InvalidParameterError("pass either a beta range or the rate r")
        ranges["beta"] = beta_range_from_sigma_box(r)
    ranges.setdefault("rho", (0.0, 1.0 - 1e-6))
    ranges.setdefault("x0", (0.0, 6.0))
    for namekey in ("rho", "beta", "x0"):
        lo, hi = ranges[namekey]
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise InvalidParameterError(f"bad range for {namekey}: ({lo}, {hi})")

    dw, dm, dt = make_cds_drivers(
        n_paths, sched.n, steps_per_quarter, sched.alpha, seed,
        streams=(STREAM_DATASET_W, STREAM_DATASET_M),
    )
    gen_t = philox_gen(seed, STREAM_TUPLES)

    def draw(n):
        u = gen_t.random((n, 3))
        cols = []
        for i, namekey in enumerate(("rho", "beta", "x0")):
            lo, hi = ranges[namekey]
            cols.append(lo + (hi - lo) * u[:, i])
        return cols

    rho_v, beta_v, x0_v = draw(n_rows)
    bridge = monitoring == "bridge"
    sums = np.zeros((n_rows, sched.n))
    _dataset_sums_kernel(rho_v, beta_v, x0_v, dw, dm, steps_per_quarter, dt, bridge, sums)
    quotes = _quotes_from_survival(sums / n_paths, sched, lgd)

    resampled = 0
    while not np.all(np.isfinite(quotes)):
        bad = ~np.isfinite(quotes)
        nb = int(bad.sum())
        resampled += nb
        if resampled > 100 * n_rows:
            raise InvalidParameterError(
                "dataset ranges degenerate: nearly every tuple defaults immediately"
            )
        nr, nb_, nx = draw(nb)
        rho_v[bad], beta_v[bad], x0_v[bad] = nr, nb_, nx
        sums_b = np.zeros((nb, sched.n))
        _dataset_sums_kernel(nr, nb_, nx, dw, dm, steps_per_quarter, dt, bridge, sums_b)
        quotes[bad] = _quotes_from_survival(sums_b / n_paths, sched, lgd)

    data = np.column_stack([rho_v, beta_v, x0_v, quotes]).astype("<f8")
    with open(out_path, "wb") as fh:
        fh.write(data.tobytes())
    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "columns": list(DATASET_COLUMNS),
        "n_rows": int(n_rows),
        "ranges": {k: [float(v[0]), float(v[1])] for k, v in ranges.items()},
        "seed": int(seed),
        "n_paths": int(n_paths),
        "steps_per_quarter": int(steps_per_quarter),
        "monitoring": monitoring,
        "lgd": float(lgd),
        "alpha": float(sched.alpha),
        "maturity": float(sched.maturity),
        "r": None if r is None else float(r),
        "resampled_rows": int(resampled),
    }
    with open(_sidecar_path(out_path), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return meta


def _sidecar_path(out_path: str) -> str:
    base, _ = os.path.splitext(out_path)
    return base + ".json"


def load_cds_dataset(path: str):
    """Load a dataset written by :func:`generate_cds_dataset`.

    Returns ``(data, meta)`` with ``data`` of shape (n_rows, 4).  Raises
    :class:`FormatError` on any structural mismatch.
    """
    side = _sidecar_path(path)
    if not os.path.exists(side):
        raise FormatError(f"missing dataset sidecar {side}")
    try:
        with open(side) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"unparseable dataset sidecar {side}: {e}") from e
    if meta.get("format") != DATASET_FORMAT:
        raise FormatError(f"not a CDS dataset sidecar: format={meta.get('format')!r}")
    if meta.get("version") != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {meta.get('version')!r}")
    if list(meta.get("columns", [])) != list(DATASET_COLUMNS):
        raise FormatError(f"unexpected columns {meta.get('columns')!r}")
    n_rows = int(meta["n_rows"])
    expect = n_rows * len(DATASET_COLUMNS) * 8
    actual = os.path.getsize(path)
    if actual != expect:
        raise FormatError(f"dataset payload is {actual} bytes, sidecar implies {expect}")
    data = np.fromfile(path, dtype="<f8").reshape(n_rows, len(DATASET_COLUMNS))
    if not np.all(np.isfinite(data)):
        raise FormatError("dataset contains non-finite values")
    return data, meta
