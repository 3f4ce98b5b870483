"""Command-line front end.

Exit codes: 0 success, 1 numerical failure (no solution, degenerate or
non-converging arithmetic), 2 bad usage or configuration, 3 file or format
problems.  All numeric output is printed with ``%.10g`` so repeated runs
with the same inputs are byte-identical.
"""

from __future__ import annotations

import csv
import functools
import json
import sys

import click
import numpy as np

from .calibration import CalibrationConfig, calibrate
from .core import (
    MarketQuotes,
    ModelParams,
    TrancheSpec,
    build_schedule,
    derive_beta,
    standard_tranches,
)
from .discretization import SpaceGrid, default_grid
from .errors import (
    ConfigError,
    DegenerateQuoteError,
    FormatError,
    InvalidParameterError,
    NoSolutionError,
    NumericError,
)
from .monte_carlo import generate_cds_dataset
from .pricing import SCHEMES, price_large_pool
from .single_name import invert_x0_vector

_F = "%.10g"


def _fmt(x) -> str:
    return _F % float(x)


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guarded(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (InvalidParameterError, ConfigError) as e:
            _fail(2, str(e))
        except (NumericError, NoSolutionError, DegenerateQuoteError) as e:
            _fail(1, str(e))
        except FormatError as e:
            _fail(3, str(e))
        except OSError as e:
            _fail(3, str(e))

    return wrapper


def _set_threads(n: int | None):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    import numba

    numba.set_num_threads(n)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass


def _read_portfolio(path: str) -> np.ndarray:
    """CSV with header name,spread_bps -> decimal quotes (descending)."""
    quotes = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "spread_bps" not in reader.fieldnames:
                raise FormatError(f"{path}: need a header with a spread_bps column")
            for row in reader:
                quotes.append(float(row["spread_bps"]) * 1e-4)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    if not quotes:
        raise FormatError(f"{path}: no portfolio rows")
    return np.asarray(quotes, dtype=np.float64)


def _read_tranche_quotes(path: str):
    """CSV with header attach,detach,spread_bps."""
    out = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"attach", "detach", "spread_bps"}
            if reader.fieldnames is None or not need.issubset(reader.fieldnames):
                raise FormatError(f"{path}: need a header with attach,detach,spread_bps")
            for row in reader:
                spec = TrancheSpec(float(row["attach"]), float(row["detach"]))
                out.append((spec, float(row["spread_bps"])))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    if not out:
        raise FormatError(f"{path}: no tranche rows")
    return tuple(out)


def _parse_tranches(text: str):
    """'0:0.03,0.03:0.06' -> TrancheSpecs (percent values also accepted)."""
    specs = []
    for part in text.split(","):
        try:
            a, d = part.split(":")
            a, d = float(a), float(d)
        except ValueError:
            raise ConfigError(f"bad tranche {part!r}; want attach:detach") from None
        if max(a, d) > 1.0:  # percent convention
            a, d = a / 100.0, d / 100.0
        specs.append(TrancheSpec(a, d))
    return tuple(specs)


_PRICE_SCHEMA = {
    "type": "object",
    "properties": {
        "r": {"type": "number"},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "rho": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "lgd": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "maturity": {"type": "number", "exclusiveMinimum": 0},
        "x0": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "portfolio": {"type": "string"},
        "tranches": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        },
        "scheme": {"enum": list(SCHEMES) + ["mc"]},
        "n_paths": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "l_points": {"type": "integer", "minimum": 2},
        "l_theta": {"type": "integer", "minimum": 1},
        "grid": {
            "type": "object",
            "properties": {
                "a": {"type": "number"},
                "b": {"type": "number"},
                "d": {"type": "integer", "minimum": 3},
            },
            "required": ["a", "b", "d"],
        },
    },
    "required": ["r", "sigma", "rho"],
    "additionalProperties": False,
}


def _load_config(path: str, schema: dict) -> dict:
    import jsonschema

    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"{path}: {e.message}") from e
    return cfg


@click.group()
@click.option("--threads", type=int, default=None, help="Cap worker threads (default: all cores).")
def main(threads):
    """Large-basket credit pricing, calibration and dataset tools."""
    _set_threads(threads)


@main.command("price")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write JSON here instead of stdout.")
@_guarded
def price_cmd(config_path, out):
    """Price index tranches from a JSON config."""
    cfg = _load_config(config_path, _PRICE_SCHEMA)
    params = ModelParams(
        r=cfg["r"], sigma=cfg["sigma"], rho=cfg["rho"],
        lgd=cfg.get("lgd", 0.6), alpha=cfg.get("alpha", 0.25),
        maturity=cfg.get("maturity", 5.0),
    )
    sched = build_schedule(params.alpha, params.maturity, params.r)
    if "x0" in cfg:
        x0 = np.asarray(cfg["x0"], dtype=np.float64)
    elif "portfolio" in cfg:
        quotes = _read_portfolio(cfg["portfolio"])
        x0 = invert_x0_vector(quotes, params.beta, sched, params.lgd)
    else:
        raise ConfigError("config needs either x0 or portfolio")
    tranches = (
        tuple(TrancheSpec(a, d) for a, d in cfg["tranches"])
        if "tranches" in cfg
        else standard_tranches()
    )
    scheme = cfg.get("scheme", "dm")
    grid = (
        SpaceGrid(cfg["grid"]["a"], cfg["grid"]["b"], cfg["grid"]["d"])
        if "grid" in cfg
        else default_grid()
    )
    if scheme == "mc":
        from .monte_carlo import price_cdo_direct

        res = price_cdo_direct(
            params, x0, tranches, n_paths=cfg.get("n_paths", 10_000), seed=cfg.get("seed", 0)
        )
    else:
        res = price_large_pool(
            params, x0, tranches, scheme,
            grid=grid, n_paths=cfg.get("n_paths", 10_000),
            l_points=cfg.get("l_points", 15), l_theta=cfg.get("l_theta", 5),
            seed=cfg.get("seed", 0),
        )
    doc = {
        "scheme": res.scheme,
        "n_paths": res.n_paths,
        "index_bps": _fmt(res.index_bps),
        "tranches": [
            {"attach": _fmt(t.attach), "detach": _fmt(t.detach), "spread_bps": _fmt(s)}
            for t, s in zip(res.tranches, res.tranche_bps)
        ],
    }
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


@main.command("calibrate")
@click.option("--portfolio", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV name,spread_bps of single-name quotes.")
@click.option("--tranche-quotes", "tranche_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="CSV attach,detach,spread_bps.")
@click.option("--index-bps", required=True, type=float)
@click.option("--r", "rate", required=True, type=float)
@click.option("--lgd", type=float, default=0.6, show_default=True)
@click.option("--alpha", type=float, default=0.25, show_default=True)
@click.option("--maturity", type=float, default=5.0, show_default=True)
@click.option("--scheme", type=click.Choice(SCHEMES), default="dm", show_default=True)
@click.option("--n-paths", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--x0-mode", type=click.Choice(["analytic", "nn"]), default="analytic", show_default=True)
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Distance-network weight file (x0-mode nn).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_guarded
def calibrate_cmd(portfolio, tranche_path, index_bps, rate, lgd, alpha, maturity,
                  scheme, n_paths, seed, x0_mode, weights, out):
    """Fit (sigma, rho) to market tranche and index quotes."""
    market = MarketQuotes(
        cds_quotes=_read_portfolio(portfolio),
        tranche_quotes=_read_tranche_quotes(tranche_path),
        index_quote_bps=index_bps,
    )
    cfg = CalibrationConfig(
        scheme=scheme, n_paths=n_paths, seed=seed,
        x0_mode=x0_mode, x0_weights=weights,
    )
    res = calibrate(market, r=rate, lgd=lgd, alpha=alpha, maturity=maturity, config=cfg)
    doc = {
        "sigma": _fmt(res.sigma),
        "rho": _fmt(res.rho),
        "success": res.success,
        "used_fallback": res.used_fallback,
        "n_evals": res.n_evals,
        "ape": _fmt(res.ape),
        "index_bps": {"market": _fmt(res.market_index_bps), "model": _fmt(res.model_index_bps)},
        "tranches_bps": [
            {"market": _fmt(m), "model": _fmt(v)}
            for m, v in zip(res.market_tranche_bps, res.model_tranche_bps)
        ],
    }
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


@main.command("gen-dataset")
@click.option("--rows", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--r", "rate", required=True, type=float, help="Rate fixing the drift range.")
@click.option("--lgd", type=float, default=0.6, show_default=True)
@click.option("--alpha", type=float, default=0.25, show_default=True)
@click.option("--maturity", type=float, default=5.0, show_default=True)
@click.option("--n-paths", type=int, default=100_000, show_default=True)
@click.option("--steps-per-quarter", type=int, default=50, show_default=True)
@click.option("--monitoring", type=click.Choice(["bridge", "discrete"]), default="bridge",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--x0-range", nargs=2, type=float, default=(0.0, 6.0), show_default=True)
@click.option("--rho-range", nargs=2, type=float, default=(0.0, 1.0 - 1e-6), show_default=True)
@_guarded
def gen_dataset_cmd(rows, out_path, rate, lgd, alpha, maturity, n_paths,
                    steps_per_quarter, monitoring, seed, x0_range, rho_range):
    """Write a Monte Carlo CDS training dataset (binary + JSON sidecar)."""
    sched = build_schedule(alpha, maturity, rate)
    meta = generate_cds_dataset(
        rows, out_path, sched, lgd,
        ranges={"rho": tuple(rho_range), "x0": tuple(x0_range)},
        r=rate, n_paths=n_paths, steps_per_quarter=steps_per_quarter,
        monitoring=monitoring, seed=seed,
    )
    click.echo(json.dumps(meta, indent=1, sort_keys=True))


@main.command("invert-x0")
@click.option("--portfolio", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--quote-bps", "quote_bps", type=float, multiple=True)
@click.option("--r", "rate", required=True, type=float)
@click.option("--sigma", required=True, type=float)
@click.option("--lgd", type=float, default=0.6, show_default=True)
@click.option("--alpha", type=float, default=0.25, show_default=True)
@click.option("--maturity", type=float, default=5.0, show_default=True)
@_guarded
def invert_x0_cmd(portfolio, quote_bps, rate, sigma, lgd, alpha, maturity):
    """Initial distances implied by CDS quotes."""
    if portfolio is None and not quote_bps:
        raise ConfigError("pass --portfolio or at least one --quote-bps")
    if portfolio is not None:
        quotes = _read_portfolio(portfolio)
    else:
        quotes = np.asarray(quote_bps, dtype=np.float64) * 1e-4
    beta = derive_beta(rate, sigma)
    sched = build_schedule(alpha, maturity, rate)
    x0 = invert_x0_vector(quotes, beta, sched, lgd)
    for q, v in zip(quotes, x0):
        click.echo(f"{_fmt(q * 1e4)},{_fmt(v)}")


if __name__ == "__main__":
    main()
