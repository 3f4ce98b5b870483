"""End-to-end tests of the command line interface."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from cdolab import (
    SingleNameState,
    build_schedule,
    cds_quote_analytic,
    derive_beta,
    load_cds_dataset,
)
from cdolab.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


def test_invert_x0_roundtrip(runner):
    res = invoke(runner, ["invert-x0", "--r", "0.015", "--sigma", "0.0543",
                          "--quote-bps", "120", "--quote-bps", "40"])
    assert res.exit_code == 0
    lines = res.output.strip().splitlines()
    assert len(lines) == 2
    beta = derive_beta(0.015, 0.0543)
    sched = build_schedule(0.25, 5.0, 0.015)
    for line, want_bps in zip(lines, (120.0, 40.0)):
        q_bps, x0 = map(float, line.split(","))
        assert q_bps == pytest.approx(want_bps)
        re_quoted = cds_quote_analytic(SingleNameState(x0, beta), sched, 0.6)
        assert re_quoted * 1e4 == pytest.approx(want_bps, abs=1e-6)


def test_invert_x0_needs_input(runner):
    res = runner.invoke(main, ["invert-x0", "--r", "0.015", "--sigma", "0.05"])
    assert res.exit_code == 2


def test_invert_x0_unattainable_quote_is_numeric_error(runner):
    res = runner.invoke(main, ["invert-x0", "--r", "0.015", "--sigma", "0.0543",
                               "--quote-bps", "0.001"])
    assert res.exit_code == 1


PRICE_CFG = {
    "r": 0.015,
    "sigma": 0.0543,
    "rho": 0.158,
    "x0": [0.9, 1.7, 2.8],
    "scheme": "dm",
    "n_paths": 300,
    "seed": 3,
    "l_points": 6,
    "grid": {"a": -10.0, "b": 20.0, "d": 101},
    "tranches": [[0.0, 0.03], [0.03, 0.12], [0.12, 1.0]],
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_price_outputs_stable_json(runner, tmp_path):
    cfg = write_cfg(tmp_path, PRICE_CFG)
    res1 = invoke(runner, ["price", "--config", cfg])
    res2 = invoke(runner, ["price", "--config", cfg])
    assert res1.exit_code == 0
    assert res1.output == res2.output  # byte-stable for identical input
    doc = json.loads(res1.output)
    assert doc["scheme"] == "dm"
    assert float(doc["index_bps"]) > 0
    assert len(doc["tranches"]) == 3
    spreads = [float(t["spread_bps"]) for t in doc["tranches"]]
    assert spreads[0] > spreads[1] > spreads[2]  # seniority ordering


def test_price_out_file_matches_stdout(runner, tmp_path):
    cfg = write_cfg(tmp_path, PRICE_CFG)
    out = tmp_path / "res.json"
    res = invoke(runner, ["price", "--config", cfg, "--out", str(out)])
    assert res.exit_code == 0 and res.output == ""
    piped = invoke(runner, ["price", "--config", cfg])
    assert out.read_text() == piped.output


def test_price_mc_scheme(runner, tmp_path):
    cfg = dict(PRICE_CFG, scheme="mc", n_paths=400)
    path = write_cfg(tmp_path, cfg)
    res = invoke(runner, ["price", "--config", path])
    assert res.exit_code == 0
    assert json.loads(res.output)["scheme"] == "mc"


def test_price_rejects_unknown_key(runner, tmp_path):
    cfg = write_cfg(tmp_path, dict(PRICE_CFG, sgima=0.1))
    res = runner.invoke(main, ["price", "--config", cfg])
    assert res.exit_code == 2


def test_price_rejects_invalid_json(runner, tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"r": 0.01,')
    res = runner.invoke(main, ["price", "--config", str(p)])
    assert res.exit_code == 3


def test_price_missing_config_is_usage_error(runner, tmp_path):
    res = runner.invoke(main, ["price", "--config", str(tmp_path / "nope.json")])
    assert res.exit_code == 2


def test_price_portfolio_csv(runner, tmp_path):
    beta = derive_beta(0.015, 0.0543)
    sched = build_schedule(0.25, 5.0, 0.015)
    q = [cds_quote_analytic(SingleNameState(x, beta), sched, 0.6) * 1e4
         for x in (0.9, 1.7, 2.8)]
    csv = tmp_path / "names.csv"
    csv.write_text("name,spread_bps\n" +
                   "\n".join(f"name{i},{v:.8f}" for i, v in enumerate(q)) + "\n")
    cfg = {k: v for k, v in PRICE_CFG.items() if k != "x0"}
    cfg["portfolio"] = str(csv)
    path = write_cfg(tmp_path, cfg)
    res = invoke(runner, ["price", "--config", path])
    direct = invoke(runner, ["price", "--config", write_cfg(tmp_path, PRICE_CFG, "d.json")])
    assert res.exit_code == 0
    got = json.loads(res.output)
    want = json.loads(direct.output)
    assert float(got["index_bps"]) == pytest.approx(float(want["index_bps"]), rel=1e-6)


def test_price_bad_portfolio_header(runner, tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("ticker,coupon\nabc,100\n")
    cfg = {k: v for k, v in PRICE_CFG.items() if k != "x0"}
    cfg["portfolio"] = str(csv)
    res = runner.invoke(main, ["price", "--config", write_cfg(tmp_path, cfg)])
    assert res.exit_code == 3


def test_gen_dataset_cli(runner, tmp_path):
    out = tmp_path / "ds.bin"
    res = invoke(runner, [
        "gen-dataset", "--rows", "6", "--out", str(out), "--r", "0.026",
        "--n-paths", "500", "--steps-per-quarter", "1", "--seed", "2",
        "--x0-range", "1.0", "5.0",
    ])
    assert res.exit_code == 0
    meta = json.loads(res.output)
    assert meta["n_rows"] == 6
    data, meta2 = load_cds_dataset(str(out))
    assert data.shape == (6, 4)
    assert meta2["seed"] == 2


def test_threads_option_accepted(runner, tmp_path):
    res = invoke(runner, ["--threads", "1", "invert-x0", "--r", "0.015",
                          "--sigma", "0.0543", "--quote-bps", "80"])
    assert res.exit_code == 0


def test_calibrate_cli_smoke(runner, tmp_path):
    beta = derive_beta(0.026, 0.05)
    sched = build_schedule(0.25, 5.0, 0.026)
    x0 = (0.8, 1.4, 2.2, 3.1)
    q = [cds_quote_analytic(SingleNameState(x, beta), sched, 0.6) * 1e4 for x in x0]
    pf = tmp_path / "pf.csv"
    pf.write_text("name,spread_bps\n" +
                  "\n".join(f"n{i},{v:.10f}" for i, v in enumerate(q)) + "\n")

    # market tranche quotes generated by the same engine at the true params
    cfg = {
        "r": 0.026, "sigma": 0.05, "rho": 0.30, "x0": list(x0),
        "scheme": "dm", "n_paths": 600, "seed": 0,
    }
    priced = json.loads(invoke(runner, ["price", "--config", write_cfg(tmp_path, cfg)]).output)
    tq = tmp_path / "tq.csv"
    tq.write_text("attach,detach,spread_bps\n" + "\n".join(
        f"{t['attach']},{t['detach']},{t['spread_bps']}" for t in priced["tranches"]) + "\n")

    res = invoke(runner, [
        "calibrate", "--portfolio", str(pf), "--tranche-quotes", str(tq),
        "--index-bps", priced["index_bps"], "--r", "0.026",
        "--n-paths", "600", "--seed", "0",
    ])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    assert doc["success"] is True
    assert float(doc["sigma"]) == pytest.approx(0.05, rel=0.05)
    assert float(doc["rho"]) == pytest.approx(0.30, rel=0.15)
