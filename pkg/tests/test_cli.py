"""CLI tests: subcommand dispatch, exit codes, artifact determinism."""

import json

import numpy as np
import pytest

import htheory as ht
from htheory.cli import main, parse_grid
from htheory.errors import ParameterError


def run(*argv):
    return main([str(a) for a in argv])


def test_version_and_help(capsys):
    assert run("--version") == 0
    assert "htheory 0.1.0" in capsys.readouterr().out
    assert run("--help") == 0
    out = capsys.readouterr().out
    for name in ("simulate", "eval", "fit", "report"):
        assert name in out


def test_usage_errors(capsys):
    assert run("--frobnicate") == 1
    assert "usage" in capsys.readouterr().err
    assert run("eval", "--class", "laplace", "--output", "x.csv") == 1
    assert run("simulate") == 1  # --output required
    assert run() == 1


def test_parse_grid():
    np.testing.assert_allclose(parse_grid("0:1:5"), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert parse_grid("0:0:1").tolist() == [0.0]
    for bad in ("0:1", "a:b:c", "0:1:0", "1:0:5", "::"):
        with pytest.raises(ParameterError):
            parse_grid(bad)


def test_eval_density_at_origin(tmp_path, capsys):
    out = tmp_path / "dens.csv"
    code = run("eval", "--class", "wishart", "--levels", "1", "--beta", "1",
               "--eps0", "1", "--grid", "0:0:1", "--output", out)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x,density"
    x, val = lines[1].split(",")
    assert float(x) == 0.0
    expect = ht.density_at_zero(ht.HModel("wishart", (1.0,), 1.0))
    assert float(val) == pytest.approx(expect, rel=1e-12)
    assert float(val) == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-9)


def test_eval_background_curve(tmp_path):
    out = tmp_path / "bg.csv"
    assert run("eval", "--class", "inverse-wishart", "--levels", "2", "--beta", "3",
               "--background", "--grid", "0.1:4:40", "--output", out) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "eps,density"
    assert len(rows) == 41
    model = ht.HModel("inverse-wishart", (3.0, 3.0), 1.0)
    eps, val = rows[7].split(",")
    assert float(val) == pytest.approx(ht.background_density(model, float(eps)), rel=1e-9)
    assert run("eval", "--background", "--grid", "-1:1:5", "--output", out) == 1


def test_eval_validation(tmp_path):
    out = tmp_path / "x.csv"
    assert run("eval", "--levels", "0", "--output", out) == 1
    assert run("eval", "--beta", "-1", "--output", out) == 1
    assert run("eval", "--grid", "nope", "--output", out) == 1
    assert not out.exists()  # validation precedes any write


def test_simulate_sde(tmp_path):
    out = tmp_path / "traj.csv"
    args = ("simulate", "--kind", "sde", "--levels", "2", "--beta", "4",
            "--steps", "500", "--seed", "7", "--output", out)
    assert run(*args) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,eps1,eps2"
    assert len(lines) == 501
    first = out.read_bytes()
    assert run(*args) == 0
    assert out.read_bytes() == first  # same seed, same bytes
    assert run(*args[:-3], "8", "--output", out) == 0
    assert out.read_bytes() != first


def test_simulate_sde_divergence_exit_code(tmp_path, capsys):
    out = tmp_path / "boom.csv"
    code = run("simulate", "--kind", "sde", "--levels", "1", "--beta", "0.002",
               "--gamma1", "0.1", "--s-exponent", "1.0", "--dt", "0.05",
               "--steps", "1000", "--output", out)
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err
    assert not out.exists()


def test_simulate_panel_feeds_fit(tmp_path):
    prices = tmp_path / "prices.csv"
    assert run("simulate", "--class", "wishart", "--levels", "1", "--beta", "4",
               "--assets", "6", "--steps", "600", "--seed", "42",
               "--output", prices) == 0
    table = ht.load_prices(prices)
    assert len(table.tickers) == 6
    assert len(table.dates) == 601

    report_path = tmp_path / "report.json"
    assert run("fit", "--input", prices, "--output", report_path,
               "--max-levels", "1", "--window", "20", "--threads", "2") == 0
    payload = json.loads(report_path.read_text())
    assert payload["schema_version"] == 1
    assert payload["selected"]["n_levels"] == 1
    assert payload["series_length"] == 6 * 600
    assert {f["model_class"] for f in payload["fits"]} == {"wishart", "inverse-wishart"}

    bg_csv = tmp_path / "report_background.csv"
    ret_csv = tmp_path / "report_returns.csv"
    assert bg_csv.read_text().splitlines()[0] == "eps,empirical,model"
    ret_lines = ret_csv.read_text().splitlines()
    assert ret_lines[0] == "x,empirical,model"
    assert len(ret_lines) == 402


def test_fit_deterministic_bytes(tmp_path):
    prices = tmp_path / "prices.csv"
    run("simulate", "--levels", "1", "--beta", "5", "--assets", "4",
        "--steps", "400", "--seed", "3", "--output", prices)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    common = ("fit", "--input", prices, "--max-levels", "1", "--window", "15")
    assert run(*common, "--output", a, "--threads", "1") == 0
    assert run(*common, "--output", b, "--threads", "4") == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a_background.csv").read_bytes() == (tmp_path / "b_background.csv").read_bytes()
    assert (tmp_path / "a_returns.csv").read_bytes() == (tmp_path / "b_returns.csv").read_bytes()


def test_report_renders_fit_output(tmp_path, capsys):
    report = ht.FitReport(
        fits=(ht.FitEntry("wishart", 1, 3.1, 0.9), ht.FitEntry("wishart", 2, 6.0, 0.2)),
        selected_class="wishart",
        selected_n=2,
        eps0=1.0,
        series_length=4242,
    )
    path = tmp_path / "r.json"
    path.write_text(report.to_json())
    assert run("report", "--input", path) == 0
    out = capsys.readouterr().out
    assert "4242" in out and "wishart" in out and "*" in out


def test_report_data_errors(tmp_path, capsys):
    assert run("report", "--input", tmp_path / "missing.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{]")
    assert run("report", "--input", bad) == 2
    assert "data error" in capsys.readouterr().err


def test_fit_missing_input_and_usage(tmp_path):
    out = tmp_path / "r.json"
    assert run("fit", "--input", tmp_path / "nope.csv", "--output", out) == 2
    assert not out.exists()
    assert run("fit", "--input", tmp_path / "nope.csv", "--output", out,
               "--l-min", "1") == 1
    assert run("simulate", "--assets", "1", "--output", tmp_path / "x.csv") == 1


def test_fit_insufficient_data_exit_code(tmp_path):
    prices = tmp_path / "tiny.csv"
    rows = ["date,ticker,close"]
    for t in range(5):
        rows += [f"2020-01-0{t + 1},AAA,{100 + t}", f"2020-01-0{t + 1},BBB,{90 + t}"]
    prices.write_text("\n".join(rows) + "\n")
    assert run("fit", "--input", prices, "--output", tmp_path / "r.json") == 2
