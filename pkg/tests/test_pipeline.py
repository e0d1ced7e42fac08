"""Pipeline tests: ingestion, whitening, background extraction, KL fitting."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import htheory as ht
from htheory import (
    BackgroundSeries,
    DataError,
    FitFailureError,
    Histogram,
    InsufficientDataError,
    ParameterError,
    ReturnsMatrix,
)
from htheory.pipeline import _log_histogram, _select_model, FitEntry


# ---------------------------------------------------------------------------
# price ingestion


def write_csv(path, rows, header="date,ticker,close"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def grid_rows(tickers, n_dates, price=lambda i, t: 100.0 + i + t):
    rows = []
    for t in range(n_dates):
        date = f"2020-01-{t + 1:02d}"
        for i, tk in enumerate(tickers):
            rows.append(f"{date},{tk},{price(i, t)}")
    return rows


def test_load_prices_happy_path(tmp_path):
    path = write_csv(tmp_path / "p.csv", grid_rows(["AAA", "BBB"], 12))
    table = ht.load_prices(path)
    assert table.tickers == ("AAA", "BBB")
    assert len(table.dates) == 12
    assert table.close.shape == (2, 12)
    assert table.close[1, 3] == 104.0  # 100 + i=1 + t=3


def test_load_prices_drops_incomplete_assets(tmp_path):
    rows = grid_rows(["AAA", "BBB", "CCC"], 12)
    rows = [r for r in rows if not ("CCC" in r and "2020-01-05" in r)]
    path = write_csv(tmp_path / "p.csv", rows)
    with pytest.warns(UserWarning, match="CCC"):
        table = ht.load_prices(path)
    assert table.tickers == ("AAA", "BBB")


def test_load_prices_errors(tmp_path):
    with pytest.raises(DataError, match="header"):
        ht.load_prices(write_csv(tmp_path / "h.csv", [], header="day,sym,px"))

    rows = grid_rows(["AAA", "BBB"], 12)
    rows[5] = "2020-01-03,AAA,not-a-price"
    with pytest.raises(DataError, match=r":7:"):  # header is line 1
        ht.load_prices(write_csv(tmp_path / "bad.csv", rows))

    rows = grid_rows(["AAA", "BBB"], 12)
    rows[2] = "2020-01-02,AAA,-5.0"
    with pytest.raises(DataError, match="positive"):
        ht.load_prices(write_csv(tmp_path / "neg.csv", rows))

    rows = grid_rows(["AAA", "BBB"], 12)
    rows.append(rows[0])
    with pytest.raises(DataError, match="duplicate"):
        ht.load_prices(write_csv(tmp_path / "dup.csv", rows))


def test_load_prices_insufficient(tmp_path):
    with pytest.raises(InsufficientDataError):
        ht.load_prices(write_csv(tmp_path / "short.csv", grid_rows(["AAA", "BBB"], 9)))
    with pytest.raises(InsufficientDataError):
        ht.load_prices(write_csv(tmp_path / "one.csv", grid_rows(["AAA"], 12)))


def test_log_returns_values(tmp_path):
    table = ht.load_prices(write_csv(tmp_path / "p.csv", grid_rows(["AAA", "BBB"], 10)))
    r = ht.log_returns(table)
    assert r.values.shape == (2, 9)
    assert r.values[0, 0] == pytest.approx(math.log(101.0 / 100.0), rel=1e-12)
    r2 = ht.log_returns(table, dt_days=3)
    assert r2.values.shape == (2, 7)
    assert r2.values[1, 2] == pytest.approx(math.log(106.0 / 103.0), rel=1e-12)
    with pytest.raises(ParameterError):
        ht.log_returns(table, dt_days=0)
    with pytest.raises(ParameterError):
        ht.log_returns(table, dt_days=10)


# ---------------------------------------------------------------------------
# normalization / whitening / aggregation


def test_normalize_example():
    r = ht.normalize(ReturnsMatrix(values=np.array([[1.0, 2.0, 3.0]] * 2)))
    expect = np.array([-1.224745, 0.0, 1.224745])
    np.testing.assert_allclose(r.values[0], expect, atol=1e-6)
    assert r.normalized


def test_normalize_idempotent():
    rng = np.random.default_rng(0)
    r = ht.normalize(ReturnsMatrix(values=rng.standard_normal((3, 500)) * 4 + 2))
    again = ht.normalize(r)
    assert np.abs(again.values - r.values).max() < 1e-12


def test_normalize_zero_variance_names_ticker():
    vals = np.array([[1.0, 2.0, 1.5], [3.0, 3.0, 3.0]])
    with pytest.raises(DataError, match="FLAT"):
        ht.normalize(ReturnsMatrix(values=vals, tickers=("OK", "FLAT")))


def test_correlation_properties():
    rng = np.random.default_rng(1)
    mix = np.linalg.cholesky(0.4 * np.ones((5, 5)) + 0.6 * np.eye(5))
    r = ht.normalize(ReturnsMatrix(values=mix @ rng.standard_normal((5, 3000))))
    c = ht.correlation(r)
    np.testing.assert_allclose(np.diag(c), 1.0, atol=1e-10)
    np.testing.assert_allclose(c, c.T, atol=0)
    assert np.linalg.eigvalsh(c).min() >= -1e-10
    with pytest.raises(ParameterError):
        ht.correlation(ReturnsMatrix(values=r.values))  # not normalized


def test_rotate_whiten_decorrelates():
    rng = np.random.default_rng(2)
    mix = np.linalg.cholesky(0.5 * np.ones((6, 6)) + 0.5 * np.eye(6))
    r = ht.normalize(ReturnsMatrix(values=mix @ rng.standard_normal((6, 4000))))
    w = ht.rotate_whiten(r, ht.correlation(r))
    cw = w.values @ w.values.T / w.n_times
    assert np.abs(cw - np.eye(6)).max() < 1e-8
    assert w.whitened


def test_rotate_whiten_identity_corr_fixes_signs():
    # C = I: eigenvectors are axes up to sign; convention keeps rows intact
    rng = np.random.default_rng(3)
    r = ht.normalize(ReturnsMatrix(values=rng.standard_normal((4, 2000))))
    w = ht.rotate_whiten(r, np.eye(4))
    np.testing.assert_allclose(w.values, r.values, atol=1e-12)


def test_rotate_whiten_rank_deficient():
    rng = np.random.default_rng(4)
    base = rng.standard_normal((1, 3000))
    dup = np.vstack([base, base, base + 1e-14 * rng.standard_normal((1, 3000))])
    r = ht.normalize(ReturnsMatrix(values=dup))
    with pytest.raises(DataError, match="rank"):
        ht.rotate_whiten(r, ht.correlation(r))
    with pytest.raises(ParameterError):
        ht.rotate_whiten(r, np.eye(5))  # shape mismatch


def test_aggregate_order_and_moments():
    rng = np.random.default_rng(5)
    r = ht.normalize(ReturnsMatrix(values=rng.standard_normal((3, 5000))))
    w = ht.rotate_whiten(r, ht.correlation(r))
    agg = ht.aggregate(w)
    assert agg.shape == (15000,)
    np.testing.assert_array_equal(agg[:5000], w.values[0])  # asset-major
    assert abs(agg.mean()) < 1e-6
    assert abs(agg.var() - 1.0) < 1e-6
    with pytest.raises(ParameterError):
        ht.aggregate(r)


# ---------------------------------------------------------------------------
# windowed variance


def test_windowed_variance_example():
    bg = ht.windowed_variance([1.0, -1.0, 1.0, -1.0], 2)
    np.testing.assert_allclose(bg.values, 1.0)
    assert bg.window == 2


def test_windowed_variance_iid_bias():
    # 1/L estimator on iid N(0,1): mean (L-1)/L
    x = np.random.default_rng(6).standard_normal(400_000)
    bg = ht.windowed_variance(x, 14)
    assert bg.values.mean() == pytest.approx(13.0 / 14.0, rel=5e-3)
    assert bg.values.size == 400_000 - 13


def test_windowed_variance_segments_dont_straddle():
    a = np.tile([1.0, -1.0], 50)
    b = 1000.0 * a
    bg = ht.windowed_variance(np.concatenate([a, b]), 10, segment_length=100)
    assert bg.values.size == 2 * 91
    # a straddling window would see variance ~ 1e5; per-segment values stay pure
    np.testing.assert_allclose(bg.values[:91], 1.0)
    np.testing.assert_allclose(bg.values[91:], 1e6)


def test_windowed_variance_step_and_errors():
    x = np.random.default_rng(7).standard_normal(1000)
    assert ht.windowed_variance(x, 20, step=5).values.size == (1000 - 19 + 4) // 5
    with pytest.raises(ParameterError):
        ht.windowed_variance(x, 1)
    with pytest.raises(ParameterError):
        ht.windowed_variance(x, 1001)
    with pytest.raises(ParameterError):
        ht.windowed_variance(x, 10, step=0)
    with pytest.raises(ParameterError):
        ht.windowed_variance(x, 10, segment_length=300)  # 1000 % 300 != 0


def test_windowed_variance_sign_flip_invariant():
    x = np.random.default_rng(8).standard_normal(2000)
    a = ht.windowed_variance(x, 14)
    b = ht.windowed_variance(-x, 14)
    np.testing.assert_array_equal(a.values, b.values)


def test_return_histogram_masses():
    x = np.random.default_rng(9).standard_normal(50_000)
    hist = ht.return_histogram(x)
    assert hist.masses.size == 401
    assert hist.masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert hist.edges[0] == pytest.approx(-12.0 * x.std())
    with pytest.raises(DataError):
        ht.return_histogram(np.ones(100))


# ---------------------------------------------------------------------------
# KL divergence


def test_kl_two_bin_example():
    hist = Histogram(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.5]))
    cdf = lambda e: np.interp(e, [0.0, 1.0, 2.0], [0.0, 0.25, 1.0])
    res = ht.kl_divergence(hist, model_cdf=cdf)
    # 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
    assert res.value == pytest.approx(0.1438410362, abs=1e-9)
    assert res.model_mass == pytest.approx(1.0)
    assert not res.support_mismatch


def test_kl_zero_on_matched_pair():
    rng = np.random.default_rng(10)
    x = rng.standard_normal(100_000)
    hist = ht.return_histogram(x)
    cdf = lambda e: stats.norm.cdf(e, scale=x.std())
    q = np.diff(cdf(hist.edges))
    matched = Histogram(hist.edges, q / q.sum())
    assert ht.kl_divergence(matched, model_cdf=cdf).value < 1e-6


def test_kl_density_and_cdf_paths_agree():
    x = np.random.default_rng(11).standard_normal(200_000)
    hist = ht.return_histogram(x)
    via_cdf = ht.kl_divergence(hist, model_cdf=stats.norm.cdf)
    via_pdf = ht.kl_divergence(hist, model_density=stats.norm.pdf)
    assert via_pdf.value == pytest.approx(via_cdf.value, abs=1e-6)
    assert via_pdf.model_mass == pytest.approx(via_cdf.model_mass, abs=1e-6)


def test_kl_support_mismatch_flag():
    hist = Histogram(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.5]))
    narrow = lambda e: stats.norm.cdf(e, loc=1.0, scale=0.05)
    assert not ht.kl_divergence(hist, model_cdf=narrow).support_mismatch
    shifted = lambda e: stats.norm.cdf(e, loc=40.0)
    res = ht.kl_divergence(hist, model_cdf=shifted)
    assert res.support_mismatch
    assert res.model_mass < 0.01
    assert res.value > 100.0  # floored q makes the mismatch loud


def test_kl_gamma_self_consistency():
    # 1e6 Gamma(2) samples against their own generating density
    samples = np.random.default_rng(12).gamma(2.0, 1.0, size=1_000_000)
    edges, masses = _log_histogram(samples, 200)
    bg = BackgroundSeries(window=2, values=samples, edges=edges, masses=masses)
    res = ht.kl_divergence(bg, model_density=lambda x: stats.gamma.pdf(x, 2.0))
    assert res.value < 0.003
    assert not res.support_mismatch


def test_kl_argument_validation():
    hist = Histogram(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.5]))
    with pytest.raises(ParameterError):
        ht.kl_divergence(hist)
    with pytest.raises(ParameterError):
        ht.kl_divergence(hist, model_density=lambda x: x, model_cdf=lambda x: x)
    bad = Histogram(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.6]))
    with pytest.raises(ParameterError):
        ht.kl_divergence(bad, model_cdf=stats.norm.cdf)


@settings(max_examples=30, deadline=None)
@given(
    counts=st.lists(st.integers(0, 50), min_size=4, max_size=12),
    scale=st.floats(0.5, 2.0),
)
def test_kl_nonnegative(counts, scale):
    counts = np.asarray(counts, dtype=float)
    if counts.sum() == 0:
        counts[0] = 1.0
    edges = np.linspace(-3.0, 3.0, counts.size + 1)
    hist = Histogram(edges, counts / counts.sum())
    res = ht.kl_divergence(hist, model_cdf=lambda e: stats.norm.cdf(e, scale=scale))
    assert res.value >= 0.0


# ---------------------------------------------------------------------------
# window scan


def make_whitened(values):
    return ReturnsMatrix(values=np.asarray(values), normalized=True, whitened=True)


def test_optimal_window_regime_switching():
    # variance flips between 0.5 and 2.0 every 20 steps: structure near L=20
    rng = np.random.default_rng(13)
    T = 6000
    sig = np.sqrt(np.where((np.arange(T) // 20) % 2 == 0, 0.5, 2.0))
    rows = sig * rng.standard_normal((4, T))
    rows /= rows.std(axis=1, keepdims=True)
    scan = ht.optimal_window(make_whitened(rows))
    assert scan.mean <= 20.0
    assert not any(scan.no_structure)
    assert sum(c for _, c in scan.counts) == 4
    assert len(scan.per_asset) == 4


def test_optimal_window_flags_structureless_series():
    rng = np.random.default_rng(14)
    scan = ht.optimal_window(make_whitened(rng.standard_normal((3, 4000))))
    assert all(scan.no_structure)


def test_optimal_window_validation():
    rng = np.random.default_rng(15)
    rows = rng.standard_normal((2, 500))
    with pytest.raises(ParameterError):
        ht.optimal_window(ReturnsMatrix(values=rows, normalized=True))
    with pytest.raises(ParameterError):
        ht.optimal_window(make_whitened(rows), l_range=[])
    with pytest.raises(ParameterError):
        ht.optimal_window(make_whitened(rows), l_range=[1, 10])
    with pytest.raises(ParameterError):
        ht.optimal_window(make_whitened(rows), l_range=[10, 501])


def test_optimal_window_thread_count_invariance():
    rng = np.random.default_rng(16)
    rows = rng.standard_normal((4, 1500))
    sig = np.sqrt(np.where((np.arange(1500) // 15) % 2 == 0, 0.3, 1.7))
    rows = rows * sig
    rows /= rows.std(axis=1, keepdims=True)
    a = ht.optimal_window(make_whitened(rows), threads=1)
    b = ht.optimal_window(make_whitened(rows), threads=4)
    assert a == b


# ---------------------------------------------------------------------------
# recovered-return check


def synthetic_panel(beta, n_levels, p, T, seed):
    rng = np.random.default_rng(seed)
    spec = ht.ChainSpec("wishart", (beta,) * n_levels, np.eye(p))
    series = ht.synthetic_return_series(spec, T, rng=rng)
    r = ht.normalize(ReturnsMatrix(values=series.T))
    return ht.rotate_whiten(r, ht.correlation(r))


def test_recovered_return_self_consistency():
    w = synthetic_panel(3.0, 2, 8, 4000, seed=17)
    agg = ht.aggregate(w)
    bg = ht.windowed_variance(agg, 30, segment_length=w.n_times)
    good = ht.recovered_return_check(agg, bg)
    assert good.value < 0.005
    assert not good.support_mismatch

    # negative control: shuffling kills volatility clustering, so the
    # shuffled background can no longer explain the heavy tails
    sh = agg.copy()
    np.random.default_rng(18).shuffle(sh)
    bad = ht.recovered_return_check(agg, ht.windowed_variance(sh, 30))
    assert bad.value > 2.5 * good.value


# ---------------------------------------------------------------------------
# beta fitting


def test_fit_beta_self_recovery():
    # direct background samples, no windowing: fit must land within 10%
    model = ht.HModel("wishart", (9.67, 9.67, 9.67), 1.0)
    samples = ht.sample_background(model, 1_000_000, rng=np.random.default_rng(19))
    edges, masses = _log_histogram(samples, 200)
    bg = BackgroundSeries(window=2, values=samples, edges=edges, masses=masses)
    res = ht.fit_beta(bg, 3, "wishart")
    assert res.beta == pytest.approx(9.67, rel=0.10)
    assert res.kl < 0.01


def test_fit_beta_validation():
    edges, masses = _log_histogram(np.random.default_rng(20).gamma(2.0, size=1000), 200)
    bg = BackgroundSeries(window=2, values=np.ones(3), edges=edges, masses=masses)
    with pytest.raises(ParameterError):
        ht.fit_beta(bg, 0, "wishart")


def test_fit_beta_all_failures():
    # negative-support histogram: every density evaluation fails
    edges = np.linspace(-5.0, -1.0, 201)
    masses = np.full(200, 1.0 / 200)
    bg = BackgroundSeries(window=2, values=np.ones(3), edges=edges, masses=masses)
    with pytest.raises(FitFailureError):
        ht.fit_beta(bg, 1, "wishart")


# ---------------------------------------------------------------------------
# model selection


def entries(cls, kls):
    return [FitEntry(cls, n + 1, 1.0, kl) for n, kl in enumerate(kls)]


def test_select_model_flattening_rule():
    # improvement below 5% of the class's N=1 KL stops the descent
    fits = entries("wishart", [1.2562, 0.3695, 0.2547, 0.2344, 0.2344, 0.2394, 0.2455])
    fits += entries("inverse-wishart", [2.6479, 1.1481, 0.7864, 0.6367, 0.5575, 0.5093, 0.4772])
    assert _select_model(fits) == ("wishart", 3)


def test_select_model_never_flattens():
    fits = entries("wishart", [1.0, 0.8, 0.6, 0.4])
    assert _select_model(fits) == ("wishart", 4)


def test_select_model_immediate_flat():
    fits = entries("wishart", [0.5, 0.499, 0.498])
    fits += entries("inverse-wishart", [0.9, 0.8, 0.7])
    assert _select_model(fits) == ("wishart", 1)


def test_model_scan_end_to_end():
    w = synthetic_panel(6.0, 2, 12, 3000, seed=21)
    agg = ht.aggregate(w)
    bg = ht.windowed_variance(agg, 30, segment_length=w.n_times)
    report = ht.model_scan(bg, n_max=2, threads=2)
    assert len(report.fits) == 4
    assert report.selected_class == "wishart"
    assert report.selected_n == 2
    assert report.best().beta == pytest.approx(6.0, rel=0.35)
    wk = {e.n_levels: e.kl for e in report.fits if e.model_class == "wishart"}
    ik = {e.n_levels: e.kl for e in report.fits if e.model_class == "inverse-wishart"}
    assert wk[2] < wk[1] and wk[2] < ik[2]
    betas = [e.beta for e in sorted(report.fits, key=lambda e: e.n_levels)
             if e.model_class == "wishart"]
    assert betas == sorted(betas)  # beta grows with depth


# ---------------------------------------------------------------------------
# report round trip


def sample_report():
    fits = tuple(
        FitEntry(cls, n, 3.0 * n + 0.1, 1.0 / n)
        for cls in ("wishart", "inverse-wishart")
        for n in (1, 2, 3)
    )
    return ht.FitReport(
        fits=fits,
        selected_class="wishart",
        selected_n=2,
        eps0=1.0,
        series_length=1000,
        window_mean=14.2,
        window_counts=((12, 3), (14, 5)),
    )


def test_fit_report_json_round_trip():
    report = sample_report()
    text = report.to_json()
    payload = json.loads(text)
    assert payload["schema_version"] == 1
    assert payload["selected"] == {"model_class": "wishart", "n_levels": 2}
    back = ht.FitReport.from_json(text)
    assert back == report


def test_fit_report_render_table():
    text = sample_report().render_table()
    assert "wishart" in text and "inverse-wishart" in text
    assert "*" in text
    lines = [ln for ln in text.splitlines() if ln.strip().endswith("*")]
    assert len(lines) == 1 and " 2 " in lines[0]


def test_fit_report_from_json_malformed():
    with pytest.raises(DataError):
        ht.FitReport.from_json("{not json")
    with pytest.raises(DataError):
        ht.FitReport.from_json(json.dumps({"schema_version": 1}))


# ---------------------------------------------------------------------------
# orchestration


def test_run_fit_smoke():
    rng = np.random.default_rng(22)
    spec = ht.ChainSpec("wishart", (5.0,), np.eye(5))
    series = ht.synthetic_return_series(spec, 2000, rng=rng)
    out = ht.run_fit(ReturnsMatrix(values=series.T), n_max=1, threads=2)
    assert {e.model_class for e in out.report.fits} == {"wishart", "inverse-wishart"}
    assert out.report.selected_n == 1
    assert out.aggregated.size == 5 * 2000
    assert out.background.values.size > 0
    assert out.report.window_mean == out.window_scan.mean
    assert out.recovered.value < 0.05


def test_run_fit_from_csv(tmp_path):
    rng = np.random.default_rng(23)
    tickers = [f"T{i:02d}" for i in range(4)]
    spec = ht.ChainSpec("wishart", (4.0,), np.eye(4))
    series = ht.synthetic_return_series(spec, 400, rng=rng)
    prices = 50.0 * np.exp(np.cumsum(0.01 * series, axis=0))
    rows = []
    for t in range(401):
        for i, tk in enumerate(tickers):
            px = 50.0 if t == 0 else float(prices[t - 1, i])
            rows.append(f"2020-{1 + t // 28:02d}-{1 + t % 28:02d},{tk},{px!r}")
    path = write_csv(tmp_path / "prices.csv", rows)
    out = ht.run_fit(path, n_max=1, l_range=range(5, 21), window=10, threads=1)
    assert out.report.series_length == 4 * 400
    assert out.background.window == 10


def test_thread_env_override(monkeypatch):
    from htheory.pipeline import _thread_count

    monkeypatch.setenv("HTHEORY_THREADS", "3")
    assert _thread_count(None) == 3
    assert _thread_count(5) == 5  # explicit argument wins
    monkeypatch.setenv("HTHEORY_THREADS", "zebra")
    with pytest.raises(ParameterError):
        _thread_count(None)
