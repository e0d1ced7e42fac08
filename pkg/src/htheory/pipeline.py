"""Empirical workflow: prices to returns to background to fitted hierarchy.

The chain of custody, end to end:

1. load a long-format price CSV and keep only assets quoted on every date;
2. logarithmic returns, then per-asset normalization to zero mean and unit
   population variance;
3. whitening: rotate into the eigenbasis of the empirical correlation
   matrix and rescale each component to unit variance, which removes
   cross-sectional correlation so the panel can be pooled;
4. aggregation into a single long series, asset-major;
5. background extraction: sliding-window variance estimates (the window
   length is itself chosen per asset by a KL scan);
6. histogram the background and fit the shape parameter beta for each
   hierarchy depth N and both model classes by KL minimization;
7. model selection by the flattening rule: the smallest depth after which
   deeper hierarchies stop improving the fit appreciably.

Everything here is deterministic: no random numbers are consumed, so a
given input file always produces byte-identical reports.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import ndtr

from .distributions import HModel, ModelClass, background_density
from .errors import (
    DataError,
    FitFailureError,
    InsufficientDataError,
    ParameterError,
)

__all__ = [
    "PriceTable",
    "ReturnsMatrix",
    "BackgroundSeries",
    "Histogram",
    "KLResult",
    "FitResult",
    "FitEntry",
    "FitReport",
    "WindowScan",
    "FitOutcome",
    "load_prices",
    "log_returns",
    "normalize",
    "correlation",
    "rotate_whiten",
    "aggregate",
    "windowed_variance",
    "return_histogram",
    "kl_divergence",
    "optimal_window",
    "recovered_return_check",
    "fit_beta",
    "model_scan",
    "run_fit",
]

_BG_BINS = 200
_RETURN_BINS = 401
_RETURN_HALF_WIDTH = 12.0
_EIGEN_FLOOR = 1e-10
_Q_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True, eq=False)
class PriceTable:
    """Complete price panel: close[i, t] is tickers[i] at dates[t]."""

    tickers: tuple[str, ...]
    dates: tuple[str, ...]
    close: np.ndarray


@dataclass(frozen=True, eq=False)
class ReturnsMatrix:
    """p x T return panel with processing-stage flags."""

    values: np.ndarray
    normalized: bool = False
    whitened: bool = False
    tickers: tuple[str, ...] | None = None

    @property
    def n_assets(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]


def load_prices(path) -> PriceTable:
    """Parse a long-format CSV with header ``date,ticker,close``.

    Assets missing any date are dropped with a warning; duplicated
    (date, ticker) rows and non-positive prices are hard errors carrying the
    line number.
    """
    source = Path(path)
    prices: dict[str, dict[str, float]] = {}
    dates: set[str] = set()
    with source.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{source}: empty file") from None
        if [h.strip().lower() for h in header] != ["date", "ticker", "close"]:
            raise DataError(
                f"{source}: expected header 'date,ticker,close', got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataError(f"{source}:{lineno}: expected 3 fields, got {len(row)}")
            date, ticker = row[0].strip(), row[1].strip()
            if not date or not ticker:
                raise DataError(f"{source}:{lineno}: empty date or ticker")
            try:
                close = float(row[2])
            except ValueError:
                raise DataError(f"{source}:{lineno}: unparseable price {row[2]!r}") from None
            if not math.isfinite(close) or close <= 0.0:
                raise DataError(f"{source}:{lineno}: price must be positive, got {row[2]}")
            per = prices.setdefault(ticker, {})
            if date in per:
                raise DataError(f"{source}:{lineno}: duplicate entry for {ticker} on {date}")
            per[date] = close
            dates.add(date)

    ordered_dates = tuple(sorted(dates))
    complete = sorted(t for t, per in prices.items() if len(per) == len(ordered_dates))
    dropped = sorted(set(prices) - set(complete))
    if dropped:
        warnings.warn(
            f"dropped {len(dropped)} asset(s) with missing dates: {', '.join(dropped)}",
            stacklevel=2,
        )
    if len(complete) < 2 or len(ordered_dates) < 10:
        raise InsufficientDataError(
            f"{source}: need >= 2 complete assets and >= 10 dates, "
            f"got {len(complete)} and {len(ordered_dates)}"
        )
    close = np.array([[prices[t][d] for d in ordered_dates] for t in complete])
    return PriceTable(tickers=tuple(complete), dates=ordered_dates, close=close)


def log_returns(prices: PriceTable, dt_days: int = 1) -> ReturnsMatrix:
    """r_i(t) = ln close_i(t + dt) - ln close_i(t); T = dates - dt_days."""
    lag = int(dt_days)
    n_dates = prices.close.shape[1]
    if lag < 1 or lag >= n_dates:
        raise ParameterError(f"dt_days must be in [1, {n_dates - 1}], got {dt_days!r}")
    logp = np.log(prices.close)
    return ReturnsMatrix(values=logp[:, lag:] - logp[:, :-lag], tickers=prices.tickers)


# ---------------------------------------------------------------------------
# normalization and whitening


def normalize(r: ReturnsMatrix) -> ReturnsMatrix:
    """Center each row and divide by its population standard deviation."""
    values = np.asarray(r.values, dtype=float)
    centered = values - values.mean(axis=1, keepdims=True)
    sigma = np.sqrt(np.mean(centered * centered, axis=1, keepdims=True))
    flat = np.flatnonzero(sigma[:, 0] == 0.0)
    if flat.size:
        i = int(flat[0])
        name = r.tickers[i] if r.tickers is not None else f"row {i}"
        raise DataError(f"zero-variance return series: {name}")
    return ReturnsMatrix(
        values=centered / sigma, normalized=True, whitened=r.whitened, tickers=r.tickers
    )


def correlation(r: ReturnsMatrix) -> np.ndarray:
    """Empirical correlation C = M M' / T of a normalized panel."""
    if not r.normalized:
        raise ParameterError("correlation expects a normalized returns matrix")
    m = r.values
    c = m @ m.T / m.shape[1]
    c = 0.5 * (c + c.T)
    # Gram construction keeps eigenvalues >= 0 up to roundoff; clip if needed
    vals = np.linalg.eigvalsh(c)
    if vals[0] < 0.0:
        if vals[0] < -1e-10:
            vecs: np.ndarray
            vals, vecs = np.linalg.eigh(c)
            c = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            c = 0.5 * (c + c.T)
    return c


def _standardize_signs(vecs: np.ndarray) -> np.ndarray:
    """Fix each eigenvector's sign so its largest-|.| component is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0.0] = 1.0
    return vecs * signs


def rotate_whiten(r: ReturnsMatrix, c: np.ndarray) -> ReturnsMatrix:
    """Decorrelate: rows become Lambda^(-1/2) U' r with C = U Lambda U'."""
    if not r.normalized:
        raise ParameterError("rotate_whiten expects a normalized returns matrix")
    cm = np.asarray(c, dtype=float)
    p = r.n_assets
    if cm.shape != (p, p):
        raise ParameterError(f"correlation shape {cm.shape} does not match {p} assets")
    vals, vecs = np.linalg.eigh(0.5 * (cm + cm.T))
    floored = int(np.count_nonzero(vals < _EIGEN_FLOOR))
    if floored > p / 10:
        raise DataError(
            f"correlation matrix is rank deficient: {floored} of {p} eigenvalues "
            f"below {_EIGEN_FLOOR:g}"
        )
    if floored:
        warnings.warn(f"floored {floored} tiny correlation eigenvalue(s)", stacklevel=2)
        vals = np.maximum(vals, _EIGEN_FLOOR)
    vecs = _standardize_signs(vecs)
    white = (vecs.T @ r.values) / np.sqrt(vals)[:, None]
    return ReturnsMatrix(values=white, normalized=True, whitened=True, tickers=r.tickers)


def aggregate(r: ReturnsMatrix) -> np.ndarray:
    """Pool a whitened panel into one series, asset-major (row 1, row 2, ...)."""
    if not r.whitened:
        raise ParameterError("aggregate expects a whitened returns matrix")
    return np.ascontiguousarray(r.values).reshape(-1)


# ---------------------------------------------------------------------------
# background extraction


class Histogram(NamedTuple):
    edges: np.ndarray
    masses: np.ndarray


@dataclass(frozen=True, eq=False)
class BackgroundSeries:
    """Sliding-window variance estimates plus their log-bin histogram."""

    window: int
    values: np.ndarray
    edges: np.ndarray
    masses: np.ndarray

    @property
    def histogram(self) -> Histogram:
        return Histogram(self.edges, self.masses)


def _sliding_variance(x: np.ndarray, window: int, step: int) -> np.ndarray:
    """1/L-normalized, mean-subtracted variance over every sliding window."""
    s1 = np.concatenate(([0.0], np.cumsum(x)))
    s2 = np.concatenate(([0.0], np.cumsum(x * x)))
    mean = (s1[window:] - s1[:-window]) / window
    second = (s2[window:] - s2[:-window]) / window
    var = np.clip(second - mean * mean, 0.0, None)
    return var[::step] if step > 1 else var


def _log_histogram(values: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    positive = values[values > 0.0]
    if positive.size == 0:
        raise DataError("background histogram needs positive variance values")
    lo = min(float(positive.min()), 1e-4) / 1.05
    hi = float(positive.max()) * 1.05
    edges = np.geomspace(lo, hi, bins + 1)
    counts, _ = np.histogram(positive, bins=edges)
    return edges, counts / counts.sum()


def windowed_variance(
    series, window: int, step: int = 1, segment_length: int | None = None
) -> BackgroundSeries:
    """Background variance series eps^L(t) with an L-point sliding window.

    ``segment_length`` marks asset boundaries in an aggregated series:
    windows are taken inside each segment and the results concatenated, so
    no window straddles two assets.
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    length = int(segment_length) if segment_length is not None else x.size
    win = int(window)
    stp = int(step)
    if stp < 1:
        raise ParameterError(f"step must be >= 1, got {step!r}")
    if win < 2 or win > length:
        raise ParameterError(f"window must be in [2, {length}], got {window!r}")
    if segment_length is not None:
        if length < 1 or x.size % length:
            raise ParameterError(
                f"series length {x.size} is not a multiple of segment_length {segment_length!r}"
            )
        parts = [
            _sliding_variance(seg, win, stp) for seg in x.reshape(-1, length)
        ]
        values = np.concatenate(parts)
    else:
        values = _sliding_variance(x, win, stp)
    edges, masses = _log_histogram(values, _BG_BINS)
    return BackgroundSeries(window=win, values=values, edges=edges, masses=masses)


def return_histogram(series, bins: int = _RETURN_BINS, half_width: float = _RETURN_HALF_WIDTH) -> Histogram:
    """Linear histogram over [-half_width, half_width] standard deviations."""
    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size < 2:
        raise ParameterError("return histogram needs at least 2 points")
    sigma = float(x.std())
    if sigma == 0.0:
        raise DataError("return histogram needs a non-constant series")
    edges = np.linspace(-half_width * sigma, half_width * sigma, int(bins) + 1)
    counts, _ = np.histogram(x, bins=edges)
    total = counts.sum()
    if total == 0:
        raise DataError("all points fell outside the histogram range")
    return Histogram(edges, counts / total)


# ---------------------------------------------------------------------------
# KL divergence


class KLResult(NamedTuple):
    value: float
    model_mass: float
    support_mismatch: bool


def _coerce_histogram(hist) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(hist, BackgroundSeries):
        edges, masses = hist.edges, hist.masses
    else:
        edges, masses = hist
    edges = np.asarray(edges, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if edges.ndim != 1 or masses.shape != (edges.size - 1,):
        raise ParameterError("histogram needs edges of length len(masses) + 1")
    if np.any(masses < 0.0) or abs(float(masses.sum()) - 1.0) > 1e-8:
        raise ParameterError("histogram masses must be nonnegative and sum to 1")
    return edges, masses


def _simpson_bin_masses(edges: np.ndarray, density: Callable) -> np.ndarray:
    mids = 0.5 * (edges[:-1] + edges[1:])
    pts = np.empty(edges.size + mids.size)
    pts[0::2] = edges
    pts[1::2] = mids
    try:
        f = np.asarray(density(pts), dtype=float)
        if f.shape != pts.shape:
            raise TypeError
    except (TypeError, ValueError):
        f = np.array([float(density(float(x))) for x in pts])
    widths = np.diff(edges)
    return widths * (f[0:-1:2] + 4.0 * f[1::2] + f[2::2]) / 6.0


def kl_divergence(hist, model_density=None, support=None, model_cdf=None) -> KLResult:
    """D(empirical || model) over the histogram bins.

    Bin probabilities of the model come from ``model_cdf`` differences when
    given (exact for mixtures), otherwise from Simpson integration of
    ``model_density`` over each bin.  ``support`` restricts integration to
    bins inside it.  Model bins are floored at 1e-300; if the model puts
    less than 99% of its mass on the histogram support the result carries a
    mismatch flag.
    """
    edges, masses = _coerce_histogram(hist)
    if (model_density is None) == (model_cdf is None):
        raise ParameterError("pass exactly one of model_density / model_cdf")
    if model_cdf is not None:
        cdf = np.asarray(model_cdf(edges), dtype=float)
        q = np.diff(cdf)
    else:
        q = _simpson_bin_masses(edges, model_density)
    if support is not None:
        lo, hi = float(support[0]), float(support[1])
        outside = (edges[1:] <= lo) | (edges[:-1] >= hi)
        q = np.where(outside, 0.0, q)
    if not np.all(np.isfinite(q)):
        raise FitFailureError("model produced non-finite bin probabilities")
    q = np.clip(q, 0.0, None)
    model_mass = float(q.sum())
    occupied = masses > 0.0
    p = masses[occupied]
    value = float(np.sum(p * (np.log(p) - np.log(np.maximum(q[occupied], _Q_FLOOR)))))
    return KLResult(
        value=max(value, 0.0),
        model_mass=model_mass,
        support_mismatch=bool(model_mass < 0.99),
    )


# ---------------------------------------------------------------------------
# Gaussian-mixture compounds (shared by the window scan and the return check)


def _compress_mixture(eps: np.ndarray, max_components: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Reduce variance samples to <= max_components weighted components.

    Log-spaced bins, each represented by its mean variance so the mixture's
    second moment is preserved exactly.
    """
    eps = np.maximum(np.asarray(eps, dtype=float).reshape(-1), 1e-20)
    if eps.size <= max_components:
        return eps, np.full(eps.size, 1.0 / eps.size)
    edges = np.geomspace(eps.min() / 1.01, eps.max() * 1.01, max_components + 1)
    counts, _ = np.histogram(eps, bins=edges)
    sums, _ = np.histogram(eps, bins=edges, weights=eps)
    occupied = counts > 0
    return sums[occupied] / counts[occupied], counts[occupied] / eps.size


def _mixture_cdf(eps: np.ndarray) -> Callable:
    centers, weights = _compress_mixture(eps)
    inv_sigma = 1.0 / np.sqrt(centers)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return ndtr(x[:, None] * inv_sigma[None, :]) @ weights

    return cdf


def recovered_return_check(series, bg: BackgroundSeries) -> KLResult:
    """KL of the aggregated returns against the compound over extracted bg.

    Small values certify that compounding a Gaussian with the recovered
    background reproduces the return distribution the background came from.
    """
    hist = return_histogram(series)
    return kl_divergence(hist, model_cdf=_mixture_cdf(bg.values))


# ---------------------------------------------------------------------------
# optimal window scan


class WindowScan(NamedTuple):
    per_asset: tuple[int, ...]
    counts: tuple[tuple[int, int], ...]
    mean: float
    no_structure: tuple[bool, ...]


_SCAN_TIE_TOL = 1.01  # windows within 1% of the minimum KL count as ties


def _scan_one_asset(args) -> tuple[int, bool]:
    row, windows = args
    hist = return_histogram(row)
    kls = np.empty(len(windows))
    for j, win in enumerate(windows):
        eps = _sliding_variance(row, win, 1)
        kls[j] = kl_divergence(hist, model_cdf=_mixture_cdf(eps)).value
    # Smallest window within tolerance of the best KL: a flat profile then
    # resolves to the shortest window.  A profile that never turns back up
    # (the largest window still ties the minimum) has no interior valley,
    # i.e. no volatility structure inside the scanned range.
    cutoff = kls.min() * _SCAN_TIE_TOL
    best = int(np.argmax(kls <= cutoff))
    flat = bool(kls[-1] <= cutoff)
    return windows[best], flat


def optimal_window(r: ReturnsMatrix, l_range=range(5, 61), threads: int | None = None) -> WindowScan:
    """Per-asset KL scan over window lengths.

    For each window length the sliding variances define a Gaussian mixture;
    the window whose mixture best matches that asset's return histogram
    (smallest KL, ties to the smallest window) is chosen.  Assets whose KL
    profile is flat carry a no-structure flag.
    """
    if not r.whitened:
        raise ParameterError("optimal_window expects a whitened returns matrix")
    windows = sorted({int(w) for w in l_range})
    if not windows:
        raise ParameterError("l_range must contain at least one window length")
    if windows[0] < 2 or windows[-1] > r.n_times:
        raise ParameterError(
            f"window lengths must lie in [2, {r.n_times}], got [{windows[0]}, {windows[-1]}]"
        )
    results = _map(_scan_one_asset, [(row, windows) for row in r.values], threads)
    per_asset = tuple(best for best, _ in results)
    flags = tuple(flat for _, flat in results)
    values, counts = np.unique(np.array(per_asset), return_counts=True)
    return WindowScan(
        per_asset=per_asset,
        counts=tuple((int(v), int(c)) for v, c in zip(values, counts)),
        mean=float(np.mean(per_asset)),
        no_structure=flags,
    )


# ---------------------------------------------------------------------------
# beta fitting and model scan


class FitResult(NamedTuple):
    beta: float
    kl: float


_BETA_LO = 0.1
_BETA_HI = 100.0
_BETA_GRID = 40
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def fit_beta(bg: BackgroundSeries, n_levels: int, model_class, eps0: float = 1.0) -> FitResult:
    """Best common beta for an N-level hierarchy against the bg histogram.

    Coarse 40-point log grid on [0.1, 100], then golden-section refinement
    around the grid minimum to |delta beta| < 1e-3.  Betas whose density
    evaluation fails are skipped; if every beta fails the fit fails.
    """
    n = int(n_levels)
    if n < 1:
        raise ParameterError(f"n_levels must be >= 1, got {n_levels!r}")
    cls = ModelClass.parse(model_class)
    edges, masses = bg.edges, bg.masses
    mids = 0.5 * (edges[:-1] + edges[1:])
    pts = np.empty(edges.size + mids.size)
    pts[0::2] = edges
    pts[1::2] = mids
    widths = np.diff(edges)
    occupied = masses > 0.0
    p = masses[occupied]
    logp = np.log(p)

    def kl_for(beta: float) -> float:
        model = HModel(cls, (beta,) * n, eps0)
        try:
            f = np.array([background_density(model, float(x)) for x in pts])
        except Exception:
            return math.inf
        if not np.all(np.isfinite(f)):
            return math.inf
        q = widths * (f[0:-1:2] + 4.0 * f[1::2] + f[2::2]) / 6.0
        q = np.maximum(q[occupied], _Q_FLOOR)
        return float(np.sum(p * (logp - np.log(q))))

    grid = np.geomspace(_BETA_LO, _BETA_HI, _BETA_GRID)
    kls = np.array([kl_for(b) for b in grid])
    if not np.any(np.isfinite(kls)):
        raise FitFailureError(
            f"no usable beta in [{_BETA_LO}, {_BETA_HI}] for {cls.value} N={n}"
        )
    i = int(np.argmin(kls))
    lo = grid[i - 1] if i > 0 else _BETA_LO
    hi = grid[i + 1] if i < grid.size - 1 else _BETA_HI
    best_beta, best_kl = float(grid[i]), float(kls[i])

    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = kl_for(x1), kl_for(x2)
    while b - a > 1e-3:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = kl_for(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = kl_for(x2)
        for x, fx in ((x1, f1), (x2, f2)):
            if fx < best_kl:
                best_beta, best_kl = float(x), float(fx)
    if not math.isfinite(best_kl):
        raise FitFailureError(f"beta search failed for {cls.value} N={n}")
    return FitResult(beta=best_beta, kl=best_kl)


class FitEntry(NamedTuple):
    model_class: str
    n_levels: int
    beta: float
    kl: float


_FLATTEN_THRESHOLD = 0.05


def _select_model(fits: list[FitEntry]) -> tuple[str, int]:
    """Flattening rule: in the class with the lowest KL anywhere, pick the
    smallest N whose improvement over all deeper fits is below 5% of that
    class's N=1 KL."""
    by_class: dict[str, dict[int, float]] = {}
    for e in fits:
        by_class.setdefault(e.model_class, {})[e.n_levels] = e.kl
    best_class = min(by_class, key=lambda c: min(by_class[c].values()))
    column = by_class[best_class]
    ns = sorted(column)
    base = column[ns[0]]
    for n in ns:
        deeper = [column[m] for m in ns if m > n]
        improvement = column[n] - min(deeper) if deeper else 0.0
        if improvement < _FLATTEN_THRESHOLD * base:
            return best_class, n
    return best_class, ns[-1]


@dataclass(frozen=True)
class FitReport:
    """Per-(class, N) fit table plus the selected model and run metadata."""

    fits: tuple[FitEntry, ...]
    selected_class: str
    selected_n: int
    eps0: float
    series_length: int
    window_mean: float | None = None
    window_counts: tuple[tuple[int, int], ...] = ()
    schema_version: int = 1

    def best(self) -> FitEntry:
        for e in self.fits:
            if e.model_class == self.selected_class and e.n_levels == self.selected_n:
                return e
        raise ParameterError("selected model missing from fit table")

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "eps0": self.eps0,
            "series_length": self.series_length,
            "selected": {"model_class": self.selected_class, "n_levels": self.selected_n},
            "fits": [
                {
                    "model_class": e.model_class,
                    "n_levels": e.n_levels,
                    "beta": e.beta,
                    "kl": e.kl,
                }
                for e in self.fits
            ],
            "window": {
                "mean": self.window_mean,
                "counts": [[w, c] for w, c in self.window_counts],
            },
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FitReport":
        try:
            payload = json.loads(text)
            fits = tuple(
                FitEntry(str(f["model_class"]), int(f["n_levels"]), float(f["beta"]), float(f["kl"]))
                for f in payload["fits"]
            )
            window = payload.get("window") or {}
            mean = window.get("mean")
            return cls(
                fits=fits,
                selected_class=str(payload["selected"]["model_class"]),
                selected_n=int(payload["selected"]["n_levels"]),
                eps0=float(payload["eps0"]),
                series_length=int(payload["series_length"]),
                window_mean=None if mean is None else float(mean),
                window_counts=tuple((int(w), int(c)) for w, c in window.get("counts", [])),
                schema_version=int(payload.get("schema_version", 1)),
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed fit report: {exc}") from None

    def render_table(self) -> str:
        lines = [
            f"aggregated points: {self.series_length}    eps0: {self.eps0:g}",
        ]
        if self.window_mean is not None:
            lines.append(f"mean optimal window: {self.window_mean:.2f}")
        lines.append("")
        lines.append(f"{'class':<18}{'N':>3}  {'beta':>9}  {'KL':>9}  selected")
        classes = sorted({e.model_class for e in self.fits})
        for cls_name in classes:
            for e in sorted(
                (e for e in self.fits if e.model_class == cls_name), key=lambda e: e.n_levels
            ):
                mark = "*" if (e.model_class, e.n_levels) == (self.selected_class, self.selected_n) else ""
                lines.append(
                    f"{e.model_class:<18}{e.n_levels:>3}  {e.beta:>9.3f}  {e.kl:>9.4f}  {mark}"
                )
        return "\n".join(lines) + "\n"


def model_scan(
    bg: BackgroundSeries,
    n_max: int = 7,
    eps0: float = 1.0,
    threads: int | None = None,
    series_length: int | None = None,
    window_scan: WindowScan | None = None,
) -> FitReport:
    """fit_beta for both classes and every depth up to n_max, then select."""
    depth = int(n_max)
    if depth < 1:
        raise ParameterError(f"n_max must be >= 1, got {n_max!r}")
    jobs = [(cls, n) for cls in (ModelClass.WISHART, ModelClass.INVERSE_WISHART) for n in range(1, depth + 1)]
    results = _map(lambda job: fit_beta(bg, job[1], job[0], eps0), jobs, threads)
    fits = tuple(
        FitEntry(cls.value, n, res.beta, res.kl) for (cls, n), res in zip(jobs, results)
    )
    selected_class, selected_n = _select_model(list(fits))
    return FitReport(
        fits=fits,
        selected_class=selected_class,
        selected_n=selected_n,
        eps0=eps0,
        series_length=int(series_length) if series_length is not None else bg.values.size,
        window_mean=None if window_scan is None else window_scan.mean,
        window_counts=() if window_scan is None else window_scan.counts,
    )


# ---------------------------------------------------------------------------
# orchestration


@dataclass(frozen=True, eq=False)
class FitOutcome:
    """Everything a full pipeline run produces."""

    report: FitReport
    background: BackgroundSeries
    window_scan: WindowScan
    aggregated: np.ndarray
    recovered: KLResult


def run_fit(
    source,
    n_max: int = 7,
    l_range=range(5, 61),
    eps0: float = 1.0,
    window: int | None = None,
    threads: int | None = None,
) -> FitOutcome:
    """Full pipeline: prices (path or PriceTable) or a raw ReturnsMatrix in,
    fitted report out.

    The background window defaults to the rounded mean of the per-asset
    optimal windows; pass ``window`` to pin it.
    """
    if isinstance(source, ReturnsMatrix):
        returns = source
    else:
        table = source if isinstance(source, PriceTable) else load_prices(source)
        returns = log_returns(table)
    returns = normalize(returns)
    white = rotate_whiten(returns, correlation(returns))
    agg = aggregate(white)
    scan = optimal_window(white, l_range=l_range, threads=threads)
    win = int(window) if window is not None else max(2, int(round(scan.mean)))
    bg = windowed_variance(agg, win, segment_length=white.n_times)
    report = model_scan(
        bg,
        n_max=n_max,
        eps0=eps0,
        threads=threads,
        series_length=agg.size,
        window_scan=scan,
    )
    recovered = recovered_return_check(agg, bg)
    return FitOutcome(
        report=report, background=bg, window_scan=scan, aggregated=agg, recovered=recovered
    )


# ---------------------------------------------------------------------------
# parallel map helper


def _thread_count(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("HTHEORY_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(f"HTHEORY_THREADS must be an integer, got {env!r}") from None
    return min(8, os.cpu_count() or 1)


def _map(fn, items, threads: int | None):
    items = list(items)
    workers = min(_thread_count(threads), len(items)) if items else 1
    if workers <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
