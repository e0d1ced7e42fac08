"""Command-line front end: simulate, eval, fit, report.

Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numerical
failure.  Every run is deterministic for a given flag set and seed, and all
validation happens before any output file is opened, so a failed run never
leaves partial artifacts behind.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import (
    HModel,
    ModelClass,
    background_density,
    signal_density,
)
from .ensembles import ChainSpec, synthetic_return_series
from .errors import (
    AccuracyError,
    DataError,
    DivergenceError,
    DomainError,
    FitFailureError,
    HTheoryError,
    InsufficientDataError,
    ParameterError,
)
from .pipeline import FitReport, return_histogram, run_fit
from .sde import SdeParams, save_trajectories, simulate_hierarchy

__all__ = ["RunConfig", "main", "parse_grid"]

_DEFAULT_SEED = 1729
_PANEL_RETURN_SCALE = 0.02  # daily log-return scale when writing price CSVs


@dataclass(frozen=True)
class RunConfig:
    """Validated invocation: one subcommand plus everything it needs."""

    subcommand: str
    input: Path | None = None
    output: Path | None = None
    model_class: str = "wishart"
    levels: int = 1
    max_levels: int = 7
    beta: float = 1.0
    eps0: float = 1.0
    seed: int = _DEFAULT_SEED
    grid: str = "-10:10:201"
    kind: str = "panel"
    assets: int = 10
    steps: int = 1000
    l_min: int = 5
    l_max: int = 60
    window: int | None = None
    threads: int | None = None
    background: bool = False
    gamma1: float = 1.0
    spacing: float = 10.0
    s_exponent: float = 0.5
    dt: float | None = None


def parse_grid(text: str) -> np.ndarray:
    """``lo:hi:count`` -> count evenly spaced points from lo to hi."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ParameterError(f"grid must be lo:hi:count, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError:
        raise ParameterError(f"grid must be lo:hi:count with numeric fields, got {text!r}") from None
    if count < 1:
        raise ParameterError(f"grid count must be >= 1, got {count}")
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise ParameterError(f"grid bounds must be finite with hi >= lo, got {text!r}")
    return np.linspace(lo, hi, count)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract wants 1 and
    # usage text on stderr, so route errors through an exception instead
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="htheory", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"htheory {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="generate synthetic data as CSV")
    sim.add_argument("--kind", choices=["panel", "sde"], default="panel",
                     help="panel: multivariate return panel as a price CSV; "
                          "sde: hierarchy trajectories")
    sim.add_argument("--class", dest="model_class", default="wishart",
                     choices=["wishart", "inverse-wishart"])
    sim.add_argument("--levels", type=int, default=2)
    sim.add_argument("--beta", type=float, default=6.0)
    sim.add_argument("--assets", type=int, default=10)
    sim.add_argument("--steps", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=_DEFAULT_SEED)
    sim.add_argument("--eps0", type=float, default=1.0)
    sim.add_argument("--gamma1", type=float, default=1.0, help="slowest SDE relaxation rate")
    sim.add_argument("--spacing", type=float, default=10.0, help="SDE rate ratio between levels")
    sim.add_argument("--s-exponent", type=float, default=0.5, choices=[0.5, 1.0],
                     help="0.5: gamma class, 1.0: inverse-gamma class")
    sim.add_argument("--dt", type=float, default=None)
    sim.add_argument("--output", type=Path, required=True)

    ev = sub.add_parser("eval", help="tabulate model densities as CSV")
    ev.add_argument("--class", dest="model_class", default="wishart",
                    choices=["wishart", "inverse-wishart"])
    ev.add_argument("--levels", type=int, default=1)
    ev.add_argument("--beta", type=float, default=1.0)
    ev.add_argument("--eps0", type=float, default=1.0)
    ev.add_argument("--grid", default="-10:10:201", help="lo:hi:count")
    ev.add_argument("--background", action="store_true",
                    help="background density f_N(eps) instead of the signal law")
    ev.add_argument("--output", type=Path, required=True)

    fit = sub.add_parser("fit", help="full pipeline: price CSV to fitted report")
    fit.add_argument("--input", type=Path, required=True)
    fit.add_argument("--output", type=Path, required=True,
                     help="report JSON; density CSVs are written next to it")
    fit.add_argument("--max-levels", dest="max_levels", type=int, default=7)
    fit.add_argument("--eps0", type=float, default=1.0)
    fit.add_argument("--l-min", dest="l_min", type=int, default=5)
    fit.add_argument("--l-max", dest="l_max", type=int, default=60)
    fit.add_argument("--window", type=int, default=None,
                     help="pin the background window instead of scanning")
    fit.add_argument("--threads", type=int, default=None,
                     help="parallel fit workers (default: HTHEORY_THREADS or cpu count)")
    fit.add_argument("--seed", type=int, default=_DEFAULT_SEED)

    rep = sub.add_parser("report", help="render a report JSON as a table")
    rep.add_argument("--input", type=Path, required=True)

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    return RunConfig(**fields)


def _validate(cfg: RunConfig) -> None:
    if cfg.subcommand in ("simulate", "eval"):
        if cfg.levels < 1:
            raise ParameterError(f"--levels must be >= 1, got {cfg.levels}")
        if cfg.beta <= 0.0:
            raise ParameterError(f"--beta must be positive, got {cfg.beta}")
        if cfg.eps0 <= 0.0:
            raise ParameterError(f"--eps0 must be positive, got {cfg.eps0}")
    if cfg.subcommand == "simulate":
        if cfg.steps < 1:
            raise ParameterError(f"--steps must be >= 1, got {cfg.steps}")
        if cfg.kind == "panel" and cfg.assets < 2:
            raise ParameterError(f"--assets must be >= 2, got {cfg.assets}")
    if cfg.subcommand == "fit":
        if cfg.max_levels < 1:
            raise ParameterError(f"--max-levels must be >= 1, got {cfg.max_levels}")
        if not 2 <= cfg.l_min <= cfg.l_max:
            raise ParameterError(f"need 2 <= --l-min <= --l-max, got {cfg.l_min}, {cfg.l_max}")


# ---------------------------------------------------------------------------
# subcommands


def _write_rows(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_simulate(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    if cfg.kind == "sde":
        params = SdeParams.cascade(
            n_levels=cfg.levels,
            beta=cfg.beta,
            steps=cfg.steps,
            gamma1=cfg.gamma1,
            spacing=cfg.spacing,
            s_exponent=cfg.s_exponent,
            eps0=cfg.eps0,
            dt=cfg.dt,
        )
        result = simulate_hierarchy(params, rng=rng)
        save_trajectories(result, cfg.output)
        print(f"wrote {result.values.shape[1]} samples of {cfg.levels} level(s) to {cfg.output}")
        return 0

    spec = ChainSpec(cfg.model_class, (cfg.beta,) * cfg.levels, cfg.eps0 * np.eye(cfg.assets))
    returns = synthetic_return_series(spec, cfg.steps, rng=rng)
    # price CSV so the output feeds straight into `fit`
    logp = np.vstack([np.zeros(cfg.assets), np.cumsum(_PANEL_RETURN_SCALE * returns, axis=0)])
    close = 100.0 * np.exp(logp)
    start = datetime.date(2000, 1, 1)
    tickers = [f"A{i:03d}" for i in range(cfg.assets)]
    rows = (
        (str(start + datetime.timedelta(days=t)), tickers[i], repr(float(close[t, i])))
        for t in range(close.shape[0])
        for i in range(cfg.assets)
    )
    _write_rows(cfg.output, ["date", "ticker", "close"], rows)
    print(f"wrote {close.shape[0]} dates x {cfg.assets} assets to {cfg.output}")
    return 0


def _cmd_eval(cfg: RunConfig) -> int:
    grid = parse_grid(cfg.grid)
    model = HModel(ModelClass.parse(cfg.model_class), (cfg.beta,) * cfg.levels, cfg.eps0)
    if cfg.background:
        if np.any(grid < 0.0):
            raise ParameterError("background grid must be nonnegative")
        values = [background_density(model, float(x)) if x > 0 else math.nan for x in grid]
        header = ["eps", "density"]
    else:
        values = [signal_density(model, float(x)) for x in grid]
        header = ["x", "density"]
    _write_rows(cfg.output, header, ((repr(float(x)), repr(float(v))) for x, v in zip(grid, values)))
    print(f"wrote {grid.size} density values to {cfg.output}")
    return 0


def _density_artifacts(outcome, model: HModel, stem: Path) -> list[Path]:
    bg = outcome.background
    centers = 0.5 * (bg.edges[:-1] + bg.edges[1:])
    widths = np.diff(bg.edges)
    emp = bg.masses / widths
    mod = np.array([background_density(model, float(x)) for x in centers])
    bg_path = stem.with_name(stem.name + "_background.csv")
    _write_rows(
        bg_path,
        ["eps", "empirical", "model"],
        ((repr(float(x)), repr(float(e)), repr(float(m))) for x, e, m in zip(centers, emp, mod)),
    )

    hist = return_histogram(outcome.aggregated)
    centers_r = 0.5 * (hist.edges[:-1] + hist.edges[1:])
    width_r = hist.edges[1] - hist.edges[0]
    emp_r = hist.masses / width_r
    # the density is even in x: evaluate each |x| once
    half = np.unique(np.abs(centers_r))
    vals = {x: signal_density(model, float(x)) for x in half}
    mod_r = np.array([vals[abs(x)] for x in centers_r])
    ret_path = stem.with_name(stem.name + "_returns.csv")
    _write_rows(
        ret_path,
        ["x", "empirical", "model"],
        ((repr(float(x)), repr(float(e)), repr(float(m))) for x, e, m in zip(centers_r, emp_r, mod_r)),
    )
    return [bg_path, ret_path]


def _cmd_fit(cfg: RunConfig) -> int:
    outcome = run_fit(
        cfg.input,
        n_max=cfg.max_levels,
        l_range=range(cfg.l_min, cfg.l_max + 1),
        eps0=cfg.eps0,
        window=cfg.window,
        threads=cfg.threads,
    )
    report = outcome.report
    best = report.best()
    model = HModel(ModelClass.parse(best.model_class), (best.beta,) * best.n_levels, report.eps0)
    cfg.output.write_text(report.to_json() + "\n")
    stem = cfg.output.with_suffix("") if cfg.output.suffix else cfg.output
    artifacts = _density_artifacts(outcome, model, stem)
    print(f"wrote {cfg.output} and {', '.join(str(a) for a in artifacts)}")
    print(f"selected {best.model_class} N={best.n_levels} beta={best.beta:.3f} kl={best.kl:.4f}")
    return 0


def _cmd_report(cfg: RunConfig) -> int:
    try:
        text = cfg.input.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {cfg.input}: {exc}") from None
    print(FitReport.from_json(text).render_table(), end="")
    return 0


_DISPATCH = {
    "simulate": _cmd_simulate,
    "eval": _cmd_eval,
    "fit": _cmd_fit,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"htheory: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    try:
        cfg = _config_from_args(args)
        _validate(cfg)
        return _DISPATCH[cfg.subcommand](cfg)
    except ParameterError as exc:
        print(f"htheory: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, InsufficientDataError, FileNotFoundError, OSError) as exc:
        print(f"htheory: data error: {exc}", file=sys.stderr)
        return 2
    except (AccuracyError, DivergenceError, DomainError, FitFailureError) as exc:
        print(f"htheory: numerical failure: {exc}", file=sys.stderr)
        return 3
    except HTheoryError as exc:
        print(f"htheory: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
