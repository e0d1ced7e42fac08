"""Stochastic hierarchy of mean-reverting variance levels.

Each level relaxes toward the one above it and is kicked multiplicatively:

    d eps_i = -gamma_i (eps_i - eps_{i-1}) dt
              + kappa_i eps_i^s eps_{i-1}^(1-s) dW_i,      eps_0 fixed.

With the parent held fixed the stationary conditional is exactly the level
law of the distribution families: s = 1/2 gives a square-root (CIR-type)
diffusion whose stationary density is Gamma(beta, eps_prev/beta), and s = 1
gives the inverse-gamma conditional with shape beta + 1 and scale
beta * eps_prev, where beta = 2 gamma / kappa^2 in both cases.  Only these
two exponents are supported.

Integration is Euler-Maruyama with a reflecting floor at 1e-12 (excursions
are counted, not hidden); the hot loop is compiled with numba on first use,
with noise fed in chunks from a single seeded generator so runs stay
deterministic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .distributions import ModelClass
from .errors import DivergenceError, InsufficientDataError, ParameterError

__all__ = [
    "SdeParams",
    "SdeResult",
    "simulate_hierarchy",
    "stationary_check",
    "save_trajectories",
]

_FLOOR = 1e-12
_CAP = 1e12

_KERNEL = None


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class SdeParams:
    """Hierarchy parameters; derived shapes are beta_i = 2 gamma_i / kappa_i^2.

    ``steps`` counts post-burn-in integration steps; every ``record_stride``-th
    state is kept, so ``steps // record_stride`` rows come back per level.
    ``dt`` defaults to 1e-3 / max(gamma), ``burn_in`` to 20 / min(gamma) worth
    of steps.  ``eps_init`` (defaults to all eps0) sets the starting state,
    which the noise-free relaxation checks need.
    """

    gamma: tuple[float, ...]
    kappa: tuple[float, ...]
    steps: int
    s_exponent: float = 0.5
    eps0: float = 1.0
    dt: float | None = None
    burn_in: int | None = None
    record_stride: int = 1
    eps_init: tuple[float, ...] | None = None

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gamma)
        kappas = tuple(float(k) for k in self.kappa)
        if not gammas:
            raise ParameterError("hierarchy needs at least one level")
        if len(kappas) != len(gammas):
            raise ParameterError(
                f"gamma and kappa lengths differ ({len(gammas)} vs {len(kappas)})"
            )
        for g in gammas:
            if not math.isfinite(g) or g <= 0.0:
                raise ParameterError(f"gamma values must be positive and finite, got {g!r}")
        for k in kappas:
            # kappa = 0 is the noise-free limit, used by the relaxation checks
            if not math.isfinite(k) or k < 0.0:
                raise ParameterError(f"kappa values must be >= 0 and finite, got {k!r}")
        object.__setattr__(self, "gamma", gammas)
        object.__setattr__(self, "kappa", kappas)
        if float(self.s_exponent) not in (0.5, 1.0):
            raise ParameterError(
                f"s_exponent must be 1/2 or 1 (the analytic cases), got {self.s_exponent!r}"
            )
        object.__setattr__(self, "s_exponent", float(self.s_exponent))
        e0 = float(self.eps0)
        if not math.isfinite(e0) or e0 <= 0.0:
            raise ParameterError(f"eps0 must be positive and finite, got {self.eps0!r}")
        object.__setattr__(self, "eps0", e0)

        dt = 1e-3 / max(gammas) if self.dt is None else float(self.dt)
        if not math.isfinite(dt) or dt <= 0.0:
            raise ParameterError(f"dt must be positive and finite, got {self.dt!r}")
        if dt * max(gammas) >= 0.1:
            raise ParameterError(
                f"dt*max(gamma) = {dt * max(gammas):g} breaks the stability guard (< 0.1)"
            )
        object.__setattr__(self, "dt", dt)

        steps = int(self.steps)
        if steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps!r}")
        object.__setattr__(self, "steps", steps)
        burn = int(round(20.0 / (min(gammas) * dt))) if self.burn_in is None else int(self.burn_in)
        if burn < 0:
            raise ParameterError(f"burn_in must be >= 0, got {self.burn_in!r}")
        object.__setattr__(self, "burn_in", burn)
        stride = int(self.record_stride)
        if stride < 1 or stride > steps:
            raise ParameterError(
                f"record_stride must be in [1, steps], got {self.record_stride!r}"
            )
        object.__setattr__(self, "record_stride", stride)

        if self.eps_init is not None:
            init = tuple(float(v) for v in self.eps_init)
            if len(init) != len(gammas):
                raise ParameterError(
                    f"eps_init length {len(init)} does not match {len(gammas)} levels"
                )
            for v in init:
                if not math.isfinite(v) or v <= 0.0:
                    raise ParameterError(f"eps_init values must be positive, got {v!r}")
            object.__setattr__(self, "eps_init", init)

    @property
    def n_levels(self) -> int:
        return len(self.gamma)

    @property
    def beta(self) -> tuple[float, ...]:
        return tuple(
            2.0 * g / (k * k) if k > 0.0 else math.inf
            for g, k in zip(self.gamma, self.kappa)
        )

    @classmethod
    def cascade(
        cls,
        n_levels: int,
        beta,
        steps: int,
        gamma1: float = 1.0,
        spacing: float = 10.0,
        **kwargs,
    ) -> "SdeParams":
        """Geometrically spaced time scales gamma_i = gamma1 * spacing^(i-1).

        ``beta`` (scalar or per-level) fixes kappa_i = sqrt(2 gamma_i / beta_i).
        """
        n = int(n_levels)
        if n < 1:
            raise ParameterError(f"n_levels must be >= 1, got {n_levels!r}")
        if float(spacing) <= 0.0 or float(gamma1) <= 0.0:
            raise ParameterError("gamma1 and spacing must be positive")
        betas = np.broadcast_to(np.asarray(beta, dtype=float), (n,))
        if np.any(betas <= 0.0) or not np.all(np.isfinite(betas)):
            raise ParameterError(f"beta values must be positive and finite, got {beta!r}")
        gammas = tuple(float(gamma1) * float(spacing) ** i for i in range(n))
        kappas = tuple(math.sqrt(2.0 * g / b) for g, b in zip(gammas, betas))
        return cls(gamma=gammas, kappa=kappas, steps=steps, **kwargs)


@dataclass(frozen=True, eq=False)
class SdeResult:
    """Recorded trajectories: values[i] is level i+1 sampled at ``times``."""

    params: SdeParams
    times: np.ndarray
    values: np.ndarray
    floor_hits: tuple[int, ...]


def _get_kernel():
    global _KERNEL
    if _KERNEL is None:
        from numba import njit

        @njit(cache=False)
        def kernel(state, gamma, kappa, half_s, eps0, dt, sqdt, noise, step0, burn_in, stride, out):
            n = state.shape[0]
            n_rec = out.shape[1]
            hits = np.zeros(n, dtype=np.int64)
            for k in range(noise.shape[0]):
                # all coefficients at time t: the parent passed down is the
                # pre-update value of the level above
                prev = eps0
                for i in range(n):
                    old = state[i]
                    if half_s:
                        diff = kappa[i] * np.sqrt(old * prev)
                    else:
                        diff = kappa[i] * old
                    e = old - gamma[i] * (old - prev) * dt + diff * sqdt * noise[k, i]
                    if e < 1e-12:
                        e = 2e-12 - e
                        hits[i] += 1
                    if e > 1e12:
                        return k, i, hits
                    state[i] = e
                    prev = old
                done = step0 + k + 1
                if done > burn_in:
                    d = done - burn_in
                    if d % stride == 0:
                        idx = d // stride - 1
                        if idx < n_rec:
                            for i in range(n):
                                out[i, idx] = state[i]
            return -1, -1, hits

        _KERNEL = kernel
    return _KERNEL


def simulate_hierarchy(params: SdeParams, rng=None) -> SdeResult:
    """Euler-Maruyama paths of all levels, driven top-down with eps_0 fixed.

    Deterministic given the seed.  Floor reflections are counted per level in
    the result; any level exceeding 1e12 aborts with a divergence error.
    """
    gen = _generator(rng)
    kernel = _get_kernel()
    n = params.n_levels
    gamma = np.asarray(params.gamma)
    kappa = np.asarray(params.kappa)
    state = np.array(params.eps_init if params.eps_init is not None else [params.eps0] * n)
    dt = params.dt
    total = params.burn_in + params.steps
    n_rec = params.steps // params.record_stride
    out = np.empty((n, n_rec))
    hits = np.zeros(n, dtype=np.int64)

    chunk = max(1, 2_000_000 // n)
    done = 0
    while done < total:
        m = min(chunk, total - done)
        noise = gen.standard_normal((m, n))
        k, lvl, chunk_hits = kernel(
            state, gamma, kappa, params.s_exponent == 0.5, params.eps0,
            dt, math.sqrt(dt), noise, done, params.burn_in, params.record_stride, out,
        )
        hits += chunk_hits
        if k >= 0:
            t = (done + k + 1) * dt
            raise DivergenceError(f"level {lvl + 1} exceeded 1e12 at t = {t:.6g}")
        done += m
    times = (params.burn_in + params.record_stride * np.arange(1, n_rec + 1)) * dt
    return SdeResult(params=params, times=times, values=out, floor_hits=tuple(int(h) for h in hits))


def stationary_check(trajectory, beta, model_class, eps_prev, gamma, dt) -> float:
    """KS statistic of a single-level trajectory against its stationary law.

    ``trajectory`` must come from a level whose parent was held fixed at
    ``eps_prev`` (for the top level the parent is eps0 by construction);
    ``gamma`` and ``dt`` are that level's rate and the sample spacing of the
    trajectory, used to subsample at ~3 decorrelation times.
    """
    traj = np.asarray(trajectory, dtype=float).reshape(-1)
    b = float(beta)
    g = float(gamma)
    step = float(dt)
    if b <= 0.0 or g <= 0.0 or step <= 0.0:
        raise ParameterError("beta, gamma and dt must all be positive")
    prev = float(eps_prev)
    if prev <= 0.0:
        raise ParameterError(f"eps_prev must be positive, got {eps_prev!r}")
    decorrelation = 3.0 / g
    if traj.size * step < 100.0 * decorrelation:
        raise InsufficientDataError(
            f"trajectory spans {traj.size * step:g} time units; "
            f"need >= {100.0 * decorrelation:g} (100 decorrelation times)"
        )
    spacing = max(1, int(round(decorrelation / step)))
    sub = traj[::spacing]
    if ModelClass.parse(model_class) is ModelClass.WISHART:
        return float(stats.kstest(sub, "gamma", args=(b, 0.0, prev / b)).statistic)
    return float(stats.kstest(sub, "invgamma", args=(b + 1.0, 0.0, b * prev)).statistic)


def save_trajectories(result: SdeResult, path) -> None:
    """CSV with columns t, eps1 ... epsN."""
    target = Path(path)
    n = result.values.shape[0]
    with target.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"eps{i + 1}" for i in range(n)])
        for j, t in enumerate(result.times):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in result.values[:, j]])
