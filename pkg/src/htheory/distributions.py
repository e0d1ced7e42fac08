"""Hierarchical variance-mixture distribution families.

A hierarchy of N multiplicative fluctuation levels turns a Gaussian signal
into a heavy-tailed compound: the background variance is a product
epsilon = eps0 * xi_1 * ... * xi_N of independent mean-one factors, and the
observed signal is x = sqrt(epsilon) * z with z standard normal.  Two
universality classes are implemented, named after their matrix
generalizations:

* Wishart class: each factor xi_j is gamma distributed with shape beta_j
  (and mean one).  Tails of the signal density are stretched-exponential.
* inverse-Wishart class: each factor is inverse-gamma, xi_j = beta_j / g
  with g ~ Gamma(beta_j + 1).  Signal tails are power laws.

Both background and signal densities are Meijer G-functions of the product
argument; they are evaluated through the contour machinery in
:mod:`htheory.special`.  The inverse-class background reuses the same
G^{N,0} kernel family through the argument-inversion identity (the density
of 1/epsilon is again a product of gamma factors), so only one kernel family
needs accuracy tuning.  For N = 1 both signal densities collapse to
closed forms (a modified Bessel function of the second kind, and a
Student-t-like power law) which serve as fast paths and as oracles for the
contour path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy import special as sp

from .errors import AccuracyError, DomainError, ParameterError
from .special import GKernelSpec, meijer_g_log

__all__ = [
    "ModelClass",
    "HModel",
    "DensityCurve",
    "TailAsymptote",
    "LognormalParams",
    "background_density",
    "background_log_density",
    "signal_density",
    "signal_log_density",
    "signal_density_quadrature",
    "density_at_zero",
    "background_moment",
    "signal_moment",
    "sample_background",
    "sample_signal",
    "lognormal_limit",
    "tail_asymptote",
    "tail_log_asymptote",
    "density_curve",
]

_LOG_2PI = math.log(2.0 * math.pi)


class ModelClass(str, Enum):
    """The two universality classes of the variance hierarchy."""

    WISHART = "wishart"
    INVERSE_WISHART = "inverse-wishart"

    @classmethod
    def parse(cls, text) -> "ModelClass":
        """Accepts the canonical names plus common spellings and shorthands."""
        if isinstance(text, ModelClass):
            return text
        key = str(text).strip().lower().replace("_", "-")
        aliases = {
            "wishart": cls.WISHART,
            "w": cls.WISHART,
            "gamma": cls.WISHART,
            "inverse-wishart": cls.INVERSE_WISHART,
            "inv-wishart": cls.INVERSE_WISHART,
            "iw": cls.INVERSE_WISHART,
            "inverse-gamma": cls.INVERSE_WISHART,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ParameterError(
                f"unknown model class {text!r}: expected one of "
                f"{sorted(set(aliases))}"
            ) from None


@dataclass(frozen=True)
class HModel:
    """A fitted (or postulated) hierarchy model.

    ``beta`` holds one positive shape parameter per level; ``eps0`` is the
    equilibrium variance, which is the background mean in both classes.
    """

    model_class: ModelClass
    beta: tuple[float, ...]
    eps0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "model_class", ModelClass(self.model_class))
        beta = tuple(float(b) for b in self.beta)
        if not beta:
            raise ParameterError("need at least one hierarchy level")
        if any(not (math.isfinite(b) and b > 0.0) for b in beta):
            raise ParameterError(f"shape parameters must be positive, got {beta}")
        object.__setattr__(self, "beta", beta)
        eps0 = float(self.eps0)
        if not (math.isfinite(eps0) and eps0 > 0.0):
            raise ParameterError(f"eps0 must be positive, got {self.eps0!r}")
        object.__setattr__(self, "eps0", eps0)

    @property
    def n_levels(self) -> int:
        return len(self.beta)

    @property
    def omega(self) -> float:
        """Product of the shape parameters; the natural argument scale."""
        return float(np.prod(self.beta))

    @classmethod
    def common(
        cls,
        model_class: ModelClass | str,
        n_levels: int,
        beta: float,
        eps0: float = 1.0,
    ) -> "HModel":
        """All levels share one shape parameter (how fits are parameterized)."""
        n = int(n_levels)
        if n < 1:
            raise ParameterError(f"n_levels must be >= 1, got {n_levels!r}")
        return cls(ModelClass.parse(model_class), (float(beta),) * n, eps0)


# ---------------------------------------------------------------------------
# log-density cores


def _bg_log_gamma_class(model: HModel, eps: float) -> float:
    # f(eps) = omega / (eps0 prod Gamma(beta_j)) * G^{N,0}(beta_j - 1 | omega eps / eps0)
    omega = model.omega
    spec = GKernelSpec(b_top=tuple(b - 1.0 for b in model.beta))
    pref = math.log(omega / model.eps0) - sum(math.lgamma(b) for b in model.beta)
    logg, _ = meijer_g_log(spec, omega * eps / model.eps0)
    return pref + logg


def _bg_log_inverse_class(model: HModel, eps: float) -> float:
    # 1/xi_j is Gamma(beta_j + 1)/beta_j, so eps0 omega / eps is a plain
    # product of gamma factors; the eps-space Jacobian is absorbed into the
    # kernel as a parameter shift of +2
    omega = model.omega
    spec = GKernelSpec(b_top=tuple(b + 2.0 for b in model.beta))
    pref = -math.log(model.eps0 * omega) - sum(math.lgamma(b + 1.0) for b in model.beta)
    logg, _ = meijer_g_log(spec, model.eps0 * omega / eps)
    return pref + logg


def background_log_density(model: HModel, eps: float) -> float:
    """ln f_N(eps) for the stationary background variance."""
    e = float(eps)
    if not (math.isfinite(e) and e > 0.0):
        raise DomainError(f"background argument must be positive, got {eps!r}")
    if model.model_class is ModelClass.WISHART:
        return _bg_log_gamma_class(model, e)
    return _bg_log_inverse_class(model, e)


def background_density(model: HModel, eps: float) -> float:
    """Stationary density f_N(eps) of the background variance."""
    return math.exp(background_log_density(model, eps))


def _signal_log_gamma_g(model: HModel, x: float) -> float:
    omega = model.omega
    spec = GKernelSpec(b_top=tuple(b - 0.5 for b in model.beta) + (0.0,))
    pref = (
        0.5 * math.log(omega)
        - 0.5 * math.log(2.0 * math.pi * model.eps0)
        - sum(math.lgamma(b) for b in model.beta)
    )
    logg, _ = meijer_g_log(spec, omega * x * x / (2.0 * model.eps0))
    return pref + logg


def _signal_log_inverse_g(model: HModel, x: float) -> float:
    omega = model.omega
    spec = GKernelSpec(b_top=(0.0,), a_top=tuple(-b - 0.5 for b in model.beta))
    pref = -0.5 * math.log(2.0 * math.pi * omega * model.eps0) - sum(
        math.lgamma(b + 1.0) for b in model.beta
    )
    logg, _ = meijer_g_log(spec, x * x / (2.0 * omega * model.eps0))
    return pref + logg


def _signal_log_bessel(model: HModel, x: float) -> float:
    # one gamma level: P(x) = 2 sqrt(beta / 2 pi eps0) / Gamma(beta)
    #                         * z^{(beta - 1/2)/2} K_{beta - 1/2}(2 sqrt(z)),
    # z = beta x^2 / (2 eps0); written with the scaled Bessel function so the
    # tail survives in log space
    (beta,) = model.beta
    z = beta * x * x / (2.0 * model.eps0)
    w = 2.0 * math.sqrt(z)
    pref = (
        math.log(2.0)
        + 0.5 * math.log(beta / (2.0 * math.pi * model.eps0))
        - math.lgamma(beta)
    )
    return pref + 0.5 * (beta - 0.5) * math.log(z) + math.log(sp.kve(beta - 0.5, w)) - w


def _signal_log_student(model: HModel, x: float) -> float:
    # one inverse-gamma level: a Student-t-like power law
    (beta,) = model.beta
    scale = 2.0 * beta * model.eps0
    pref = (
        math.lgamma(beta + 1.5)
        - math.lgamma(beta + 1.0)
        - 0.5 * math.log(math.pi * scale)
    )
    return pref - (beta + 1.5) * math.log1p(x * x / scale)


def density_at_zero(model: HModel) -> float:
    """P_N(0), the signal density at the origin.

    Equals E[(2 pi eps)^{-1/2}]; for the Wishart class this diverges when any
    shape parameter is <= 1/2 (the result is then math.inf: the density has
    an integrable singularity at the origin, not an error).
    """
    log_out = -0.5 * math.log(2.0 * math.pi * model.eps0)
    if model.model_class is ModelClass.WISHART:
        if min(model.beta) <= 0.5:
            return math.inf
        for b in model.beta:
            log_out += 0.5 * math.log(b) + math.lgamma(b - 0.5) - math.lgamma(b)
    else:
        for b in model.beta:
            log_out += math.lgamma(b + 1.5) - math.lgamma(b + 1.0) - 0.5 * math.log(b)
    return math.exp(log_out)


_SIGNAL_METHODS = ("auto", "gfunction", "closed", "quadrature")


def signal_log_density(model: HModel, x: float, method: str = "auto") -> float:
    """ln P_N(x) of the compound signal density.

    ``method`` selects the evaluation path: "closed" (N = 1 only),
    "gfunction" (contour integration, any N), "quadrature" (1-D mixing
    integral against the background density; cross-check tool, loses the
    deep tail) or "auto" (closed form when available, contour otherwise).
    """
    xf = float(x)
    if not math.isfinite(xf):
        raise DomainError(f"signal argument must be finite, got {x!r}")
    if method not in _SIGNAL_METHODS:
        raise ParameterError(f"unknown method {method!r}: expected {_SIGNAL_METHODS}")
    if method == "closed" and model.n_levels != 1:
        raise ParameterError("closed-form signal density exists only for one level")
    if method == "quadrature":
        q = signal_density_quadrature(model, xf)
        return math.log(q) if q > 0.0 else -math.inf
    if xf == 0.0:
        p0 = density_at_zero(model)
        return math.log(p0) if math.isfinite(p0) else math.inf

    use_closed = method == "closed" or (method == "auto" and model.n_levels == 1)
    if model.model_class is ModelClass.WISHART:
        if use_closed:
            return _signal_log_bessel(model, xf)
        return _signal_log_gamma_g(model, xf)
    if use_closed:
        return _signal_log_student(model, xf)
    return _signal_log_inverse_g(model, xf)


def signal_density(model: HModel, x: float, method: str = "auto") -> float:
    """Compound signal density P_N(x); symmetric in x."""
    logp = signal_log_density(model, x, method=method)
    if logp == math.inf:
        return math.inf
    return math.exp(logp) if logp > -745.0 else 0.0


def signal_density_quadrature(model: HModel, x: float) -> float:
    """P_N(x) by direct 1-D integration of the Gaussian mixture.

    Integrates phi(x; eps) f_N(eps) d eps in log-variance coordinates.  This
    is the independent slow path used to validate the contour evaluation; it
    is accurate at moderate x but underflows in the far tail.
    """
    xf = float(x)
    if not math.isfinite(xf):
        raise DomainError(f"signal argument must be finite, got {x!r}")
    loc, scale = lognormal_limit(model)
    width = 60.0 * max(scale, 0.5)
    u_x = math.log(xf * xf) if xf != 0.0 else loc
    lo = min(loc, u_x) - width
    hi = max(loc, u_x) + width
    if model.model_class is ModelClass.INVERSE_WISHART:
        # power-law upper tail decays only like exp(-(min beta + 1.5) u)
        hi += 60.0 / (min(min(model.beta), 1.0) + 1.0)

    def integrand(u):
        eps = math.exp(u)
        log_phi = -0.5 * (xf * xf) / eps - 0.5 * (_LOG_2PI + u)
        try:
            log_bg = background_log_density(model, eps)
        except AccuracyError:
            # Contour evaluation gives up only when |log f| is so large the
            # density has underflowed doubles; zero is then exact to 1e-300.
            return 0.0
        return math.exp(log_phi + log_bg + u)

    pts = sorted(p for p in (loc, u_x) if lo < p < hi)
    value, _ = integrate.quad(
        integrand, lo, hi, points=pts, limit=400, epsabs=1e-300, epsrel=1e-10
    )
    return value


# ---------------------------------------------------------------------------
# moments


def background_moment(model: HModel, order: int) -> float:
    """E[eps^n] of the background.

    Wishart-class moments are finite for every order; inverse-class moments
    diverge once order >= min(beta) + 1 and are reported as math.inf rather
    than raised, since fits may step through such parameter regions.
    """
    n = int(order)
    if n != order or n < 1:
        raise ParameterError(f"order must be a positive integer, got {order!r}")
    log_out = n * math.log(model.eps0)
    if model.model_class is ModelClass.WISHART:
        for b in model.beta:
            log_out += math.lgamma(b + n) - math.lgamma(b) - n * math.log(b)
        return math.exp(log_out)
    if n >= min(model.beta) + 1.0:
        return math.inf
    for b in model.beta:
        log_out += n * math.log(b) + math.lgamma(b + 1.0 - n) - math.lgamma(b + 1.0)
    return math.exp(log_out)


def signal_moment(model: HModel, order: int) -> float:
    """E[x^n] of the signal: zero for odd n, (n-1)!! E[eps^{n/2}] for even."""
    n = int(order)
    if n != order or n < 0:
        raise ParameterError(f"order must be a non-negative integer, got {order!r}")
    if n % 2 == 1:
        return 0.0
    if n == 0:
        return 1.0
    k = n // 2
    double_factorial = float(math.prod(range(1, n, 2)))
    return double_factorial * background_moment(model, k)


# ---------------------------------------------------------------------------
# sampling


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_background(model: HModel, count: int, rng=None) -> np.ndarray:
    """Exact i.i.d. draws of the background variance (product of levels)."""
    n = int(count)
    if n < 1:
        raise ParameterError(f"count must be >= 1, got {count!r}")
    gen = _generator(rng)
    out = np.full(n, model.eps0)
    for b in model.beta:
        if model.model_class is ModelClass.WISHART:
            out *= gen.gamma(b, 1.0 / b, size=n)
        else:
            out *= b / gen.gamma(b + 1.0, 1.0, size=n)
    return out


def sample_signal(model: HModel, count: int, rng=None) -> np.ndarray:
    """Exact i.i.d. draws of the compound signal x = sqrt(eps) * z."""
    gen = _generator(rng)
    eps = sample_background(model, count, gen)
    return np.sqrt(eps) * gen.standard_normal(eps.shape)


# ---------------------------------------------------------------------------
# limits and asymptotics


class LognormalParams(NamedTuple):
    log_location: float
    log_scale: float


def lognormal_limit(model: HModel) -> LognormalParams:
    """Matched log-moment lognormal approximation of the background.

    ln(eps) is a sum of independent level contributions, so for deep
    hierarchies the background tends to a lognormal; the returned location
    and scale are the exact mean and standard deviation of ln(eps).
    """
    loc = math.log(model.eps0)
    var = 0.0
    for b in model.beta:
        if model.model_class is ModelClass.WISHART:
            loc += sp.digamma(b) - math.log(b)
            var += sp.polygamma(1, b)
        else:
            loc += math.log(b) - sp.digamma(b + 1.0)
            var += sp.polygamma(1, b + 1.0)
    return LognormalParams(float(loc), float(math.sqrt(var)))


@dataclass(frozen=True)
class TailAsymptote:
    """Leading form of ln P_N(x) for large |x|.

    ln P(x) ~ log_prefactor + power * ln|x| - decay_coeff * |x|^decay_power.
    Wishart-class tails are stretched exponentials (decay_power = 2/(N+1));
    inverse-class tails are pure power laws (decay_coeff = 0).  The
    log_prefactor of an inverse-class model is only available when the
    smallest shape parameter is unique: a repeated minimum turns the leading
    pole into a higher-order one with logarithmic corrections, in which case
    only the exponent is quoted and log_prefactor is None.
    """

    power: float
    decay_power: float
    decay_coeff: float
    log_prefactor: float | None

    def evaluate_log(self, x: float) -> float:
        if self.log_prefactor is None:
            raise ParameterError(
                "tail prefactor undefined (repeated minimal shape parameter); "
                "only the exponent is available"
            )
        ax = abs(float(x))
        if ax <= 0.0:
            raise DomainError("tail asymptote needs x != 0")
        out = self.log_prefactor + self.power * math.log(ax)
        if self.decay_coeff != 0.0:
            out -= self.decay_coeff * ax**self.decay_power
        return out


def tail_asymptote(model: HModel) -> TailAsymptote:
    """Large-|x| asymptote of the signal density."""
    if model.model_class is ModelClass.WISHART:
        m = model.n_levels + 1
        zeta = model.omega / (2.0 * model.eps0)
        theta = (sum(model.beta) - model.n_levels) / m
        log_pref = (
            0.5 * math.log(model.omega)
            - 0.5 * math.log(2.0 * math.pi * model.eps0)
            - sum(math.lgamma(b) for b in model.beta)
            + 0.5 * (m - 1) * _LOG_2PI
            - 0.5 * math.log(m)
            + theta * math.log(zeta)
        )
        return TailAsymptote(
            power=2.0 * theta,
            decay_power=2.0 / m,
            decay_coeff=m * zeta ** (1.0 / m),
            log_prefactor=log_pref,
        )

    b_min = min(model.beta)
    s_star = b_min + 1.5
    if model.beta.count(b_min) == 1:
        log_pref = (
            -0.5 * math.log(2.0 * math.pi * model.omega * model.eps0)
            - sum(math.lgamma(b + 1.0) for b in model.beta)
            + math.lgamma(s_star)
            + sum(math.lgamma(b - b_min) for b in model.beta if b != b_min)
            + s_star * math.log(2.0 * model.omega * model.eps0)
        )
    else:
        log_pref = None
    return TailAsymptote(
        power=-2.0 * s_star, decay_power=0.0, decay_coeff=0.0, log_prefactor=log_pref
    )


def tail_log_asymptote(model: HModel, x: float) -> float:
    """Evaluate the leading tail form of ln P_N at x."""
    return tail_asymptote(model).evaluate_log(x)


# ---------------------------------------------------------------------------
# tabulated curves


@dataclass(frozen=True, eq=False)
class DensityCurve:
    """A density sampled on a grid, kept in both linear and log scale."""

    grid: np.ndarray
    values: np.ndarray
    log_values: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "density"])
            for x, v in zip(self.grid, self.values):
                writer.writerow([repr(float(x)), repr(float(v))])

    def to_json(self, path) -> None:
        payload = {
            "grid": [float(v) for v in self.grid],
            "values": [float(v) for v in self.values],
            "log_values": [float(v) for v in self.log_values],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")


def density_curve(
    model: HModel,
    grid,
    which: str = "signal",
    method: str = "auto",
) -> DensityCurve:
    """Tabulate the signal or background density on a grid of points."""
    pts = np.asarray(grid, dtype=float)
    if pts.ndim != 1 or pts.size == 0:
        raise ParameterError("grid must be a non-empty 1-D array")
    if not np.all(np.isfinite(pts)):
        raise DomainError("grid points must be finite")
    if which == "signal":
        logs = np.array([signal_log_density(model, x, method=method) for x in pts])
    elif which == "background":
        if np.any(pts <= 0.0):
            raise DomainError("background grid points must be positive")
        logs = np.array([background_log_density(model, e) for e in pts])
    else:
        raise ParameterError(f"which must be 'signal' or 'background', got {which!r}")
    with np.errstate(over="ignore"):
        values = np.where(logs > -745.0, np.exp(logs), 0.0)
    return DensityCurve(grid=pts, values=values, log_values=logs)
