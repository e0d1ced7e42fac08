"""Scalar Meijer G-function evaluation by Mellin-Barnes contour integration.

Only the all-numerator index patterns that arise in hierarchical variance
models are supported: G^{m,0}_{0,m}, G^{0,n}_{n,0} and G^{1,n}_{n,1}.  For
these the Mellin transform of the function is a pure product of gamma
factors,

    M[G; s] = prod_j Gamma(s + b_j) * prod_j Gamma(1 - s - a_j),

every factor of which decays like exp(-pi/2 |Im s|) along a vertical line, so
the inverse transform

    G(x) = (1 / 2 pi i) int_{c - i inf}^{c + i inf} M[G; s] x^{-s} ds

converges geometrically and a plain trapezoidal sum is spectrally accurate.
The evaluator places the contour at the saddle point of the real part of the
log-integrand (the unique root of a strictly increasing digamma sum), which
keeps the quadrature scale matched to the answer scale: values twenty orders
of magnitude below the density peak are still resolved at close to machine
relative precision, and arguments whose result underflows entirely remain
available through :func:`meijer_g_log`.

Poles of the numerator gamma factors sit in vertical columns at s = -b_j - k
(to the left) and s = 1 - a_j + k (to the right); the contour must run
strictly between the two families, which is exactly the admissibility window
checked by :class:`GKernelSpec`.

Residue summation is deliberately not used anywhere: it breaks down when
parameters coincide (repeated b_j give higher-order poles), and coinciding
parameters are the common case here because hierarchies are routinely fitted
with one shared shape parameter per level.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import special as sp
from scipy.optimize import brentq

from .errors import AccuracyError, DomainError, ParameterError

__all__ = [
    "GKernelSpec",
    "ContourParams",
    "log_gamma_complex",
    "meijer_g",
    "meijer_g_log",
    "inverted_spec",
    "power_shifted_spec",
]

_LOG_2PI = math.log(2.0 * math.pi)
# Contour points are evaluated in blocks of this size until the integrand has
# decayed below _REL_CUTOFF relative to its peak at t = 0.
_BLOCK = 256
_REL_CUTOFF = 1e-17
# Minimum distance kept between an automatically chosen contour and a pole
# column; a caller-supplied abscissa may sit closer at their own cost.
_WALL_MIN = 1e-3
_MAX_POINTS = 5_000_000
_MAX_REFINEMENTS = 6
_EPS = 2.220446049250313e-16


def log_gamma_complex(z: complex) -> complex:
    """Principal-branch log Gamma(z) for complex z.

    Relative accuracy is ~1e-14 for |z| up to 1e6 (scipy's loggamma).  The
    poles at z = 0, -1, -2, ... are rejected as domain errors.
    """
    zc = complex(z)
    if zc.imag == 0.0 and zc.real <= 0.0 and zc.real == round(zc.real):
        raise DomainError(f"log-gamma pole at z = {zc.real:g}")
    return complex(sp.loggamma(zc))


@dataclass(frozen=True)
class GKernelSpec:
    """Index lists defining a scalar Meijer G-function G^{m,n}_{p,q}.

    ``b_top`` holds the m parameters entering as Gamma(s + b_j), ``a_top``
    the n parameters entering as Gamma(1 - s - a_j).  Denominator lists must
    be empty and patterns with m >= 2 and n >= 1 are rejected: only
    G^{m,0}_{0,m}, G^{0,n}_{n,0} and G^{1,n}_{n,1} occur in the hierarchy
    densities, and the evaluator is tuned for exactly those.
    """

    b_top: tuple[float, ...]
    a_top: tuple[float, ...] = ()
    b_bottom: tuple[float, ...] = ()
    a_bottom: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("b_top", "a_top", "b_bottom", "a_bottom"):
            vals = tuple(float(v) for v in getattr(self, name))
            if any(not math.isfinite(v) for v in vals):
                raise ParameterError(f"{name} entries must be finite")
            object.__setattr__(self, name, vals)
        if self.b_bottom or self.a_bottom:
            raise ParameterError(
                "denominator gamma factors are not supported "
                "(only all-numerator index patterns occur here)"
            )
        if self.m + self.n == 0:
            raise ParameterError("empty kernel: need at least one gamma factor")
        if self.m >= 2 and self.n >= 1:
            raise ParameterError(
                f"unsupported index pattern G^{{{self.m},{self.n}}}: "
                "supported patterns are (m,0), (0,n) and (1,n)"
            )
        if self.left_edge >= self.right_edge:
            raise ParameterError(
                f"no admissible contour: pole columns overlap "
                f"(left edge {self.left_edge:g} >= right edge {self.right_edge:g})"
            )

    @property
    def m(self) -> int:
        return len(self.b_top)

    @property
    def n(self) -> int:
        return len(self.a_top)

    @property
    def p(self) -> int:
        return len(self.a_top) + len(self.a_bottom)

    @property
    def q(self) -> int:
        return len(self.b_top) + len(self.b_bottom)

    @property
    def left_edge(self) -> float:
        """Supremum of the left pole columns (contour must stay right of it)."""
        return -min(self.b_top) if self.b_top else -math.inf

    @property
    def right_edge(self) -> float:
        """Infimum of the right pole columns (contour must stay left of it)."""
        return min(1.0 - a for a in self.a_top) if self.a_top else math.inf


@dataclass(frozen=True)
class ContourParams:
    """Numerical knobs for the Mellin-Barnes quadrature.

    ``c`` is the contour abscissa Re(s); None selects the saddle point of the
    log-integrand automatically (recommended: it keeps relative accuracy in
    the tails).  ``half_width`` caps |Im s|; None grows it adaptively, an
    explicit value raises :class:`AccuracyError` when the integrand has not
    decayed by then.  ``step`` is the trapezoid spacing before refinement and
    ``tol`` the target absolute error (relative above magnitude one).
    """

    c: float | None = None
    half_width: float | None = None
    step: float = 0.05
    tol: float = 1e-10

    def __post_init__(self):
        if self.c is not None and not math.isfinite(self.c):
            raise ParameterError("contour abscissa must be finite")
        if self.half_width is not None and self.half_width <= 0:
            raise ParameterError("half_width must be positive")
        if not 0 < self.step:
            raise ParameterError("step must be positive")
        if not 0 < self.tol:
            raise ParameterError("tol must be positive")


_DEFAULT_CONTOUR = ContourParams()


def inverted_spec(spec: GKernelSpec) -> GKernelSpec:
    """Kernel of the argument-inversion identity: G_spec(1/x) = G_inv(x).

    Upper and lower index roles swap with parameters reflected through 1/2:
    new b = 1 - a, new a = 1 - b.  Mellin calculus: substituting u = 1/x in
    the transform sends s to -s, turning Gamma(1 - s - a) into
    Gamma(s + (1 - a)).
    """
    return GKernelSpec(
        b_top=tuple(1.0 - a for a in spec.a_top),
        a_top=tuple(1.0 - b for b in spec.b_top),
    )


def power_shifted_spec(spec: GKernelSpec, sigma: float) -> GKernelSpec:
    """Kernel of the power-absorption identity: x^sigma G_spec(x) = G_shift(x)."""
    s = float(sigma)
    return GKernelSpec(
        b_top=tuple(b + s for b in spec.b_top),
        a_top=tuple(a + s for a in spec.a_top),
    )


def _phi(spec: GKernelSpec, c: float) -> float:
    """d/dc of the real log-integrand at t = 0, excluding the -ln x term."""
    out = 0.0
    for b in spec.b_top:
        out += sp.digamma(c + b)
    for a in spec.a_top:
        out -= sp.digamma(1.0 - c - a)
    return float(out)


def _phi_prime(spec: GKernelSpec, c: float) -> float:
    """Second t-derivative scale of the log-integrand; always positive."""
    out = 0.0
    for b in spec.b_top:
        out += sp.polygamma(1, c + b)
    for a in spec.a_top:
        out += sp.polygamma(1, 1.0 - c - a)
    return float(out)


def _choose_abscissa(spec: GKernelSpec, lnx: float) -> float:
    """Saddle point of the log-integrand, clipped into the admissible strip.

    _phi is strictly increasing from -inf at the left edge to +inf at the
    right edge (or as c -> +inf), so _phi(c) = ln x has exactly one root for
    every positive argument.
    """
    left, right = spec.left_edge, spec.right_edge

    if math.isfinite(left) and math.isfinite(right):
        lo, hi = left + _WALL_MIN, right - _WALL_MIN
        if _phi(spec, lo) >= lnx:
            return lo
        if _phi(spec, hi) <= lnx:
            return hi
        return float(brentq(lambda c: _phi(spec, c) - lnx, lo, hi, xtol=1e-9))

    # Unbounded side: solve in u = ln|c - edge| so huge saddles stay
    # bracketable.  u_hi = 708 keeps exp(u) a finite double; arguments whose
    # saddle lies beyond that have log-values at the edge of double range.
    u_lo, u_hi = math.log(_WALL_MIN), 708.0

    if math.isfinite(left):
        f = lambda u: _phi(spec, left + math.exp(u)) - lnx
        if f(u_lo) >= 0.0:
            return left + _WALL_MIN
        if f(u_hi) <= 0.0:
            raise DomainError(
                f"argument exp({lnx:g}) too extreme for contour placement"
            )
        return left + math.exp(brentq(f, u_lo, u_hi, xtol=1e-10))

    # n-only: mirror search in u = ln(right - c).
    f = lambda u: _phi(spec, right - math.exp(u)) - lnx
    if f(u_lo) <= 0.0:
        return right - _WALL_MIN
    if f(u_hi) >= 0.0:
        raise DomainError(
            f"argument exp({lnx:g}) too extreme for contour placement"
        )
    return right - math.exp(brentq(f, u_lo, u_hi, xtol=1e-10))


def _log_integrand(spec: GKernelSpec, c: float, t: np.ndarray, lnx: float) -> np.ndarray:
    s = c + 1j * t
    g = -s * lnx
    # Repeated parameters (the common-beta case) collapse to one loggamma call.
    for b, count in Counter(spec.b_top).items():
        g = g + count * sp.loggamma(s + b)
    for a, count in Counter(spec.a_top).items():
        g = g + count * sp.loggamma(1.0 - s - a)
    return g


def _half_line_sum(
    spec: GKernelSpec,
    c: float,
    lnx: float,
    log_peak: float,
    t_start: float,
    step: float,
    t_cap: float,
) -> tuple[float, float, float]:
    """Sum of Re exp(g(t) - log_peak) over t = t_start, t_start + step, ...

    Extends in blocks until the integrand magnitude falls below _REL_CUTOFF
    relative to the peak; returns (sum, tail-sum estimate, magnitude sum).
    The magnitude sum feeds the roundoff term of the error estimate: when the
    oscillatory integrand cancels, accumulated rounding error scales with the
    unsigned mass rather than the signed result.  Raises AccuracyError when
    t_cap arrives first.
    """
    total = 0.0
    total_abs = 0.0
    k0 = 0
    while True:
        t = t_start + step * (k0 + np.arange(_BLOCK, dtype=float))
        capped = bool(t[-1] > t_cap)
        if capped:
            t = t[t <= t_cap]
        if t.size:
            g = _log_integrand(spec, c, t, lnx) - log_peak
            # Re g <= 0 in exact arithmetic (the peak sits at t = 0); positive
            # excursions are loggamma roundoff at huge |g|.  Clip so they stay
            # finite: still far above _REL_CUTOFF, so the cap check fires.
            np.minimum(g.real, 60.0, out=g.real)
            vals = np.exp(g)
            total += float(vals.real.sum())
            mags = np.abs(vals)
            total_abs += float(mags.sum())
            if float(mags.max()) < _REL_CUTOFF:
                # Geometric tail estimate from the last two points.
                last = float(mags[-1])
                if mags.size >= 2 and mags[-2] > mags[-1] > 0:
                    ratio = float(mags[-2] / mags[-1])
                    tail = last / (ratio - 1.0) if ratio > 1.001 else last * 1e3
                else:
                    tail = last * 1e3
                return total, tail, total_abs
        if capped:
            raise AccuracyError(
                f"contour integrand not decayed below cutoff within half_width {t_cap:g}"
            )
        k0 += _BLOCK
        if k0 > _MAX_POINTS:
            raise AccuracyError("contour quadrature exceeded the point budget")


def _converged(err_mantissa: float, integral: float, log_scale: float, tol: float) -> bool:
    """tol as an absolute target in final units, relative fallback otherwise."""
    if err_mantissa <= tol * abs(integral):
        return True
    if err_mantissa <= 0.0:
        return True
    log_abs_err = math.log(err_mantissa) + log_scale
    return log_abs_err <= math.log(tol)


def _contour_core(
    spec: GKernelSpec, x: float, contour: ContourParams
) -> tuple[float, float, float]:
    """Shared engine: returns (mantissa integral, log scale, mantissa error).

    The full-line trapezoid value of the inverse Mellin transform is
    mantissa * exp(log scale) where log scale folds in the 1/(2 pi).
    """
    xf = float(x)
    if not math.isfinite(xf) or xf <= 0.0:
        raise DomainError(f"meijer_g argument must be positive and finite, got {x!r}")
    lnx = math.log(xf)

    if contour.c is not None:
        c = float(contour.c)
        if not (spec.left_edge < c < spec.right_edge):
            raise ParameterError(
                f"contour abscissa {c:g} outside admissible strip "
                f"({spec.left_edge:g}, {spec.right_edge:g})"
            )
    else:
        c = _choose_abscissa(spec, lnx)

    wall = min(c - spec.left_edge, spec.right_edge - c)
    sigma_t = 1.0 / math.sqrt(_phi_prime(spec, c))
    # The user step is calibrated for order-one integrand widths; extreme
    # arguments push the saddle to huge c where the width grows like
    # sqrt(c), so scale the step with the width to keep the point count
    # bounded (aliasing error stays ~exp(-2 pi^2 (sigma/h)^2), negligible
    # at twenty points per width).
    h = contour.step * max(1.0, sigma_t)
    if math.isfinite(wall):
        # Trapezoid error ~ exp(-2 pi wall / h): keep six steps of margin.
        h = min(h, wall / 6.0)

    if contour.half_width is not None:
        t_cap = contour.half_width
    else:
        t_cap = max(200.0, 40.0 * sigma_t)

    log_peak = float(_log_integrand(spec, c, np.zeros(1), lnx)[0].real)
    log_scale = log_peak - _LOG_2PI
    # Rounding noise per quadrature point: the log-integrand is assembled
    # from terms of magnitude ~|gamma sum| and ~|s ln x| that mostly cancel,
    # so each exp() carries a relative error of eps times those magnitudes;
    # the extra 32 covers accumulation across the (pairwise) block sums.
    noise = _EPS * (32.0 + abs(log_peak + c * lnx) + abs(c * lnx))

    try:
        s_plus, tail, s_abs = _half_line_sum(spec, c, lnx, log_peak, h, h, t_cap)
    except AccuracyError as exc:
        raise AccuracyError(str(exc), partial=None) from None
    integral = h * (1.0 + 2.0 * s_plus)  # t = 0 contributes mantissa exactly 1
    unsigned = h * (1.0 + 2.0 * s_abs)
    tail_m = 2.0 * h * tail

    for _ in range(_MAX_REFINEMENTS):
        try:
            mid, tail_mid, mid_abs = _half_line_sum(
                spec, c, lnx, log_peak, h / 2.0, h, t_cap
            )
        except AccuracyError as exc:
            value = integral * _safe_exp(log_scale)
            raise AccuracyError(str(exc), partial=(value, abs(value))) from None
        refined = 0.5 * integral + h * mid
        err = abs(refined - integral)
        unsigned = 0.5 * unsigned + h * mid_abs
        tail_m = 0.5 * tail_m + h * tail_mid
        integral = refined
        h *= 0.5
        if _converged(err + tail_m, integral, log_scale, contour.tol):
            return integral, log_scale, err + tail_m + noise * unsigned

    value = integral * _safe_exp(log_scale)
    raise AccuracyError(
        "quadrature did not meet tolerance under step refinement",
        partial=(value, (err + tail_m + noise * unsigned) * _safe_exp(log_scale)),
    )


def _safe_exp(logv: float) -> float:
    if logv > 709.0:
        return math.inf
    if logv < -745.0:
        return 0.0
    return math.exp(logv)


def meijer_g(
    spec: GKernelSpec, x: float, contour: ContourParams = _DEFAULT_CONTOUR
) -> tuple[float, float]:
    """Evaluate G(x) along a vertical Mellin-Barnes contour.

    Returns (value, absolute error estimate).  Values whose magnitude falls
    below ~1e-300 underflow to 0.0 with a zero error estimate; use
    :func:`meijer_g_log` when the log-magnitude itself is needed.
    """
    mantissa, log_scale, m_err = _contour_core(spec, x, contour)
    value = mantissa * _safe_exp(log_scale)
    error = m_err * _safe_exp(log_scale)
    return value, error


def meijer_g_log(
    spec: GKernelSpec, x: float, contour: ContourParams = _DEFAULT_CONTOUR
) -> tuple[float, float]:
    """log G(x) with a relative error estimate; G must come out positive.

    This is the deep-tail companion of :func:`meijer_g`: the contour sum is
    carried at the scale of its own peak, so results far below the smallest
    representable double stay exact in log space.
    """
    mantissa, log_scale, m_err = _contour_core(spec, x, contour)
    if mantissa <= 0.0:
        raise AccuracyError(
            f"contour sum lost positivity at x = {x:g} (cancellation); "
            "supply a contour closer to the saddle"
        )
    return log_scale + math.log(mantissa), m_err / mantissa
