"""Matrix-variate generalization of the variance hierarchy.

The scalar background generalizes to symmetric positive definite p x p
covariance matrices: each level of the hierarchy draws a covariance
conditioned on the previous one, with conditional mean equal to the previous
level, and observed returns are multivariate Gaussians with the innermost
covariance.  Projections u' Sigma u of the chain reproduce the scalar
hierarchy, which is what ties the matrix ensembles back to the scalar
density families in :mod:`htheory.distributions`.

Conditional laws, in mean-one parameterization with level shape beta:

* Wishart class: density proportional to
  ``|S|^(beta-(p+1)/2) exp(-beta tr(prev^-1 S))``.  Matching exponents to the
  standard Wishart ``|S|^((nu-p-1)/2) exp(-tr(V^-1 S)/2)`` gives degrees of
  freedom nu = 2 beta and scale V = prev / (2 beta); the conditional mean
  nu V = prev.  Normalizability requires 2 beta > p - 1.
* inverse-Wishart class: density proportional to
  ``|S|^-(beta+(p+1)/2) exp(-beta tr(prev S^-1))``.  Matching to the standard
  inverse-Wishart ``|S|^-((nu+p+1)/2) exp(-tr(Psi S^-1)/2)`` gives
  nu = 2 beta + p + 1 and Psi = 2 beta prev; the conditional mean
  Psi / (nu - p - 1) = prev for every beta > 0.

At p = 1 both reduce exactly to the scalar gamma / inverse-gamma
conditionals, which is the oracle the tests lean on.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .distributions import ModelClass
from .errors import DataError, DomainError, ParameterError

__all__ = [
    "ChainSpec",
    "CftCheck",
    "validate_covariance",
    "sample_wishart_step",
    "sample_inv_wishart_step",
    "sample_chain",
    "sample_returns",
    "sample_compound_returns",
    "synthetic_return_series",
    "rank1_det_identity",
    "verify_gamma_cft",
    "save_covariance",
    "load_covariance",
]

_SYMMETRY_TOL = 1e-12


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def validate_covariance(sigma) -> np.ndarray:
    """Check symmetry and positive definiteness; return a symmetrized copy."""
    a = np.asarray(sigma, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise DomainError(f"covariance must be a nonempty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("covariance entries must be finite")
    scale = max(1.0, float(np.abs(a).max()))
    if float(np.abs(a - a.T).max()) > _SYMMETRY_TOL * scale:
        raise DomainError("covariance must be symmetric to 1e-12")
    sym = 0.5 * (a + a.T)
    try:
        np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise DomainError("covariance must be positive definite") from None
    return sym


def _sym_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition; requires PD input."""
    vals, vecs = np.linalg.eigh(a)
    if float(vals[0]) <= 0.0:
        raise DomainError("matrix square root requires a positive definite matrix")
    return (vecs * np.sqrt(vals)) @ vecs.T


def _bartlett_batch(count: int, p: int, nu: float, gen: np.random.Generator) -> np.ndarray:
    """(count, p, p) lower-triangular factors A with A A' ~ Wishart(nu, I).

    Diagonal entries are chi variables with fractional degrees of freedom
    nu - i, drawn through gamma; below-diagonal entries are standard normal.
    """
    a = np.zeros((count, p, p))
    if p > 1:
        i, j = np.tril_indices(p, -1)
        a[:, i, j] = gen.standard_normal((count, i.size))
    df = nu - np.arange(p, dtype=float)
    diag = np.sqrt(2.0 * gen.gamma(df / 2.0, size=(count, p)))
    a[:, np.arange(p), np.arange(p)] = diag
    return a


def _check_beta(beta) -> float:
    b = float(beta)
    if not math.isfinite(b) or b <= 0.0:
        raise ParameterError(f"beta must be positive and finite, got {beta!r}")
    return b


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.swapaxes(-1, -2))


def _wishart_step_batch(sigmas: np.ndarray, b: float, gen: np.random.Generator) -> np.ndarray:
    """Wishart level applied to a (count, p, p) stack of parent covariances."""
    count, p = sigmas.shape[0], sigmas.shape[-1]
    if 2.0 * b <= p - 1:
        raise ParameterError(f"Wishart step needs 2*beta > p - 1 (got beta={b:g}, p={p})")
    scale_chol = np.linalg.cholesky(sigmas / (2.0 * b))
    factors = scale_chol @ _bartlett_batch(count, p, 2.0 * b, gen)
    return _symmetrize(factors @ factors.swapaxes(-1, -2))


def _inv_wishart_step_batch(sigmas: np.ndarray, b: float, gen: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart level applied to a (count, p, p) stack."""
    count, p = sigmas.shape[0], sigmas.shape[-1]
    nu = 2.0 * b + p + 1.0
    # Q Q' = (2 beta prev)^-1 with Q = L^-T / sqrt(2 beta), L = chol(prev).
    ell = np.linalg.cholesky(sigmas)
    q = np.linalg.inv(ell).swapaxes(-1, -2) / math.sqrt(2.0 * b)
    factors = q @ _bartlett_batch(count, p, nu, gen)
    inv_factors = np.linalg.inv(factors)
    return _symmetrize(inv_factors.swapaxes(-1, -2) @ inv_factors)


def sample_wishart_step(prev, beta, rng=None) -> np.ndarray:
    """One Wishart level: draw with conditional mean ``prev`` and shape beta.

    Standard-form parameters nu = 2 beta, scale prev / (2 beta); sampled by
    Bartlett decomposition so fractional degrees of freedom work.
    """
    sigma = validate_covariance(prev)
    b = _check_beta(beta)
    return _wishart_step_batch(sigma[None], b, _generator(rng))[0]


def sample_inv_wishart_step(prev, beta, rng=None) -> np.ndarray:
    """One inverse-Wishart level: conditional mean ``prev``, shape beta.

    Standard-form parameters nu = 2 beta + p + 1, scale matrix 2 beta prev;
    realized as the inverse of a Wishart draw with the inverted scale.
    """
    sigma = validate_covariance(prev)
    b = _check_beta(beta)
    return _inv_wishart_step_batch(sigma[None], b, _generator(rng))[0]


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """Hierarchy of conditional covariance levels grown from sigma0."""

    model_class: ModelClass
    beta: tuple[float, ...]
    sigma0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "model_class", ModelClass.parse(self.model_class))
        betas = tuple(float(b) for b in self.beta)
        if not betas:
            raise ParameterError("chain needs at least one level")
        for b in betas:
            if not math.isfinite(b) or b <= 0.0:
                raise ParameterError(f"beta values must be positive and finite, got {b!r}")
        object.__setattr__(self, "beta", betas)
        object.__setattr__(self, "sigma0", validate_covariance(self.sigma0))

    @property
    def n_levels(self) -> int:
        return len(self.beta)

    @property
    def dim(self) -> int:
        return self.sigma0.shape[0]


def _step_fn(model_class: ModelClass):
    if model_class is ModelClass.WISHART:
        return _wishart_step_batch
    return _inv_wishart_step_batch


def _chain_batch(spec: ChainSpec, count: int, gen: np.random.Generator) -> np.ndarray:
    step = _step_fn(spec.model_class)
    sigmas = np.broadcast_to(spec.sigma0, (count, spec.dim, spec.dim))
    for b in spec.beta:
        sigmas = step(sigmas, b, gen)
    return sigmas


def sample_chain(spec: ChainSpec, rng=None) -> np.ndarray:
    """Compose the conditional levels; marginal mean of the result is sigma0."""
    return _chain_batch(spec, 1, _generator(rng))[0]


def sample_returns(sigma, count: int, rng=None) -> np.ndarray:
    """(count, p) i.i.d. centered Gaussian rows with the given covariance."""
    cov = validate_covariance(sigma)
    n = int(count)
    if n < 0:
        raise ParameterError(f"count must be >= 0, got {count!r}")
    p = cov.shape[0]
    if n == 0:
        return np.empty((0, p))
    gen = _generator(rng)
    return gen.standard_normal((n, p)) @ np.linalg.cholesky(cov).T


def sample_compound_returns(spec: ChainSpec, count: int, rng=None) -> np.ndarray:
    """(count, p) returns, each row under a fresh covariance from the chain.

    Marginally each row follows the compound (heavy-tailed) law; rows are
    independent.
    """
    n = int(count)
    if n < 0:
        raise ParameterError(f"count must be >= 0, got {count!r}")
    gen = _generator(rng)
    p = spec.dim
    out = np.empty((n, p))
    done = 0
    while done < n:
        # chunked so the (block, p, p) stacks stay a few tens of MB
        block = min(n - done, max(64, 4_000_000 // (p * p)))
        chols = np.linalg.cholesky(_chain_batch(spec, block, gen))
        z = gen.standard_normal((block, p, 1))
        out[done : done + block] = (chols @ z)[..., 0]
        done += block
    return out


def _wishart_factor_refresh(parent: np.ndarray, b: float, gen: np.random.Generator) -> np.ndarray:
    """Factor F with F F' ~ Wishart level conditioned on parent parent'.

    For integer 2 beta the Gram construction F G G' F' / (2 beta) with G of
    shape (r, 2 beta) samples the conditional even when it is singular
    (2 beta <= p - 1), where the density form does not exist; projections
    u' Sigma u still follow the exact scalar gamma conditional.  Fractional
    2 beta falls back to Bartlett, which needs the full-rank regime.
    """
    p, r = parent.shape
    nu = 2.0 * b
    if nu.is_integer():
        g = gen.standard_normal((r, int(nu)))
        return parent @ g / math.sqrt(nu)
    if nu > p - 1:
        sigma = _symmetrize((parent @ parent.T)[None])
        return np.linalg.cholesky(sigma[0] / nu) @ _bartlett_batch(1, p, nu, gen)[0]
    raise ParameterError(
        f"singular Wishart level (2*beta <= p - 1) needs integer 2*beta, got beta={b:g}, p={p}"
    )


def _inv_wishart_factor_refresh(parent: np.ndarray, b: float, gen: np.random.Generator) -> np.ndarray:
    sigma = _symmetrize((parent @ parent.T)[None])
    return np.linalg.cholesky(_inv_wishart_step_batch(sigma, b, gen)[0])


def synthetic_return_series(
    spec: ChainSpec,
    length: int,
    rng=None,
    refresh_base: int = 100,
    refresh_ratio: int = 4,
) -> np.ndarray:
    """(length, p) return series over a piecewise-constant covariance hierarchy.

    The conditional ensembles define no time dynamics, so level i is simply
    redrawn every ``refresh_base * refresh_ratio**(N - i)`` steps (deeper
    levels refresh faster), together with every level below it.  Marginally
    each refresh recomposes the exact chain; the separated refresh periods
    are what a windowed variance estimator needs in order to resolve the
    background mixture from the series.

    State is carried as covariance factors, so Wishart levels with integer
    2 beta work even in the singular regime 2 beta <= p - 1 that the dense
    step functions must reject.
    """
    t_max = int(length)
    if t_max < 1:
        raise ParameterError(f"length must be >= 1, got {length!r}")
    base = int(refresh_base)
    ratio = int(refresh_ratio)
    if base < 1 or ratio < 1:
        raise ParameterError("refresh_base and refresh_ratio must be >= 1")
    gen = _generator(rng)
    if spec.model_class is ModelClass.WISHART:
        refresh = _wishart_factor_refresh
    else:
        refresh = _inv_wishart_factor_refresh
    n = spec.n_levels
    periods = [base * ratio ** (n - i) for i in range(1, n + 1)]

    root = np.linalg.cholesky(spec.sigma0)
    factors: list[np.ndarray] = [root] + [root] * n
    out = np.empty((t_max, spec.dim))
    for t in range(t_max):
        due = [i for i in range(1, n + 1) if t % periods[i - 1] == 0]
        for i in range(min(due), n + 1) if due else ():
            factors[i] = refresh(factors[i - 1], spec.beta[i - 1], gen)
        f = factors[n]
        out[t] = f @ gen.standard_normal(f.shape[1])
    return out


def rank1_det_identity(A, r) -> tuple[float, float]:
    """Evaluate both sides of det(1 + A^{1/2} r r' A^{1/2}) = 1 + r' A r.

    The left side goes through the symmetric square root and a dense
    determinant on purpose: it is the side worth testing.
    """
    a = validate_covariance(A)
    vec = np.asarray(r, dtype=float).reshape(-1)
    if vec.shape[0] != a.shape[0]:
        raise ParameterError(
            f"vector length {vec.shape[0]} does not match matrix dimension {a.shape[0]}"
        )
    q = _sym_sqrt(a) @ vec
    lhs = float(np.linalg.det(np.eye(a.shape[0]) + np.outer(q, q)))
    rhs = 1.0 + float(vec @ a @ vec)
    return lhs, rhs


class CftCheck(NamedTuple):
    matrix_side: float
    std_error: float
    scalar_side: float


def verify_gamma_cft(p: int, nu: float, A, r, samples: int = 100_000, rng=None) -> CftCheck:
    """Monte Carlo check that the matrix character integral is dimension-free.

    The integral of exp(-r' A^{1/2} X A^{1/2} r) against the normalized
    density |X|^(nu-(p+1)/2) exp(-tr X) / Gamma_p(nu) over positive definite
    p x p matrices equals the scalar expression (1 + r' A r)^-nu for every p.
    The weight is a standard Wishart with nu_std = 2 nu and scale 1/2, so
    importance sampling from it leaves only the exponential to average.
    """
    dim = int(p)
    if dim < 1:
        raise ParameterError(f"dimension must be >= 1, got {p!r}")
    nu_f = float(nu)
    if not nu_f > (dim + 1) / 2.0:
        raise ParameterError(
            f"character integral needs nu > (p+1)/2 (got nu={nu_f:g}, p={dim})"
        )
    n = int(samples)
    if n < 2:
        raise ParameterError(f"samples must be >= 2, got {samples!r}")
    a = validate_covariance(A)
    if a.shape[0] != dim:
        raise ParameterError(f"matrix dimension {a.shape[0]} does not match p={dim}")
    vec = np.asarray(r, dtype=float).reshape(-1)
    if vec.shape[0] != dim:
        raise ParameterError(f"vector length {vec.shape[0]} does not match p={dim}")

    gen = _generator(rng)
    q = _sym_sqrt(a) @ vec
    # X = F F' with F = bartlett(2 nu) / sqrt(2), hence q'Xq = |bartlett' q|^2 / 2.
    total = 0.0
    total_sq = 0.0
    left = n
    while left:
        block = min(left, 65536)
        factors = _bartlett_batch(block, dim, 2.0 * nu_f, gen)
        proj = np.einsum("kji,j->ki", factors, q)
        w = np.exp(-0.5 * np.einsum("ki,ki->k", proj, proj))
        total += float(w.sum())
        total_sq += float((w * w).sum())
        left -= block
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    std_error = math.sqrt(var / n)
    scalar = (1.0 + float(vec @ a @ vec)) ** (-nu_f)
    return CftCheck(matrix_side=mean, std_error=std_error, scalar_side=scalar)


# ---------------------------------------------------------------------------
# serialization


def save_covariance(sigma, path) -> None:
    """Write a covariance matrix to ``path`` (dense CSV, or JSON for .json)."""
    cov = validate_covariance(sigma)
    target = Path(path)
    if target.suffix.lower() == ".json":
        payload = {"dim": cov.shape[0], "entries": cov.tolist()}
        target.write_text(json.dumps(payload, indent=2) + "\n")
        return
    with target.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in cov:
            writer.writerow([repr(float(v)) for v in row])


def load_covariance(path) -> np.ndarray:
    """Read a covariance matrix written by :func:`save_covariance`."""
    source = Path(path)
    try:
        if source.suffix.lower() == ".json":
            payload = json.loads(source.read_text())
            if not isinstance(payload, dict) or "entries" not in payload:
                raise DataError(f"{source}: expected an object with an 'entries' field")
            entries = payload["entries"]
            if "dim" in payload and len(entries) != payload["dim"]:
                raise DataError(f"{source}: 'dim' does not match the entry rows")
        else:
            with source.open(newline="") as fh:
                entries = [[float(cell) for cell in row] for row in csv.reader(fh) if row]
    except (ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"{source}: {exc}") from None
    try:
        return validate_covariance(np.asarray(entries, dtype=float))
    except (ValueError, DomainError) as exc:
        # ragged rows or a matrix that fails the covariance invariants
        raise DataError(f"{source}: {exc}") from None
