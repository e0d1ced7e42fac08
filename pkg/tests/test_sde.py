"""Hierarchy-SDE checks: exact relaxation, stationary laws, invariances.

Oracles: the closed-form solution of the noise-free linear cascade, and the
scipy gamma / inverse-gamma CDFs for the stationary conditionals (shape
beta = 2 gamma / kappa^2, and beta + 1 with scale beta * eps_prev for the
s = 1 case).
"""

import math

import numpy as np
import pytest

from htheory import DivergenceError, InsufficientDataError, ParameterError
from htheory.sde import SdeParams, simulate_hierarchy, save_trajectories, stationary_check


def test_noise_free_relaxation_matches_linear_cascade():
    # kappa = 0: level 1 relaxes as eps0 + A e^{-g1 t}; level 2 follows
    # eps0 + A g2/(g2-g1) (e^{-g1 t} - e^{-g2 t})
    amp = 0.002
    params = SdeParams(gamma=(1.0, 2.0), kappa=(0.0, 0.0), steps=10_000, dt=1e-4,
                       burn_in=0, eps_init=(1.0 + amp, 1.0))
    res = simulate_hierarchy(params, 0)
    t = res.times
    exact1 = 1.0 + amp * np.exp(-t)
    exact2 = 1.0 + amp * 2.0 * (np.exp(-t) - np.exp(-2.0 * t))
    assert np.abs(res.values[0] - exact1).max() < 1e-6
    assert np.abs(res.values[1] - exact2).max() < 1e-6


def test_stationary_gamma_conditional():
    # s = 1/2, beta = 2: Gamma(2, eps0/2) marginal, time-average near eps0
    params = SdeParams(gamma=(1.0,), kappa=(1.0,), steps=60_000_000, dt=5e-3,
                       record_stride=600)
    res = simulate_hierarchy(params, 1)
    ks = stationary_check(res.values[0], 2.0, "wishart", 1.0, gamma=1.0, dt=3.0)
    assert ks < 0.01
    assert abs(res.values[0].mean() - 1.0) < 0.01


def test_stationary_inverse_gamma_conditional():
    params = SdeParams(gamma=(1.0,), kappa=(1.0,), steps=60_000_000, dt=5e-3,
                       record_stride=600, s_exponent=1.0)
    res = simulate_hierarchy(params, 2)
    ks = stationary_check(res.values[0], 2.0, "inverse-wishart", 1.0, gamma=1.0, dt=3.0)
    assert ks < 0.01
    assert abs(res.values[0].mean() - 1.0) < 0.01


def test_beta_sufficiency_across_parameterizations():
    # equal beta = 2 gamma / kappa^2 with different (gamma, kappa) gives the
    # same stationary marginal
    a = SdeParams(gamma=(1.0,), kappa=(1.0,), steps=36_000_000, dt=5e-3,
                  record_stride=600)
    b = SdeParams(gamma=(4.0,), kappa=(2.0,), steps=36_000_000, dt=1.25e-3,
                  record_stride=600)
    assert a.beta == b.beta == (2.0,)
    xa = simulate_hierarchy(a, 3).values[0]
    xb = simulate_hierarchy(b, 4).values[0]
    from scipy import stats

    assert stats.ks_2samp(xa, xb).statistic < 0.015


def test_scale_equivariance_is_exact():
    # eps0 -> 2 eps0 rescales every float operation by a power of two, so the
    # paths match bitwise as long as the floor never triggers
    base = dict(gamma=(0.5, 5.0), kappa=(0.2, 0.7), steps=100_000, dt=1e-3,
                record_stride=10)
    r1 = simulate_hierarchy(SdeParams(eps0=1.0, **base), 7)
    r2 = simulate_hierarchy(SdeParams(eps0=2.0, **base), 7)
    assert r1.floor_hits == (0, 0) and r2.floor_hits == (0, 0)
    assert np.array_equal(2.0 * r1.values, r2.values)


def test_divergence_names_the_level():
    params = SdeParams(gamma=(0.1,), kappa=(10.0,), steps=10_000, dt=0.05,
                       s_exponent=1.0, burn_in=0)
    with pytest.raises(DivergenceError, match="level 1"):
        simulate_hierarchy(params, 0)


def test_floor_reflections_are_counted():
    # beta = 2 dips to zero often enough under Euler to log reflections
    params = SdeParams(gamma=(1.0,), kappa=(1.0,), steps=4_000_000, dt=5e-3,
                       record_stride=100)
    res = simulate_hierarchy(params, 11)
    assert res.floor_hits[0] > 0
    assert res.values.min() >= 1e-12


def test_simulation_determinism():
    params = SdeParams(gamma=(1.0, 10.0), kappa=(0.5, 0.5), steps=50_000)
    a = simulate_hierarchy(params, 42)
    b = simulate_hierarchy(params, 42)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.times, b.times)


def test_cascade_constructor():
    p = SdeParams.cascade(3, 6.0, steps=1000)
    assert p.gamma == (1.0, 10.0, 100.0)
    assert p.beta == pytest.approx((6.0, 6.0, 6.0))
    assert p.kappa[1] == pytest.approx(math.sqrt(20.0 / 6.0))
    assert p.dt == pytest.approx(1e-5)  # 1e-3 / max gamma
    assert p.burn_in == int(round(20.0 / (1.0 * p.dt)))
    q = SdeParams.cascade(2, (4.0, 9.0), steps=10, spacing=5.0, gamma1=2.0)
    assert q.gamma == (2.0, 10.0) and q.beta == pytest.approx((4.0, 9.0))


def test_parameter_validation():
    with pytest.raises(ParameterError):
        SdeParams(gamma=(), kappa=(), steps=10)
    with pytest.raises(ParameterError):
        SdeParams(gamma=(1.0,), kappa=(1.0, 2.0), steps=10)
    with pytest.raises(ParameterError):
        SdeParams(gamma=(1.0,), kappa=(-1.0,), steps=10)
    with pytest.raises(ParameterError):
        SdeParams(gamma=(1.0,), kappa=(1.0,), steps=10, s_exponent=0.7)
    with pytest.raises(ParameterError):
        SdeParams(gamma=(1.0,), kappa=(1.0,), steps=10, dt=0.2)  # guard
    with pytest.raises(ParameterError):
        SdeParams(gamma=(1.0,), kappa=(1.0,), steps=10, record_stride=11)
    with pytest.raises(ParameterError):
        SdeParams(gamma=(1.0,), kappa=(1.0,), steps=10, eps_init=(1.0, 1.0))
    with pytest.raises(ParameterError):
        SdeParams.cascade(0, 2.0, steps=10)


def test_stationary_check_requires_enough_data():
    traj = np.ones(99)
    with pytest.raises(InsufficientDataError):
        stationary_check(traj, 2.0, "wishart", 1.0, gamma=1.0, dt=3.0)
    with pytest.raises(ParameterError):
        stationary_check(np.ones(200), -2.0, "wishart", 1.0, gamma=1.0, dt=3.0)


def test_trajectory_csv(tmp_path):
    params = SdeParams(gamma=(1.0, 10.0), kappa=(0.5, 0.5), steps=1000,
                       record_stride=100, burn_in=0)
    res = simulate_hierarchy(params, 5)
    path = tmp_path / "traj.csv"
    save_trajectories(res, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,eps1,eps2"
    assert len(lines) == 11
    first = [float(v) for v in lines[1].split(",")]
    assert first[0] == pytest.approx(res.times[0])
    assert first[1:] == pytest.approx(list(res.values[:, 0]))
