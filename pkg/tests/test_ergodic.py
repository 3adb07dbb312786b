import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from aphom.coeff import SamplingPlan
from aphom.ergodic import (ThetaSpec, calibrate_heat, decay_rate, geometric_menu, heat_decay, log_t_grid,
                           oscillation_bound, reconstruction_bound, rho_table, theta_bound, theta_zero_rho)
from aphom.grid import DiscreteField, Grid

PLAN = SamplingPlan(centers=8, shifts=8)


def qp_field(side=64.0, n=512):
    g = Grid(1, n, side)
    u = DiscreteField.from_function(g, lambda x: np.cos(x[..., 0]) + np.cos(math.sqrt(2) * x[..., 0]))
    return DiscreteField(g, u.data - u.data.mean())


def test_geometric_menu_and_grids():
    assert geometric_menu(8.0) == [1.0, 2.0, 4.0, 8.0]
    assert geometric_menu(0.5) == []
    t = log_t_grid(16.0, 5)
    assert t[0] == 1.0 and t[-1] == pytest.approx(16.0)
    assert decay_rate([0, 1, 2], np.exp(-3.0 * np.arange(3))) == pytest.approx(3.0)


def test_oscillation_constant_and_periodic():
    g = Grid(1, 64, 8.0)
    c = DiscreteField.scalar(g, np.full(64, -1.5))
    terms = oscillation_bound(c, 1.0, 2.0, PLAN)
    assert terms.lhs == pytest.approx(1.5) and terms.mean == pytest.approx(-1.5)
    assert terms.difference == 0.0 and terms.gradient == 0.0
    assert terms.required_constant() == 0.0
    cos = DiscreteField.from_function(g, lambda x: np.cos(2 * np.pi * x[..., 0]))
    terms = oscillation_bound(cos, 1.0, 2.0, SamplingPlan(centers=8, shifts=8, z_step=g.h))
    assert terms.difference < 1e-12 and abs(terms.mean) < 1e-14
    assert terms.lhs <= terms.rhs(1.0)
    with pytest.raises(ValueError):
        oscillation_bound(cos, 3.0, 2.0)


def test_oscillation_sweep_quasi_periodic():
    u = qp_field()
    consts = [oscillation_bound(u, L, R, SamplingPlan(centers=8, shifts=16, z_step=L / 8)).required_constant()
              for L in (0.5, 1.0, 2.0) for R in (2.0, 4.0)]
    assert max(consts) <= 10.0


def test_heat_decay_zero_and_eigenfunction():
    g = Grid(1, 128, 8.0)
    z = DiscreteField.scalar(g, np.zeros(128))
    run = heat_decay(z, 1, 1.0, 1.0, [1.0, 2.0], PLAN)
    assert not np.any(run.sup) and run.omega == 0.0 and run.g_norm == 0.0
    w = 2 * np.pi / 8.0
    cos = DiscreteField.from_function(g, lambda x: np.cos(w * x[..., 0]))
    run = heat_decay(cos, 1, 8.0, 1.0, [1.0, 1.5, 2.0], SamplingPlan(centers=8, shifts=8, z_step=g.h))
    assert np.allclose(run.sup, np.exp(-w * w * run.t), rtol=1e-10, atol=1e-300)
    assert run.omega < 1e-12


def test_heat_decay_preconditions():
    g = Grid(1, 64, 8.0)
    u = DiscreteField.from_function(g, lambda x: 1 + np.cos(2 * np.pi * x[..., 0] / 8))
    with pytest.raises(ValueError):
        heat_decay(u, 1, 1.0, 1.0, [1.0])
    v = DiscreteField(g, u.data - 1)
    with pytest.raises(ValueError):
        heat_decay(v, 2, 1.0, 1.0, [1.0])


def test_heat_decay_calibrated_and_non_increasing():
    u = qp_field()
    t = np.geomspace(1.0, 64.0, 13)
    run = heat_decay(u, 1, 4.0, 1.0, t, SamplingPlan(centers=8, shifts=16, z_step=0.5))
    assert np.all(np.diff(run.sup) <= 1e-14)
    C, c = calibrate_heat(run)
    assert np.all(run.holds(C, c))
    Cg, cg = calibrate_heat(run, gradient=True)
    assert np.all(run.holds(Cg, cg, gradient=True))


def test_reconstruction_trivial_cases():
    g = Grid(1, 256, 32.0)
    z = DiscreteField.scalar(g, np.zeros(256))
    rb = reconstruction_bound(z, 1, 4.0, plan=PLAN)
    assert rb.lhs == 0.0 and rb.rhs == 0.0
    cos = DiscreteField.from_function(g, lambda x: np.cos(2 * np.pi * x[..., 0]))
    rb = reconstruction_bound(cos, 1, 4.0, plan=SamplingPlan(centers=8, shifts=8, z_step=g.h))
    assert rb.lhs == pytest.approx(1 / math.sqrt(2), rel=1e-2)
    assert 0 < rb.rhs < math.inf
    with pytest.raises(ValueError):
        reconstruction_bound(cos, 1, 1.0)


def zero_rho_oracle(T, sigma, c):
    val, _ = integrate.quad(lambda t: math.exp(-c * t * t) * (T / t) ** sigma, 1.0, T, epsabs=1e-12)
    return val


def test_theta_zero_rho_matches_quadrature():
    th = theta_zero_rho(8.0, 0.5, 0.1, points=2049)
    assert th.value == pytest.approx(zero_rho_oracle(8.0, 0.5, 0.1), rel=1e-4)
    assert np.all(th.best_L == 1.0)
    assert len(th.rows()) == len(th.t)


def test_theta_inverse_t_profile():
    sigma, c = 0.5, 0.1
    ratios, Ts = [], [16.0, 64.0, 256.0, 1024.0]
    for T in Ts:
        ts = np.geomspace(1.0, T, 1025)
        Ls = np.array([1.0])
        th = theta_bound(ThetaSpec(1, sigma, T, Ls, ts, 1.0 / ts[None, :], c))
        exact, _ = integrate.quad(lambda t: (1 / t + math.exp(-c * t * t)) * (T / t) ** sigma, 1.0, T, limit=200)
        assert th.value == pytest.approx(exact, rel=1e-3)
        ratios.append(th.value / T)
    slope = np.polyfit(np.log(Ts), np.log(ratios), 1)[0]
    assert -1.0 < slope < 0.0
    assert slope == pytest.approx(sigma - 1.0, abs=0.1)


@settings(max_examples=25, deadline=None)
@given(T=st.floats(2.0, 64.0), sigma=st.floats(0.05, 0.95), seed=st.integers(0, 10_000))
def test_theta_monotone_in_T_and_menu(T, sigma, seed):
    rng = np.random.default_rng(seed)
    ts = np.geomspace(1.0, 128.0, 129)
    coarse = np.array([1.0, 4.0, 16.0])
    fine = np.array([1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    base = np.sort(rng.random(len(fine)))[::-1]  # rho non-increasing in L
    table = np.outer(base, 1.0 / np.sqrt(ts))
    sub = table[[0, 2, 4]]
    a = theta_bound(ThetaSpec(1, sigma, T, coarse, ts, sub))
    b = theta_bound(ThetaSpec(1, sigma, T, fine, ts, table))
    assert b.value <= a.value * (1 + 1e-12)
    bigger = theta_bound(ThetaSpec(1, sigma, min(2 * T, 128.0), fine, ts, table))
    assert bigger.value >= b.value


def test_theta_validation():
    ts = np.geomspace(1.0, 8.0, 9)
    with pytest.raises(ValueError):
        ThetaSpec(1, 1.0, 8.0, [1.0], ts, np.zeros((1, 9)))
    with pytest.raises(ValueError):
        ThetaSpec(1, 0.5, 8.0, [1.0], ts, -np.ones((1, 9)))
    with pytest.raises(ValueError):
        theta_bound(ThetaSpec(1, 0.5, 16.0, [1.0], ts, np.zeros((1, 9))))


def test_rho_table_monotone_in_L(qp1d):
    plan = SamplingPlan(centers=4, shifts=4, extent=20.0, resolution=4, z_step=0.25)
    tab = rho_table(qp1d, 1, [1.0, 2.0, 4.0], [2.0, 4.0], plan)
    assert np.all(np.diff(tab, axis=0) <= 1e-12)
    assert np.all(tab >= 0)
