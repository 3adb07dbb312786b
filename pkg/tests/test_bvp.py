import math

import numpy as np
import pytest

from aphom.bvp import (DirichletProblem, ProblemError, caccioppoli_ratio, gradient_mean, gradient_profile,
                       h2_norm, liouville_probe, make_problem, problem_data, rate_point, resolving_cells,
                       solve_dirichlet)
from aphom.coeff import constant_field, scalar_field
from aphom.corrector import EffectiveTensor
from aphom.grid import DiscreteField, Grid, gradient, l2_norm
from aphom.report import fit_power_law

IDENT2 = constant_field(np.eye(2), mu=1.0)


def test_affine_reproduction():
    for dim in (1, 2):
        ident = constant_field(np.eye(dim), mu=1.0)
        prob = make_problem("affine", dim, 16, ident, params={"slope": [0.7, -1.3][:dim], "offset": 0.2})
        u, _ = solve_dirichlet(prob)
        _, _, exact = problem_data("affine", dim, params={"slope": [0.7, -1.3][:dim], "offset": 0.2})
        assert np.max(np.abs(u.data[0] - exact(prob.grid.coords()))) <= 1e-12


def test_manufactured_second_order(bundled):
    a = bundled["constant2d"].const
    errs = []
    for n in (16, 32, 64):
        prob = make_problem("manufactured", 2, n, a, tol=1e-13)
        u, _ = solve_dirichlet(prob)
        _, _, exact = problem_data("manufactured", 2, a)
        errs.append(np.max(np.abs(u.data[0] - exact(prob.grid.coords()))))
    orders = [math.log2(x / y) for x, y in zip(errs, errs[1:])]
    assert min(orders) >= 1.9


def test_energy_bounded_across_eps(bundled):
    fld = bundled["periodic2d"]
    F, _, _ = problem_data("sinsin", 2)
    poincare = 1 / (math.pi * math.sqrt(2))
    norms = []
    for eps in (1 / 4, 1 / 8, 1 / 16):
        prob = DirichletProblem(2, resolving_cells(fld, eps), fld, eps, F=F)
        u, _ = solve_dirichlet(prob)
        norms.append(l2_norm(gradient(u)))
        Fn = l2_norm(DiscreteField(prob.grid, F(prob.grid.coords())[None]))
        assert norms[-1] <= poincare * Fn / fld.mu
    assert max(norms) / min(norms) < 1.2


def test_problem_errors(bundled):
    fld = bundled["periodic2d"]
    with pytest.raises(ProblemError):
        solve_dirichlet(DirichletProblem(2, 16, fld, 0.25))
    with pytest.raises(ProblemError):
        solve_dirichlet(DirichletProblem(2, 16, fld, 0.0))
    with pytest.raises(ProblemError):
        problem_data("unknown", 2)
    with pytest.raises(ProblemError):
        problem_data("manufactured", 2)
    with pytest.raises(ProblemError):
        solve_dirichlet(DirichletProblem(1, 16, constant_field([[1.0]]), F=lambda x: np.full(x.shape[:-1], np.nan)))


def test_rate_constant_field_is_at_solver_floor(const2d):
    a_hat = EffectiveTensor(const2d.const, math.inf)
    pt, _, _ = rate_point(const2d, 1 / 8, a_hat, n=32, tol=1e-12)
    assert pt.l2_error <= 1e-10


def test_rate_1d_periodic_slope():
    fld = scalar_field(1, 2.0, [(2 * np.pi, 1.0, 0.0)], period=[1.0])
    a_hat = EffectiveTensor(np.full((1, 1, 1, 1), math.sqrt(3.0)), math.inf)
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    errs = [rate_point(fld, e, a_hat, tol=1e-12)[0].l2_error for e in eps]
    fit = fit_power_law(eps, errs)
    assert fit.slope >= 0.9 and fit.r2 >= 0.98


def test_rate_1d_quasi_periodic_positive(qp1d):
    # in one dimension the effective coefficient is the harmonic mean
    y = np.linspace(0, 20000, 2_000_001)
    a = 3 + np.cos(y) + np.cos(math.sqrt(2) * y)
    a_hat = EffectiveTensor(np.full((1, 1, 1, 1), 1 / np.mean(1 / a)), math.inf)
    eps = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    pts = [rate_point(qp1d, e, a_hat, tol=1e-12)[0] for e in eps]
    fit = fit_power_law(eps, [p.l2_error for p in pts])
    assert fit.slope > 0
    C = max(p.l2_error / (e * p.h2_u0) for p, e in zip(pts, eps))
    assert all(p.l2_error <= C * e * p.h2_u0 for p, e in zip(pts, eps))


def test_h2_norm_of_quadratic():
    g = Grid(1, 128, 1.0, "dirichlet")
    u = DiscreteField.from_function(g, lambda x: x[..., 0] ** 2)
    exact = math.sqrt(1 / 5 + 4 / 3 + 4)
    assert h2_norm(u) == pytest.approx(exact, rel=2e-2)


def test_affine_profile_is_constant():
    g = Grid(2, 32, 2.0, "dirichlet", origin=-1.0)
    u = DiscreteField.from_function(g, lambda x: 3 * x[..., 0] - 4 * x[..., 1])
    prof = gradient_profile(u, [0.0, 0.0], [0.25, 0.5, 0.9])
    assert np.allclose(prof.values, 5.0, atol=1e-12)
    with pytest.raises(ProblemError):
        gradient_mean(u, [0.0, 0.0], 1.5)
    with pytest.raises(ProblemError):
        gradient_profile(u, [0.0, 0.0], [0.01, 0.5], epsilon=0.1)


def test_harmonic_profile_bounded():
    # u = x^2 - y^2 is harmonic; its gradient mean shrinks with the ball
    g = Grid(2, 128, 2.0, "dirichlet", origin=-1.0)
    u = DiscreteField.from_function(g, lambda x: x[..., 0] ** 2 - x[..., 1] ** 2)
    R = 1.0
    prof = gradient_profile(u, [0.0, 0.0], [0.125, 0.25, 0.5, 1.0])
    scale = l2_norm(u) / R
    sigma = 0.5
    C = max(v / ((R / r) ** sigma * scale) for r, v in zip(prof.radii, prof.values))
    assert np.all(np.diff(prof.values) > 0)
    assert C < 10


def test_caccioppoli(bundled):
    rng = np.random.default_rng(5)
    fld = bundled["periodic2d"]
    for _ in range(3):
        c = rng.standard_normal(4)
        prob = DirichletProblem(2, 64, fld, 0.25,
                                f=lambda x, c=c: c[0] * x[..., 0] + c[1] * np.sin(3 * x[..., 1]) + c[2] * x[..., 0] * x[..., 1] + c[3])
        u, _ = solve_dirichlet(prob)
        for r in (0.1, 0.2):
            assert caccioppoli_ratio(u, [0.5, 0.5], r) <= 4 * 2 / fld.mu


def test_liouville_identity_rate_and_constant_data():
    run = liouville_probe(IDENT2, 0.5, [2.0, 4.0, 8.0, 16.0], h=0.25)
    fit = fit_power_law(run.R, run.values)
    assert fit.slope <= -0.3
    flat = liouville_probe(IDENT2, 0.5, [2.0, 4.0], h=0.25, data=lambda x: np.full(x.shape[:-1], 2.0))
    assert np.max(flat.values) <= 1e-9
    with pytest.raises(ProblemError):
        liouville_probe(IDENT2, 1.0, [2.0])
