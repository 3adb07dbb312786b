import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aphom.coeff import (CoefficientField, DifferenceSpec, FieldError, SamplingPlan, TrigMode,
                         adjoint_field, check_elliptic, constant_field, difference, ellipticity_certificate,
                         evaluate, field_from_dict, load_field, mean_value, omega_modulus,
                         product_rule_expansion, rho, rho_exponent, s_norm, sampled_ellipticity,
                         save_field, scalar_field, translate, z_lattice)


def test_constant_field_evaluates_to_itself(const2d):
    ys = np.random.default_rng(0).uniform(-50, 50, (20, 2))
    vals = evaluate(const2d, ys)
    assert np.array_equal(vals, np.broadcast_to(const2d.const, vals.shape))


def test_cosine_field_point_values(periodic1d):
    assert evaluate(periodic1d, 0.0).item() == pytest.approx(3.0, abs=1e-15)
    assert evaluate(periodic1d, 0.25).item() == pytest.approx(2.0, abs=1e-15)


def test_periodic_field_repeats(bundled):
    for fld in bundled.values():
        if fld.period is None:
            continue
        y = np.random.default_rng(1).uniform(-20, 20, (50, fld.dim))
        for i in range(fld.dim):
            shift = np.zeros(fld.dim)
            shift[i] = fld.period[i]
            assert np.max(np.abs(evaluate(fld, y + shift) - evaluate(fld, y))) < 1e-12


def test_rejects_bad_shapes_and_mu():
    with pytest.raises(FieldError):
        CoefficientField(dim=2, const=np.ones((1, 1, 1, 1)))
    with pytest.raises(FieldError):
        CoefficientField(dim=1, const=np.ones((1, 1, 1, 1)), mu=0.0)
    with pytest.raises(FieldError):
        TrigMode(np.zeros(1), np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))


def test_non_elliptic_field_is_rejected():
    bad = scalar_field(1, 1.0, [(1.0, 2.0, 0.0)], mu=0.1)
    assert not ellipticity_certificate(bad)["ok"]
    with pytest.raises(FieldError):
        check_elliptic(bad)


def test_certificate_implies_sampled_ellipticity(bundled):
    for fld in bundled.values():
        assert ellipticity_certificate(fld)["ok"], fld.name
        lo, hi = sampled_ellipticity(fld, probes=20_000)
        assert fld.mu <= lo and hi <= 1 / fld.mu, fld.name


def test_round_trip_through_json(tmp_path, bundled):
    for name, fld in bundled.items():
        path = tmp_path / f"{name}.json"
        save_field(fld, path)
        back = load_field(path)
        assert back.digest() == fld.digest()
    with pytest.raises(FieldError):
        field_from_dict({"dim": 1, "mu": 0.5, "modes": []})
    with pytest.raises(FieldError):
        field_from_dict({"dim": 1, "const": [1.0, 2.0], "mu": 0.5})


def test_adjoint_transposes_and_is_involution():
    fld = constant_field([[1.0, 2.0], [0.0, 1.0]], mu=0.1)
    adj = adjoint_field(fld)
    assert np.array_equal(adj.const.reshape(2, 2), [[1.0, 0.0], [2.0, 1.0]])
    assert adjoint_field(adj).digest() == fld.digest()


def test_adjoint_of_symmetric_scalar_field_is_itself(periodic1d, bundled):
    assert adjoint_field(periodic1d).digest() == periodic1d.digest()
    skew = bundled["skew2d"]
    assert adjoint_field(adjoint_field(skew)).digest() == skew.digest()
    assert adjoint_field(skew).mu == skew.mu


def test_translate_matches_shifted_evaluation(qp1d):
    x0 = 0.731
    y = np.linspace(-10, 10, 41)
    assert np.allclose(evaluate(translate(qp1d, x0), y), evaluate(qp1d, y + x0), atol=1e-13)


def test_difference_examples():
    g = np.cos
    assert difference(g, DifferenceSpec(((0.3, 0.3),)), 1.2) == 0.0
    assert difference(g, DifferenceSpec(((math.pi, 0.0),)), 0.0) == pytest.approx(-2.0)
    spec = DifferenceSpec(((1.0, 0.0), (1.0, 0.0)))
    for x in (-3.0, 0.0, 2.5):
        assert difference(lambda t: t**2, spec, x) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        DifferenceSpec(())


@settings(max_examples=30, deadline=None)
@given(pairs=st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=3),
       x=st.floats(-10, 10))
def test_product_rule_expansion(pairs, x):
    def f(t):
        return np.sin(t) + 2.0

    def g(t):
        return np.cos(np.sqrt(2.0) * t) - 0.5 * t

    spec = DifferenceSpec(tuple(pairs))
    lhs = difference(lambda t: f(t) * g(t), spec, x)
    rhs = product_rule_expansion(f, g, spec, x)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)) * 2 ** len(pairs)


def test_s_norm_examples():
    plan = SamplingPlan(centers=16, extent=10.0, resolution=64)
    assert s_norm(lambda y: np.full(len(y), -3.0), 2, 1.5, plan) == pytest.approx(3.0)
    # cube of half-width 1/2 spans one period
    val = s_norm(lambda y: np.cos(2 * np.pi * y[:, 0]), 2, 0.5, plan)
    assert val == pytest.approx(1 / math.sqrt(2), rel=1e-3)


def test_s_norm_matches_dense_scan(qp1d):
    def g(y):
        return evaluate(qp1d, y)[..., 0, 0, 0, 0] - 3.0

    R = 4.0
    plan = SamplingPlan(centers=512, extent=30.0, resolution=16)
    est = s_norm(g, 2, R, plan)
    centres = np.linspace(-30, 30, 6001)
    t = np.linspace(-R, R, 129)
    w = np.ones_like(t)
    w[[0, -1]] = 0.5
    w /= w.sum()
    dense = max(math.sqrt(float(np.dot(w, g((c + t)[:, None]) ** 2))) for c in centres)
    assert est <= dense * (1 + 1e-3)
    assert est >= 0.99 * dense


def test_s_norm_doubling(bundled):
    plan = SamplingPlan(centers=32, extent=20.0, resolution=8)
    for fld in bundled.values():
        def g(y, fld=fld):
            return evaluate(fld, y) - fld.const

        small = s_norm(g, 2, 1.0, plan, dim=fld.dim)
        big = s_norm(g, 2, 2.0, plan, dim=fld.dim)
        if small > 0:
            assert big <= 2**fld.dim * small


def test_mean_value_examples(qp1d):
    assert mean_value(lambda y: np.full(len(y), 1.5), 3.0) == pytest.approx(1.5)
    assert mean_value(lambda y: np.cos(2 * np.pi * y[:, 0]), 2.0, resolution=64) == pytest.approx(0.0, abs=1e-12)
    m = mean_value(lambda y: evaluate(qp1d, y)[..., 0, 0, 0, 0], 200.0)
    assert m == pytest.approx(3.0, rel=0.02)


def test_rho_exponent_rule():
    assert rho_exponent(1) == pytest.approx(4.0)
    assert rho_exponent(2) == pytest.approx(8.0)
    with pytest.raises(ValueError):
        rho_exponent(1, qbar=2.0)


def test_rho_constant_and_periodic(const2d, periodic1d):
    plan = SamplingPlan(centers=8, shifts=8, extent=20.0, resolution=8)
    for k in (1, 2):
        assert rho(const2d, k, 1.0, 2.0, plan) == 0.0
    assert rho(periodic1d, 1, 1.0, 4.0, SamplingPlan(centers=8, shifts=8, extent=20.0, z_step=1 / 64)) <= 1e-10
    with pytest.raises(ValueError):
        rho(periodic1d, 3, 1.0, 1.0, plan)


def test_rho_against_brute_force(qp1d):
    # k = 1 reduces to sup_y inf_z ||A(.+y) - A(.+z)||_{S^4_R}
    L = R = 10.0
    plan = SamplingPlan(centers=16, shifts=16, extent=100.0, resolution=4, z_step=0.05)
    est = rho(qp1d, 1, L, R, plan)
    from aphom.coeff import shift_samples, sobol_points

    ys = shift_samples(plan.shifts, 1, plan.extent, plan.z_step, plan.seed)
    zs = np.arange(-L, L + 1e-9, 0.025)
    centres = sobol_points(plan.centers, 1, plan.extent, plan.seed)
    t = np.linspace(-R, R, 161)
    w = np.ones_like(t)
    w[[0, -1]] = 0.5
    w /= w.sum()

    def a(x):
        return np.cos(x) + np.cos(np.sqrt(2) * x)

    pts = (centres[:, None, 0] + t[None, :])
    brute = 0.0
    for y in ys[:, 0]:
        diffs = a(pts[None] + y) - a(pts[None] + zs[:, None, None])
        norms = np.max(np.einsum("zct,t->zc", diffs**4, w), axis=1) ** 0.25
        brute = max(brute, norms.min())
    assert est == pytest.approx(brute, rel=0.05)


def test_rho_non_increasing_in_L(qp1d):
    plan = SamplingPlan(centers=8, shifts=8, extent=50.0, resolution=4, z_step=0.25)
    vals = [rho(qp1d, 1, L, 4.0, plan) for L in (1.0, 2.0, 4.0, 8.0)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert all(v >= 0 for v in vals)


def test_z_lattice_is_nested():
    a = {tuple(p) for p in z_lattice(2.0, 2, 0.5)}
    b = {tuple(p) for p in z_lattice(4.0, 2, 0.5)}
    assert a <= b
    assert (0.0, 0.0) in a


def test_omega_of_zero_and_periodic_grid_function():
    from aphom.grid import DiscreteField, Grid

    g = Grid(1, 64, 8.0)
    plan = SamplingPlan(centers=8, shifts=8, z_step=g.h)
    assert omega_modulus(DiscreteField.scalar(g, np.zeros(g.node_shape)), 1, 1.0, 2.0, plan) == 0.0
    cos = DiscreteField.from_function(g, lambda x: np.cos(2 * np.pi * x[..., 0]))
    for k in (1, 2):
        assert omega_modulus(cos, k, 1.0, 2.0, plan) < 1e-12
