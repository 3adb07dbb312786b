import numpy as np
import pytest
import scipy.sparse as sp

from aphom.bvp import DirichletProblem, solve_dirichlet
from aphom.coeff import FieldError, constant_field, scalar_field
from aphom.grid import DiscreteField, Grid, discrete_laplace_symbol, divergence
from aphom.solver import SolverError, apply_flux, assemble, solve_fft, solve_krylov

IDENT2 = constant_field(np.eye(2), mu=1.0)


def test_identity_gives_five_point_stencil():
    g = Grid(2, 8, 1.0)
    K = assemble(IDENT2, g).matrix.toarray()
    h2 = g.h**2
    row = K[0] * h2
    assert row[0] == pytest.approx(4.0)
    assert sorted(np.round(row[row < 0], 12)) == [-1.0] * 4
    assert np.count_nonzero(np.abs(row) > 1e-14) == 5


def test_row_sums_and_symmetry(bundled):
    g = Grid(2, 16, 2.0)
    for name in ("periodic2d", "laminate2d", "skew2d"):
        fld = bundled[name]
        op = assemble(fld, g, lam=0.25)
        assert np.allclose(np.asarray(op.matrix.sum(axis=1)).ravel(), 0.25, atol=1e-11)
        asym = abs(op.matrix - op.matrix.T).max()
        assert (asym == 0.0) == fld.is_symmetric(), name


def test_operator_equals_composition(bundled):
    rng = np.random.default_rng(0)
    for name in ("periodic2d", "skew2d", "system2d"):
        fld = bundled[name]
        g = Grid(2, 16, 2.0)
        lam = 0.3
        op = assemble(fld, g, lam)
        u = rng.standard_normal((fld.m,) + g.node_shape)
        gu = np.stack([np.stack([(np.roll(u[a], -1, axis=i) - u[a]) / g.h for a in range(fld.m)])
                       for i in range(2)])
        flux = DiscreteField(g, apply_flux(op.samples, gu, g), staggered=True)
        comp = -np.stack([divergence(DiscreteField(g, flux.data[:, a:a + 1], staggered=True)).data[0]
                          for a in range(fld.m)]) + lam * u
        direct = (op.matrix @ u.ravel()).reshape(u.shape)
        assert np.max(np.abs(direct - comp)) <= 1e-13 * np.max(np.abs(direct))


def test_assemble_rejects_bad_input():
    bad = scalar_field(1, 1.0, [(1.0, 2.0, 0.0)], mu=0.1)
    with pytest.raises(FieldError):
        assemble(bad, Grid(1, 8, 1.0))
    with pytest.raises(ValueError):
        assemble(IDENT2, Grid(2, 8, 1.0), lam=-1.0)


def test_krylov_zero_rhs_and_eigenfunction():
    g = Grid(2, 32, 1.0)
    op = assemble(IDENT2, g, lam=1.0)
    x, rep = solve_krylov(op, np.zeros(g.size))
    assert not np.any(x) and rep.iterations == 0
    u = DiscreteField.from_function(g, lambda y: np.cos(2 * np.pi * y[..., 0]))
    x, rep = solve_krylov(op, u.data.ravel(), tol=1e-12)
    sigma = (2 / g.h * np.sin(np.pi * g.h)) ** 2
    assert np.allclose(x, u.data.ravel() / (sigma + 1), atol=1e-10)
    assert rep.method == "PCG"


@pytest.mark.parametrize("pre", ["spectral", "jacobi", "none"])
def test_krylov_residual_oracle(bundled, pre):
    g = Grid(2, 16, 1.0)
    op = assemble(bundled["skew2d"], g, lam=0.1)
    b = np.random.default_rng(1).standard_normal(g.size)
    x, rep = solve_krylov(op, b, tol=1e-10, preconditioner=pre)
    assert rep.method == "BiCGStab"
    assert np.linalg.norm(op.matrix @ x - b) <= 1e-9 * np.linalg.norm(b)


def test_krylov_singular_needs_mean_zero():
    g = Grid(1, 16, 1.0)
    op = assemble(constant_field([[1.0]], mu=1.0), g)
    with pytest.raises(SolverError):
        solve_krylov(op, np.ones(16))
    rhs = np.cos(2 * np.pi * g.axis())
    x, _ = solve_krylov(op, rhs)
    assert abs(x.mean()) < 1e-14


def test_krylov_failure_raises():
    g = Grid(2, 32, 1.0)
    op = assemble(IDENT2, g, lam=1e-6)
    b = np.random.default_rng(2).standard_normal(g.size)
    with pytest.raises(SolverError):
        solve_krylov(op, b, tol=1e-14, maxiter=2, preconditioner="none")


def test_fft_eigenfunction_and_gauge():
    g = Grid(1, 64, 4.0)
    f = DiscreteField.from_function(g, lambda y: np.cos(2 * np.pi * y[..., 0] / 4.0))
    sym = discrete_laplace_symbol(g)[1]
    assert np.allclose(solve_fft(1.0, f).data, f.data / (sym + 1), atol=1e-14)
    u = solve_fft(0.0, f)
    assert abs(u.data.mean()) < 1e-15
    with pytest.raises(SolverError):
        solve_fft(0.0, DiscreteField.scalar(g, np.ones(64)))
    with pytest.raises(ValueError):
        solve_fft(1.0, DiscreteField.scalar(Grid(1, 12, 1.0), np.ones(12)))


def test_fft_agrees_with_krylov():
    g = Grid(2, 32, 2.0)
    rhs = np.random.default_rng(4).standard_normal((1,) + g.node_shape)
    op = assemble(IDENT2, g, lam=0.5)
    x, _ = solve_krylov(op, rhs.ravel(), tol=1e-13)
    y = solve_fft(0.5, DiscreteField(g, rhs)).data.ravel()
    assert np.max(np.abs(x - y)) <= 1e-9


def test_discrete_maximum_principle(bundled):
    fld = bundled["periodic2d"]
    prob = DirichletProblem(2, 64, fld, epsilon=0.25,
                            f=lambda x: 1.0 + 0.5 * np.sin(3 * x[..., 0]) * np.cos(2 * x[..., 1]))
    u, _ = solve_dirichlet(prob)
    x = prob.grid.coords()
    data = 1.0 + 0.5 * np.sin(3 * x[..., 0]) * np.cos(2 * x[..., 1])
    edge = ~prob.grid.interior_mask()
    lo, hi = data[edge].min(), data[edge].max()
    assert lo - 1e-9 <= u.data.min() and u.data.max() <= hi + 1e-9


def test_energy_estimate_stable_under_refinement(bundled):
    # ||grad u|| + T^-1 ||u|| <= C (T ||F|| + ||f||) for -div(A grad u) + T^-2 u = div F + f
    from aphom.grid import gradient, l2_norm

    fld = bundled["periodic2d"]
    T = 2.0
    consts = []
    for n in (32, 64):
        g = Grid(2, n, 8.0)
        op = assemble(fld, g, T**-2)
        x = g.coords()
        F = np.stack([np.sin(2 * np.pi * x[..., 1] / 8.0)[None], np.zeros((1,) + g.node_shape)])
        f = np.cos(2 * np.pi * x[..., 0] / 4.0)[None]
        rhs = -(op.gradient.T @ F.ravel()) + f.ravel()
        u, _ = solve_krylov(op, rhs, tol=1e-12)
        ud = DiscreteField(g, u.reshape(f.shape))
        lhs = l2_norm(gradient(ud)) + l2_norm(ud) / T
        data = T * l2_norm(DiscreteField(g, F, staggered=True)) + l2_norm(DiscreteField(g, f))
        consts.append(lhs / data)
    assert max(consts) / min(consts) < 1.05
    assert max(consts) <= 1.0 / fld.mu


def test_dirichlet_operator_is_sparse_csr():
    g = Grid(2, 8, 1.0, "dirichlet")
    op = assemble(IDENT2, g)
    assert sp.isspmatrix_csr(op.matrix)
    assert op.restricted().shape == (49, 49)
