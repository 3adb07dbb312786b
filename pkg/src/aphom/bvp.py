"""Dirichlet problems for the oscillating and homogenized operators on the unit box."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coeff import CoefficientField
from .corrector import EffectiveTensor, max_spacing
from .grid import DiscreteField, Grid, forward_diff, l2_norm
from .solver import SolveReport, assemble, solve_krylov


class ProblemError(ValueError):
    pass


@dataclass
class DirichletProblem:
    """``-div(A(x/eps) grad u) = F`` on the unit box with ``u = f`` on the boundary.

    ``coefficient`` is a CoefficientField (oscillating when ``epsilon > 0``),
    an EffectiveTensor or a constant (d, m, d, m) array.  ``F`` and ``f`` map
    node coordinates (..., d) to values (...,) or (..., m).
    """

    dim: int
    n: int
    coefficient: object
    epsilon: float = 0.0
    F: Optional[Callable] = None
    f: Optional[Callable] = None
    tol: float = 1e-10
    side: float = 1.0
    origin: float = 0.0
    name: str = ""

    @property
    def grid(self) -> Grid:
        return Grid(self.dim, self.n, self.side, "dirichlet", origin=self.origin)

    @property
    def m(self) -> int:
        return _tensor_m(self.coefficient)


def _tensor_m(coef) -> int:
    if isinstance(coef, CoefficientField):
        return coef.m
    if isinstance(coef, EffectiveTensor):
        return coef.values.shape[1]
    return np.asarray(coef).shape[1]


def _coefficient(coef):
    if isinstance(coef, EffectiveTensor):
        return coef.values
    return coef


def resolution_limit(fld: CoefficientField, epsilon: float) -> float:
    """Largest admissible spacing: 16 nodes per shortest physical wavelength (eps/16 for unit period)."""
    return epsilon * max_spacing(fld)


def resolving_cells(fld: CoefficientField, epsilon: float, side: float = 1.0) -> int:
    """Smallest power-of-two cell count meeting the resolution rule."""
    hmax = resolution_limit(fld, epsilon)
    if math.isinf(hmax):
        return 16
    return max(16, 1 << math.ceil(math.log2(side / hmax - 1e-9)))


def _values(func, grid: Grid, m: int) -> np.ndarray:
    out = np.zeros((m,) + grid.node_shape)
    if func is None:
        return out
    v = np.asarray(func(grid.coords()), dtype=float)
    if v.shape == grid.node_shape:
        v = v[None]
    else:
        v = np.moveaxis(v, -1, 0)
    out[:] = v
    return out


def solve_dirichlet(problem: DirichletProblem, preconditioner: str = "spectral"):
    """Discrete solution on all nodes (boundary values included) and the solve report."""
    coef = problem.coefficient
    g = problem.grid
    osc = isinstance(coef, CoefficientField) and not coef.is_constant and problem.epsilon > 0
    if osc and g.h > resolution_limit(coef, problem.epsilon) * (1 + 1e-9):
        raise ProblemError(f"spacing {g.h:.4g} does not resolve eps = {problem.epsilon} "
                           f"(need <= {resolution_limit(coef, problem.epsilon):.4g})")
    if isinstance(coef, CoefficientField) and problem.epsilon <= 0 and not coef.is_constant:
        raise ProblemError("an oscillating field needs epsilon > 0")
    m = problem.m
    scale = problem.epsilon if osc else 1.0
    op = assemble(_coefficient(coef), g, 0.0, scale=scale)
    interior = g.interior_mask()
    ub = _values(problem.f, g, m)
    ub[:, interior] = 0.0
    Fv = _values(problem.F, g, m)
    if not np.all(np.isfinite(ub)) or not np.all(np.isfinite(Fv)):
        raise ProblemError("non-finite data")
    rhs = Fv.ravel() - op.matrix @ ub.ravel()
    x, rep = solve_krylov(op, rhs[op.free], tol=problem.tol, preconditioner=preconditioner)
    u = ub.ravel().copy()
    u[op.free] = x
    return DiscreteField(g, u.reshape((m,) + g.node_shape)), rep


# --- closed-form problems --------------------------------------------------------


def _tensor_of(coef) -> Optional[np.ndarray]:
    if isinstance(coef, EffectiveTensor):
        return coef.values
    if isinstance(coef, CoefficientField):
        return coef.const if coef.is_constant else None
    return np.asarray(coef, dtype=float)


def problem_data(name: str, dim: int, tensor=None, params: Optional[dict] = None):
    """(F, f, exact-or-None) for a named closed-form problem.

    sinsin   F = prod sin(pi x_i), zero boundary data
    affine   F = 0, f = slope . x + offset (exact for constant tensors)
    manufactured  u* = prod sin(pi x_i) with F = -div(A grad u*) for a constant A
    """
    params = params or {}
    if name == "sinsin":
        amp = params.get("amplitude", 1.0)

        def F(x):
            return amp * np.prod(np.sin(np.pi * x), axis=-1)

        return F, None, None
    if name == "affine":
        slope = np.asarray(params.get("slope", [1.0] * dim), dtype=float)
        off = float(params.get("offset", 0.0))

        def f(x):
            return x @ slope + off

        return None, f, f
    if name == "manufactured":
        if tensor is None:
            raise ProblemError("manufactured problem needs a constant tensor")
        a = np.asarray(tensor)[:, 0, :, 0]

        def exact(x):
            return np.prod(np.sin(np.pi * x), axis=-1)

        def F(x):
            s, c = np.sin(np.pi * x), np.cos(np.pi * x)
            out = np.zeros(x.shape[:-1])
            for i in range(dim):
                for j in range(dim):
                    if i == j:
                        term = -np.pi**2 * np.prod(s, axis=-1)
                    else:
                        term = np.pi**2 * np.prod(np.where(np.isin(np.arange(dim), [i, j]), c, s), axis=-1)
                    out -= a[i, j] * term
            return out

        return F, None, exact
    raise ProblemError(f"unknown problem {name!r}")


def make_problem(name: str, dim: int, n: int, coefficient, epsilon: float = 0.0, params=None,
                 tol: float = 1e-10) -> DirichletProblem:
    F, f, _ = problem_data(name, dim, _tensor_of(coefficient), params)
    return DirichletProblem(dim, n, coefficient, epsilon, F, f, tol, name=name)


# --- norms -------------------------------------------------------------------------


def h2_norm(u: DiscreteField) -> float:
    """Discrete H^2 norm from values, forward differences and second differences on interior nodes."""
    g = u.grid
    d = g.dim
    total = l2_norm(u) ** 2
    grads = [forward_diff(u.data, i, g) for i in range(d)]
    total += sum(float(np.sum(gr**2)) for gr in grads) * g.h**d
    inner = tuple([slice(None)] + [slice(1, -1)] * d)
    for i in range(d):
        for j in range(d):
            second = np.gradient(np.gradient(u.data, g.h, axis=1 + i), g.h, axis=1 + j)
            total += float(np.sum(second[inner] ** 2)) * g.h**d
    return math.sqrt(total)


# --- rate study ----------------------------------------------------------------------


@dataclass
class RatePoint:
    epsilon: float
    n: int
    l2_error: float
    h2_u0: float
    report_eps: SolveReport
    report_0: SolveReport

    @property
    def relative(self) -> float:
        return self.l2_error / self.h2_u0 if self.h2_u0 else 0.0


def rate_point(fld: CoefficientField, epsilon: float, a_hat: EffectiveTensor, problem: str = "sinsin",
               params=None, n: Optional[int] = None, tol: float = 1e-10):
    """``||u_eps - u_0||_{L^2}`` on a grid resolving eps, both solves sharing the grid."""
    n = resolving_cells(fld, epsilon) if n is None else n
    pe = make_problem(problem, fld.dim, n, fld, epsilon, params, tol)
    p0 = make_problem(problem, fld.dim, n, a_hat, 0.0, params, tol)
    ue, re = solve_dirichlet(pe)
    u0, r0 = solve_dirichlet(p0)
    diff = DiscreteField(ue.grid, ue.data - u0.data)
    return RatePoint(epsilon, n, l2_norm(diff), h2_norm(u0), re, r0), ue, u0


# --- gradient profiles -----------------------------------------------------------------


@dataclass
class GradientProfile:
    center: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    epsilon: float = 0.0
    counts: list = field(default_factory=list)


def _ball_edges(g: Grid, x0, r, i):
    mid = g.coords() + 0.5 * g.h * np.eye(g.dim)[i]
    inside = np.sum((mid - x0) ** 2, axis=-1) <= r * r * (1 + 1e-12)
    return inside & g.edge_mask(i)


def _check_radius(g: Grid, x0, r):
    if g.periodic:
        if 2 * r > g.side:
            raise ProblemError(f"radius {r} exceeds half the box")
        return
    lo, hi = g.origin, g.origin + g.side
    if np.any(x0 - r < lo - 1e-12) or np.any(x0 + r > hi + 1e-12):
        raise ProblemError(f"ball of radius {r} around {x0} leaves the domain")


def gradient_mean(u: DiscreteField, x0, r: float, grad: Optional[np.ndarray] = None):
    """``(avg_{B(x0,r)} |grad u|^2)^(1/2)`` from edge differences whose midpoints lie in the ball."""
    g = u.grid
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (g.dim,))
    _check_radius(g, x0, r)
    total, count = 0.0, 0
    for i in range(g.dim):
        gi = forward_diff(u.data, i, g) if grad is None else grad[i]
        mask = _ball_edges(g, x0, r, i)
        count = max(count, int(mask.sum()))
        if mask.any():
            total += float(np.mean(np.sum(gi[..., mask] ** 2, axis=0)))
    if count == 0:
        raise ProblemError(f"radius {r} holds no grid edges")
    return math.sqrt(total), count


def gradient_profile(u: DiscreteField, x0, radii: Sequence[float], epsilon: float = 0.0,
                     grad: Optional[np.ndarray] = None) -> GradientProfile:
    radii = np.asarray(sorted(radii), dtype=float)
    if epsilon and radii[0] < epsilon * (1 - 1e-12):
        raise ProblemError("radii below the microscale epsilon")
    vals, counts = [], []
    for r in radii:
        v, c = gradient_mean(u, x0, r, grad)
        vals.append(v)
        counts.append(c)
    return GradientProfile(np.asarray(x0, dtype=float), radii, np.array(vals), epsilon, counts)


def caccioppoli_ratio(u: DiscreteField, x0, r: float) -> float:
    """``(avg_{B(x0,r)} |grad u|^2)^(1/2)`` over ``r^-1 (avg_{B(x0,2r)} |u - mean|^2)^(1/2)`` (F = 0)."""
    g = u.grid
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (g.dim,))
    _check_radius(g, x0, 2 * r)
    lhs, _ = gradient_mean(u, x0, r)
    inside = np.sum((g.coords() - x0) ** 2, axis=-1) <= 4 * r * r * (1 + 1e-12)
    vals = u.data[..., inside]
    osc = math.sqrt(float(np.mean(np.sum((vals - vals.mean(axis=-1, keepdims=True)) ** 2, axis=0))))
    return lhs / (osc / r) if osc > 0 else (0.0 if lhs == 0 else math.inf)


# --- Liouville probe ---------------------------------------------------------------------


def growth_data(sigma: float):
    """``|x|^sigma cos(sigma theta)`` with theta the polar angle (0 or pi in one dimension)."""

    def f(x):
        r = np.sqrt(np.sum(x**2, axis=-1))
        if x.shape[-1] == 1:
            theta = np.where(x[..., 0] >= 0, 0.0, np.pi)
        else:
            theta = np.arctan2(x[..., 1], x[..., 0])
        return r**sigma * np.cos(sigma * theta)

    return f


@dataclass
class LiouvilleRun:
    R: np.ndarray
    values: np.ndarray
    n: list
    reports: list


def liouville_probe(coefficient, sigma: float, R_list: Sequence[float], r: float = 1.0,
                    h: Optional[float] = None, tol: float = 1e-10, data: Optional[Callable] = None) -> LiouvilleRun:
    """Interior gradient mean on B(0, r) for solutions on [-R, R]^d with growth-R^sigma data."""
    if not 0 < sigma < 1:
        raise ProblemError("sigma must lie in (0, 1)")
    dim = coefficient.dim if isinstance(coefficient, CoefficientField) else np.asarray(_coefficient(coefficient)).shape[0]
    if h is None:
        h = r / 4
        if isinstance(coefficient, CoefficientField):
            h = min(h, max_spacing(coefficient))
    f = growth_data(sigma) if data is None else data
    Rs = np.asarray(sorted(R_list), dtype=float)
    vals, ns, reps = [], [], []
    for R in Rs:
        n = int(math.ceil(2 * R / h))
        n += n % 2  # keep the origin on a node
        prob = DirichletProblem(dim, n, coefficient, 1.0 if isinstance(coefficient, CoefficientField) else 0.0,
                                None, f, tol, side=2 * R, origin=-R, name="liouville")
        u, rep = solve_dirichlet(prob)
        v, _ = gradient_mean(u, np.zeros(dim), r)
        vals.append(v)
        ns.append(n)
        reps.append(rep)
    return LiouvilleRun(Rs, np.array(vals), ns, reps)
