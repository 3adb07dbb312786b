"""Smoothed two-scale expansion and its H^1 error."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft

from .coeff import CoefficientField
from .corrector import (CorrectorSet, DualCorrectorSet, EffectiveTensor, corrector_grid, dual_s_norms,
                        effective_tensor, flux_and_dual, max_spacing, psi_gap, solve_corrector)
from .grid import DiscreteField, Grid, cutoff, forward_diff, h1_norm, h1_seminorm, l2_norm, mollify
from .solver import assemble


class ExpansionError(ValueError):
    pass


def k_smooth(f: DiscreteField, epsilon: float, delta: float) -> DiscreteField:
    """``S_eps(eta_delta f)``: cutoff on the delta-collar, then bump mollification at scale eps."""
    g = f.grid
    if g.periodic:
        raise ExpansionError("K_{eps,delta} acts on a bounded domain")
    if delta < 2 * epsilon * (1 - 1e-12):
        raise ExpansionError(f"collar delta = {delta} must be >= 2 eps = {2 * epsilon}")
    if epsilon < 2 * g.h * (1 - 1e-12):
        raise ExpansionError(f"eps = {epsilon} is under-resolved on spacing {g.h}")
    eta = cutoff(g, delta).data[0]
    return mollify(DiscreteField(g, f.data * eta, staggered=f.staggered), epsilon)


@dataclass
class ExpansionInput:
    epsilon: float
    delta: float
    u_eps: DiscreteField
    u0: DiscreteField
    correctors: CorrectorSet
    a_hat: Optional[EffectiveTensor] = None
    dual: Optional[DualCorrectorSet] = None

    def __post_init__(self):
        if self.delta < 2 * self.epsilon * (1 - 1e-12):
            raise ExpansionError("delta must be >= 2 eps")
        if self.u_eps.grid != self.u0.grid:
            raise ExpansionError("u_eps and u0 must share the grid")
        if self.u_eps.grid.periodic:
            raise ExpansionError("expansion lives on a Dirichlet grid")

    @property
    def T(self) -> float:
        return 1.0 / self.epsilon


def sample_at_scale(cs_grid: Grid, omega: Grid, epsilon: float) -> tuple:
    """Index arrays mapping Omega nodes x to corrector nodes at x / eps (periodic wrap)."""
    ratio = omega.h / (epsilon * cs_grid.h)
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * max(ratio, 1):
        raise ExpansionError(f"incommensurate grids: h / (eps h_c) = {ratio}")
    offset = (omega.origin / epsilon - cs_grid.origin) / cs_grid.h
    off = int(round(offset))
    if abs(offset - off) > 1e-6:
        raise ExpansionError(f"Omega origin does not land on a corrector node (offset {offset})")
    k = (off + stride * np.arange(omega.nodes_per_side)) % cs_grid.n
    return np.ix_(*([k] * omega.dim))


def _node_gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Centred differences (one-sided on the boundary); returns (d, c, *nodes)."""
    d = grid.dim
    return np.stack([np.gradient(u, grid.h, axis=u.ndim - d + k) for k in range(d)])


def _edges_to_nodes(arr: np.ndarray, i: int, d: int) -> np.ndarray:
    return 0.5 * (arr + np.roll(arr, 1, axis=arr.ndim - d + i))


@dataclass
class Expansion:
    w: DiscreteField
    h1: float
    h1_semi: float
    residuals: dict
    dual_norm: float
    collar: dict = field(default_factory=dict)

    def to_dict(self):
        return {"h1": self.h1, "h1_semi": self.h1_semi, "residuals": self.residuals,
                "dual_norm": self.dual_norm, "residual_sum": sum(self.residuals.values()),
                "collar": self.collar}


def _h_minus_one(r: np.ndarray, grid: Grid) -> float:
    """Discrete ``H^{-1}`` norm of an interior residual: ``||grad z||`` with ``-Lap_h z = r``."""
    d = grid.dim
    n = grid.n
    k = np.arange(1, n)
    lam1 = (2.0 / grid.h * np.sin(0.5 * np.pi * k / n)) ** 2
    sym = sum(np.meshgrid(*([lam1] * d), indexing="ij"))
    inner = (slice(None),) + (slice(1, -1),) * d
    ri = r[inner]
    axes = tuple(range(1, d + 1))
    z = fft.idstn(fft.dstn(ri, type=1, axes=axes, norm="ortho") / sym, type=1, axes=axes, norm="ortho")
    return math.sqrt(max(float(np.sum(z * ri)) * grid.h**d, 0.0))


def build_expansion(inp: ExpansionInput) -> Expansion:
    """``w_eps = u_eps - u0 - eps chi_T(x/eps) K(grad u0)`` with its norms and the three flux residuals."""
    cs = inp.correctors
    fld = cs.field
    g = inp.u0.grid
    d, m, eps = g.dim, fld.m, inp.epsilon
    if abs(cs.T - inp.T) > 1e-9 * inp.T:
        raise ExpansionError(f"correctors at T = {cs.T}, need T = 1/eps = {inp.T}")
    idx = sample_at_scale(cs.grid, g, eps)
    a_hat = inp.a_hat if inp.a_hat is not None else effective_tensor(cs)

    du0 = _node_gradient(inp.u0.data, g)  # (k, beta, *nodes)
    Kdu = np.stack([k_smooth(DiscreteField(g, du0[k]), eps, inp.delta).data for k in range(d)])
    chi = cs.chi[(slice(None),) * 3 + idx]  # (k, beta, alpha, *nodes)
    corr = eps * np.einsum("kba...,kb...->a...", chi, Kdu)
    w = DiscreteField(g, inp.u_eps.data - inp.u0.data - corr)

    # formula-L fluxes G_i^alpha at nodes
    A = fld(g.coords() / eps)  # (*nodes, i, a, j, b)
    A = np.moveaxis(A, tuple(range(d)), tuple(range(4, 4 + d)))
    nd = (None,) * d
    G1 = np.einsum("iajb...,jb...->ia...", a_hat.values[(...,) + nd] - A, Kdu - du0)
    dual = inp.dual if inp.dual is not None else flux_and_dual(cs, a_hat)
    bn = np.stack([_edges_to_nodes(dual.b[i], i, cs.grid.dim) for i in range(d)])[(slice(None),) * 4 + idx]
    G2 = np.einsum("iajb...,jb...->ia...", bn, Kdu)
    dK = np.stack([_node_gradient(Kdu[k], g) for k in range(d)])  # (k, j, gamma, *nodes)
    G3 = eps * np.einsum("iajb...,kcb...,kjc...->ia...", A, chi, dK)
    inner = g.interior_mask()

    def norm(G):
        return math.sqrt(float(np.sum(np.sum(G**2, axis=(0, 1)) * g.quadrature_weights())))

    residuals = {"coefficient_gap": norm(G1), "flux_gap": norm(G2), "corrector_term": norm(G3)}

    op = assemble(fld, g, 0.0, scale=eps)
    r = (op.matrix @ w.data.ravel()).reshape(w.data.shape)
    r[:, ~inner] = 0.0
    dual_norm = math.sqrt(sum(_h_minus_one(r[a:a + 1], g) ** 2 for a in range(m)))

    x = g.coords()
    dist = np.min(np.minimum(x - g.origin, g.origin + g.side - x), axis=-1)
    collar = {}
    for mult in (4,):
        band = dist < mult * inp.delta
        gw = np.stack([forward_diff(w.data, i, g) for i in range(d)])
        collar[f"grad_w_in_{mult}delta"] = math.sqrt(float(np.sum(np.sum(gw[..., band] ** 2, axis=(0, 1)))) * g.h**d)
    return Expansion(w, h1_norm(w), h1_seminorm(w), residuals, dual_norm, collar)


def delta_measure(cs: CorrectorSet, reference: CorrectorSet, dual: Optional[DualCorrectorSet] = None,
                  floor_eps: Optional[float] = None) -> dict:
    """``2/T + ||grad chi_T - psi||_B2 + T^-1||chi_T||_S + T^-2||phi_T||_S + T^-1||grad phi_T||_S``.

    psi is the T_max proxy from ``reference`` and the B^2 norm is the box RMS,
    so the second term is a lower estimate.
    """
    T = cs.T
    dual = flux_and_dual(cs) if dual is None else dual
    s = cs.s_norms(1.0)
    dn = dual_s_norms(dual, cs.region, 1.0)
    parts = {
        "two_over_T": 2.0 / T,
        "psi_gap": psi_gap(cs, reference),
        "chi": s["chi"] / T,
        "phi": dn["phi"] / T**2,
        "grad_phi": dn["grad_phi"] / T,
    }
    total = sum(parts.values())
    if floor_eps is not None:
        total = max(total, 2 * floor_eps)
    parts["delta"] = total
    return parts


@dataclass
class TwoScalePoint:
    epsilon: float
    n: int
    delta: float
    delta_parts: dict
    expansion: Expansion
    l2_error: float
    h2_u0: float


def expansion_grids(fld: CoefficientField, epsilon: float, cells_per_period: Optional[int] = None):
    """Omega grid and commensurate corrector grid for ``T = 1/eps``.

    The corrector spacing ``h_c`` is a power-of-two fraction meeting the
    resolution rule; Omega then has ``1 / (eps h_c)`` cells.
    """
    T = 1.0 / epsilon
    hmax = max_spacing(fld)
    if cells_per_period is None:
        hc = 2.0 ** math.floor(math.log2(hmax)) if not math.isinf(hmax) else 0.25
    else:
        hc = 1.0 / cells_per_period
    n_omega = 1.0 / (epsilon * hc)
    if abs(n_omega - round(n_omega)) > 1e-9:
        raise ExpansionError("1/(eps h_c) must be an integer")
    n_omega = int(round(n_omega))
    if fld.period is not None:
        base = corrector_grid(fld, T)
        n_c = int(round(base.side / hc))
        cgrid = Grid(fld.dim, n_c, base.side, "periodic", origin=0.0)
    else:
        side = max(8 * T, 4 * fld.longest_wavelength) if not fld.is_constant else 4.0
        n_c = 1 << math.ceil(math.log2(side / hc - 1e-9))
        side = n_c * hc
        cgrid = Grid(fld.dim, n_c, side, "periodic", origin=T / 2 - side / 2)
    if not cgrid.fft_ready:
        raise ExpansionError("corrector grid must have a power-of-two node count")
    return Grid(fld.dim, n_omega, 1.0, "dirichlet"), cgrid


def two_scale_point(fld: CoefficientField, epsilon: float, a_hat: EffectiveTensor, reference: CorrectorSet,
                    problem: str = "sinsin", params=None, tol: float = 1e-10,
                    cells_per_period: Optional[int] = None) -> TwoScalePoint:
    """Solve both problems at one eps and build the expansion with the measured delta."""
    from .bvp import h2_norm, make_problem, solve_dirichlet

    omega, cgrid = expansion_grids(fld, epsilon, cells_per_period)
    T = 1.0 / epsilon
    cs = solve_corrector(fld, T, cgrid, tol=tol, check_box=False)
    dual = flux_and_dual(cs, a_hat)
    ref = reference
    if ref.grid != cs.grid:
        ref = solve_corrector(fld, reference.T, cgrid, tol=tol, check_box=False)
    parts = delta_measure(cs, ref, dual, floor_eps=epsilon)
    pe = make_problem(problem, fld.dim, omega.n, fld, epsilon, params, tol)
    p0 = make_problem(problem, fld.dim, omega.n, a_hat, 0.0, params, tol)
    ue, _ = solve_dirichlet(pe)
    u0, _ = solve_dirichlet(p0)
    exp = build_expansion(ExpansionInput(epsilon, parts["delta"], ue, u0, cs, a_hat, dual))
    err = l2_norm(DiscreteField(omega, ue.data - u0.data))
    return TwoScalePoint(epsilon, omega.n, parts["delta"], parts, exp, err, h2_norm(u0))
