"""Approximate correctors, effective tensors and dual correctors.

For each column ``(j, beta)`` the corrector solves, on a periodic box,

    -div(A grad chi) + T^-2 chi = div(A grad P),   P = x_j e^beta.

Layouts (``d`` space dims, ``m`` system size, trailing node axes):

* ``chi[j, beta, alpha]``        nodes
* ``grad[j, beta, i, alpha]``    i-edges, ``d/dx_i chi^alpha_{j beta}``
* ``flux[j, beta, i, alpha]``    i-edges, ``(A (e_{j beta} + grad chi))_{i alpha}``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .coeff import CoefficientField, check_elliptic
from .grid import DiscreteField, Grid, backward_diff, forward_diff, window_sup_norm
from .solver import SolveReport, SolverError, apply_flux, assemble, solve_fft, solve_krylov


class CorrectorError(ValueError):
    """Grid or box violates the corrector preconditions."""


BOX_FACTOR = 8
POINTS_PER_WAVELENGTH = 16


def max_spacing(fld: CoefficientField, points=POINTS_PER_WAVELENGTH) -> float:
    if fld.is_constant:
        return math.inf
    return 2 * math.pi / (points * fld.max_frequency)


def commensurate(fld: CoefficientField, side: float, tol=1e-9) -> bool:
    """True if the box side is a whole number of periods in every direction."""
    if fld.period is None:
        return fld.is_constant
    ratios = side / np.asarray(fld.period, dtype=float)
    return bool(np.all(np.abs(ratios - np.round(ratios)) < tol * np.maximum(ratios, 1)))


def _common_period(period) -> float:
    fr = [Fraction(float(p)).limit_denominator(10**6) for p in np.atleast_1d(period)]
    num = math.lcm(*[f.numerator for f in fr])
    den = math.gcd(*[f.denominator for f in fr])
    return num / den


def corrector_grid(fld: CoefficientField, T: float, box_factor: float = BOX_FACTOR,
                   points=POINTS_PER_WAVELENGTH, min_side: float = 4.0, center=None) -> Grid:
    """Periodic power-of-two grid obeying the truncation and resolution rules.

    Periodic fields get the smallest whole number of periods >= ``min_side``
    (the torus problem is then exact); otherwise the side is
    ``max(box_factor T, 4 * longest wavelength)``.  The box is centred on
    ``center`` (default origin).
    """
    if fld.period is not None:
        p = _common_period(fld.period)
        side = p * max(1, math.ceil(min_side / p - 1e-12))
    elif fld.is_constant:
        side = max(min_side, 4.0)
    else:
        side = max(box_factor * T, 4 * fld.longest_wavelength, min_side)
    hmax = max_spacing(fld, points)
    n = 16 if math.isinf(hmax) else max(16, 1 << math.ceil(math.log2(side / hmax - 1e-9)))
    c = 0.0 if center is None else float(center)
    return Grid(fld.dim, n, side, "periodic", origin=c - side / 2)


def trusted_region(fld: CoefficientField, grid: Grid, fraction: float = 0.25) -> Optional[np.ndarray]:
    """Nodes where the torus solution stands in for the whole-space one.

    None (everywhere) for commensurate periodic boxes; otherwise the central
    cube of half-width ``fraction * side``.
    """
    if commensurate(fld, grid.side):
        return None
    center = grid.origin + grid.side / 2
    x = grid.coords()
    return np.all(np.abs(x - center) <= fraction * grid.side + 1e-12, axis=-1)


@dataclass
class CorrectorSet:
    field: CoefficientField
    T: float
    grid: Grid
    chi: np.ndarray
    grad: np.ndarray
    flux: np.ndarray
    reports: list
    residuals: list
    region: Optional[np.ndarray] = None

    @property
    def columns(self):
        d, m = self.field.dim, self.field.m
        return [(j, b) for j in range(d) for b in range(m)]

    def chi_field(self, j=None, beta=0) -> DiscreteField:
        if j is None:
            return DiscreteField(self.grid, self.chi.reshape((-1,) + self.grid.node_shape))
        return DiscreteField(self.grid, self.chi[j, beta])

    def grad_field(self, j, beta=0) -> DiscreteField:
        return DiscreteField(self.grid, self.grad[j, beta], staggered=True)

    def s_norms(self, R: float = 1.0) -> dict:
        """Max over columns of the ``S^2_R`` norms of chi and grad chi (trusted region)."""
        h = self.grid.h
        chi = max(window_sup_norm(self.chi[j, b], h, 2, R, region=self.region) for j, b in self.columns)
        grad = max(
            window_sup_norm(self.grad[j, b].reshape((-1,) + self.grid.node_shape), h, 2, R,
                            region=self.region)
            for j, b in self.columns
        )
        return {"chi": chi, "grad": grad}


def unit_gradient(grid: Grid, m: int, j: int, beta: int) -> np.ndarray:
    """Edge field of ``grad P_j^beta``: one in slot (j, beta), zero elsewhere."""
    G = np.zeros((grid.dim, m) + grid.node_shape)
    G[j, beta] = 1.0
    return G


def solve_corrector(fld: CoefficientField, T: float, grid: Optional[Grid] = None, tol: float = 1e-10,
                    preconditioner: str = "spectral", maxiter: int = 20000,
                    check_box: bool = True) -> CorrectorSet:
    """Approximate correctors at scale ``T`` for every column (j, beta)."""
    if T <= 0:
        raise CorrectorError("T must be positive")
    check_elliptic(fld)
    grid = corrector_grid(fld, T) if grid is None else grid
    if not grid.periodic:
        raise CorrectorError("correctors are computed on a periodic box")
    if grid.h > max_spacing(fld) * (1 + 1e-9):
        raise CorrectorError(f"spacing {grid.h:.4g} does not resolve the fastest mode "
                             f"(need <= {max_spacing(fld):.4g})")
    if check_box and grid.side < BOX_FACTOR * T * (1 - 1e-12) and not commensurate(fld, grid.side):
        raise CorrectorError(f"box side {grid.side} < {BOX_FACTOR} T = {BOX_FACTOR * T}")

    d, m = fld.dim, fld.m
    lam = T**-2
    op = assemble(fld, grid, lam)
    shape = grid.node_shape
    chi = np.zeros((d, m, m) + shape)
    grad = np.zeros((d, m, d, m) + shape)
    flux = np.zeros((d, m, d, m) + shape)
    reports, residuals = [], []
    for j in range(d):
        for b in range(m):
            G = unit_gradient(grid, m, j, b)
            F0 = apply_flux(op.samples, G, grid)
            rhs = -(op.gradient.T @ F0.ravel())
            x, rep = solve_krylov(op, rhs, tol=tol, preconditioner=preconditioner, maxiter=maxiter)
            u = x.reshape((m,) + shape)
            chi[j, b] = u
            gu = np.stack([forward_diff(u, i, grid) for i in range(d)])
            grad[j, b] = gu
            flux[j, b] = apply_flux(op.samples, G + gu, grid)
            bn = np.linalg.norm(rhs)
            residuals.append(float(np.linalg.norm(op.matrix @ x - rhs) / bn) if bn else 0.0)
            reports.append(rep)
    return CorrectorSet(fld, T, grid, chi, grad, flux, reports, residuals, trusted_region(fld, grid))


@dataclass
class EffectiveTensor:
    values: np.ndarray  # (d, m, d, m)
    T: float

    @property
    def matrix(self) -> np.ndarray:
        d, m = self.values.shape[:2]
        return self.values.reshape(d * m, d * m)

    @property
    def symmetric_part(self) -> np.ndarray:
        return 0.5 * (self.matrix + self.matrix.T)

    @property
    def skew_part(self) -> np.ndarray:
        return 0.5 * (self.matrix - self.matrix.T)

    @property
    def eig_range(self):
        ev = np.linalg.eigvalsh(self.symmetric_part)
        return float(ev.min()), float(ev.max())

    def transpose(self) -> "EffectiveTensor":
        return EffectiveTensor(np.ascontiguousarray(self.values.transpose(2, 3, 0, 1)), self.T)

    def to_dict(self):
        lo, hi = self.eig_range
        return {"T": self.T, "values": self.matrix.tolist(), "eig_min": lo, "eig_max": hi,
                "skew_norm": float(np.abs(self.skew_part).max())}


def effective_tensor(cs: CorrectorSet) -> EffectiveTensor:
    """Box average of ``A + A grad chi_T``: ``A_hat[i, a, j, b] = <flux[j, b, i, a]>``."""
    axes = tuple(range(-cs.grid.dim, 0))
    avg = cs.flux.mean(axis=axes)  # (j, b, i, a)
    return EffectiveTensor(np.ascontiguousarray(avg.transpose(2, 3, 0, 1)), cs.T)


@dataclass
class DualCorrectorSet:
    """``b_T``, ``phi_T`` (both on i-edges, layout [i, alpha, j, beta]) and ``h_T`` (nodes, [j, alpha, beta])."""

    b: np.ndarray
    b_mean: np.ndarray
    phi: np.ndarray
    h: np.ndarray
    T: float
    grid: Grid
    diagnostics: dict = field(default_factory=dict)


def flux_and_dual(cs: CorrectorSet, a_hat: Optional[EffectiveTensor] = None) -> DualCorrectorSet:
    g = cs.grid
    if not g.fft_ready:
        raise CorrectorError("dual correctors need a periodic power-of-two grid")
    a_hat = effective_tensor(cs) if a_hat is None else a_hat
    d = g.dim
    nd = (None,) * d
    b = cs.flux.transpose(2, 3, 0, 1, *range(4, 4 + d)) - a_hat.values[(...,) + nd]
    axes = tuple(range(-d, 0))
    b_mean = b.mean(axis=axes)
    lam = cs.T**-2
    phi = solve_fft(lam, DiscreteField(g, (b - b_mean[(...,) + nd]).reshape((-1,) + g.node_shape))).data
    phi = phi.reshape(b.shape)
    # h_{j}^{alpha beta} = sum_i d_i phi_{ij}^{alpha beta}; phi_ij sits on i-edges
    h = sum(backward_diff(phi[i], i, g) for i in range(d))  # (alpha, j, beta)
    h = np.ascontiguousarray(h.transpose(1, 0, 2, *range(3, 3 + d)))
    dual = DualCorrectorSet(b, b_mean, phi, h, cs.T, g)
    dual.diagnostics = dual_residuals(cs, dual)
    return dual


def _rel(res, ref):
    ref = float(np.sqrt(np.mean(ref**2)))
    return float(np.sqrt(np.mean(res**2))) / ref if ref > 0 else float(np.sqrt(np.mean(res**2)))


def dual_residuals(cs: CorrectorSet, dual: DualCorrectorSet) -> dict:
    """Residuals of the flux reconstruction and divergence identities.

    ``staggered_*`` use the mimetic differences of the scheme (exact up to
    solver/FFT precision); ``collocated_*`` move every field to nodes and use
    centred differences, which measures how well the discrete fields satisfy
    the continuum identities (discretization-limited).
    """
    g = cs.grid
    d = g.dim
    lam = cs.T**-2
    b, phi = dual.b, dual.phi
    nd = (None,) * d
    out = {}

    # -- staggered (mimetic) forms
    recon = np.empty_like(b)
    for i in range(d):
        acc = dual.b_mean[i][(...,) + nd] + lam * phi[i]
        for k in range(d):
            # d_k(d_k phi_ij - d_i phi_kj) lands on i-edges
            t1 = backward_diff(forward_diff(phi[i], k, g), k, g)
            t2 = backward_diff(forward_diff(phi[k], i, g), k, g)
            acc = acc - (t1 - t2)
            # d_i(d_k phi_kj)
            acc = acc - forward_diff(backward_diff(phi[k], k, g), i, g)
        recon[i] = acc
    out["staggered_flux_identity"] = _rel(b - recon, b)
    div_b = sum(backward_diff(b[i], i, g) for i in range(d))  # (alpha, j, beta)
    chi = cs.chi.transpose(2, 0, 1, *range(3, 3 + d))  # (alpha, j, beta)
    out["staggered_divergence_identity"] = _rel(div_b - lam * chi, lam * chi if np.any(chi) else div_b)

    # -- collocated forms
    def to_nodes(arr, i):
        return 0.5 * (arr + np.roll(arr, 1, axis=arr.ndim - d + i))

    def cdiff(arr, k):
        ax = arr.ndim - d + k
        return (np.roll(arr, -1, axis=ax) - np.roll(arr, 1, axis=ax)) / (2 * g.h)

    bn = np.stack([to_nodes(b[i], i) for i in range(d)])
    pn = np.stack([to_nodes(phi[i], i) for i in range(d)])
    recon = np.empty_like(bn)
    for i in range(d):
        acc = dual.b_mean[i][(...,) + nd] + lam * pn[i]
        for k in range(d):
            acc = acc - cdiff(cdiff(pn[i], k) - cdiff(pn[k], i), k) - cdiff(cdiff(pn[k], k), i)
        recon[i] = acc
    out["collocated_flux_identity"] = _rel(bn - recon, bn)
    div_b = sum(cdiff(bn[i], i) for i in range(d))
    out["collocated_divergence_identity"] = _rel(div_b - lam * chi, lam * chi if np.any(chi) else div_b)
    return out


def dual_s_norms(dual: DualCorrectorSet, region=None, R: float = 1.0) -> dict:
    g = dual.grid
    d = g.dim
    phi = dual.phi.reshape((-1,) + g.node_shape)
    gphi = np.concatenate([forward_diff(phi, k, g) for k in range(d)])
    return {
        "phi": window_sup_norm(phi, g.h, 2, R, region=region),
        "grad_phi": window_sup_norm(gphi, g.h, 2, R, region=region),
        "b_mean_norm": float(np.linalg.norm(dual.b_mean)),
    }


def psi_gap(cs: CorrectorSet, reference: CorrectorSet) -> float:
    """RMS of ``grad chi_T - psi`` with psi replaced by ``grad chi_{T_max}`` (same grid)."""
    if cs.grid != reference.grid:
        raise CorrectorError("psi-proxy comparison needs a common grid")
    diff = cs.grad - reference.grad
    if cs.region is not None:
        diff = diff[..., cs.region]
    return float(np.sqrt(np.mean(np.sum(diff.reshape(cs.field.dim * cs.field.m, cs.field.dim * cs.field.m, -1) ** 2, axis=1))))


def psi_quadratic_gap(cs: CorrectorSet, reference: CorrectorSet) -> list:
    """Both sides of ``mu <|psi - grad chi_T|^2> + T^-2 <|chi_T|^2> <= <A (psi - grad chi_T) . psi>``.

    psi is replaced by ``grad chi_{T_max}`` from ``reference``; one
    ``(lhs, rhs)`` pair per column, lhs being the quadratic form.
    """
    if cs.grid != reference.grid:
        raise CorrectorError("psi-proxy comparison needs a common grid")
    samples = assemble(cs.field, cs.grid, 0.0).samples
    out = []
    for j, b in cs.columns:
        diff = reference.grad[j, b] - cs.grad[j, b]
        form = float(np.mean(np.sum(apply_flux(samples, diff, cs.grid) * reference.grad[j, b], axis=(0, 1))))
        lower = (cs.field.mu * float(np.mean(np.sum(diff**2, axis=(0, 1))))
                 + cs.T**-2 * float(np.mean(np.sum(cs.chi[j, b] ** 2, axis=0))))
        out.append((form, lower))
    return out
