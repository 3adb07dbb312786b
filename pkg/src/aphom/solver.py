"""Assembly and solution of ``-div(A grad u) + lam u = rhs`` on uniform grids.

The operator is ``D^T M D + lam I`` with ``D`` the forward-difference
gradient onto edges and ``M`` the flux map: diagonal blocks use ``A`` at the
edge midpoint, off-diagonal blocks couple an i-edge to its four
neighbouring j-edges with weight ``(A(e) + A(e'))/8``.  This makes ``M``
symmetric when ``A`` is, and the matrix of the adjoint field equals the
transpose exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import fft

from .coeff import CoefficientField, evaluate
from .grid import DiscreteField, Grid, discrete_laplace_symbol


class SolverError(RuntimeError):
    """Iteration budget exhausted or singular system."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    residual: float
    wall_time: float
    method: str

    def to_dict(self):
        return {"iterations": self.iterations, "residual": self.residual, "method": self.method,
                "wall_time": self.wall_time}


def edge_samples(coef, grid: Grid, scale: float = 1.0) -> np.ndarray:
    """Coefficient tensor at every edge midpoint, shape (d, d, m, d, m, *nodes).

    ``coef`` is a CoefficientField (sampled at ``x / scale``) or a constant
    (d, m, d, m) tensor.  Slot 0 indexes the edge direction.
    """
    if isinstance(coef, CoefficientField):
        out = []
        for i in range(grid.dim):
            vals = evaluate(coef, grid.edge_coords(i) / scale)
            out.append(np.moveaxis(vals, tuple(range(grid.dim)), tuple(range(-grid.dim, 0))))
        return np.stack(out)
    tensor = np.asarray(coef, dtype=float)
    reps = (grid.dim,) + tensor.shape + grid.node_shape
    return np.broadcast_to(tensor[(None, ...) + (None,) * grid.dim], reps)


def _flat_index(grid: Grid) -> np.ndarray:
    return np.arange(grid.size).reshape(grid.node_shape)


def _neighbor(grid: Grid, idx: np.ndarray, shift: dict):
    """Index array shifted by ``shift`` ({axis: offset}) and validity mask."""
    valid = np.ones(grid.node_shape, dtype=bool)
    out = idx
    for ax, off in shift.items():
        if off == 0:
            continue
        out = np.roll(out, -off, axis=ax)
        if not grid.periodic:
            pos = np.arange(grid.nodes_per_side).reshape([-1 if a == ax else 1 for a in range(grid.dim)])
            ok = (pos + off >= 0) & (pos + off < grid.nodes_per_side)
            valid = valid & ok
    return out, valid


def gradient_matrix(grid: Grid, m: int = 1) -> sp.csr_matrix:
    """Forward differences, rows ordered (i, alpha, node), columns (alpha, node)."""
    N = grid.size
    idx = _flat_index(grid)
    rows, cols, vals = [], [], []
    for i in range(grid.dim):
        nb, valid = _neighbor(grid, idx, {i: 1})
        valid = valid & grid.edge_mask(i)
        for a in range(m):
            r = (i * m + a) * N + idx[valid]
            rows += [r, r]
            cols += [a * N + nb[valid], a * N + idx[valid]]
            vals += [np.full(r.size, 1.0 / grid.h), np.full(r.size, -1.0 / grid.h)]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.dim * m * N, m * N),
    )


def flux_matrix(samples: np.ndarray, grid: Grid, skip=None) -> sp.csr_matrix:
    """Sparse flux map M acting on edge gradients; ``skip`` masks identically-zero blocks."""
    d = grid.dim
    m = samples.shape[2]
    N = grid.size
    idx = _flat_index(grid)
    rows, cols, vals = [], [], []
    for i in range(d):
        emask = grid.edge_mask(i)
        for a in range(m):
            for j in range(d):
                for b in range(m):
                    if skip is not None and skip[i, a, j, b]:
                        continue
                    here = samples[i, i, a, j, b]
                    row_base = (i * m + a) * N
                    col_base = (j * m + b) * N
                    if i == j:
                        r = idx[emask]
                        rows.append(row_base + r)
                        cols.append(col_base + r)
                        vals.append(here[emask])
                        continue
                    there = samples[j, i, a, j, b]
                    for si, sj in ((0, 0), (1, 0), (0, -1), (1, -1)):
                        q, valid = _neighbor(grid, idx, {i: si, j: sj})
                        qe = np.roll(np.roll(grid.edge_mask(j), -si, axis=i), -sj, axis=j)
                        ok = valid & emask & qe
                        tq = np.roll(np.roll(there, -si, axis=i), -sj, axis=j)
                        rows.append(row_base + idx[ok])
                        cols.append(col_base + q[ok])
                        vals.append(((here + tq) / 8.0)[ok])
    if not rows:
        return sp.csr_matrix((d * m * N, d * m * N))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(d * m * N, d * m * N),
    )


def apply_flux(samples: np.ndarray, G: np.ndarray, grid: Grid) -> np.ndarray:
    """Matrix-free flux map; ``G`` and the result have shape (d, m, *nodes)."""
    d = grid.dim
    out = np.zeros_like(G, dtype=float)
    masks = [grid.edge_mask(i) for i in range(d)]
    Gm = np.stack([G[j] * masks[j] for j in range(d)])
    for i in range(d):
        out[i] += np.einsum("ab...,b...->a...", samples[i, i, :, i], Gm[i])
        for j in range(d):
            if j == i:
                continue
            here = samples[i, i, :, j]  # (m, m, *nodes)
            there = samples[j, i, :, j]
            acc = np.zeros_like(out[i])
            for si, sj in ((0, 0), (1, 0), (0, -1), (1, -1)):
                def sh(a):
                    return np.roll(np.roll(a, -si, axis=a.ndim - d + i), -sj, axis=a.ndim - d + j)

                gq = sh(Gm[j])
                if not grid.periodic:
                    gq = gq * _shift_valid(grid, i, si, j, sj)
                acc += np.einsum("ab...,b...->a...", (here + sh(there)) / 8.0, gq)
            out[i] += acc
        out[i] *= masks[i]
    return out


def _shift_valid(grid, i, si, j, sj):
    pos = np.indices(grid.node_shape)
    n = grid.nodes_per_side
    return ((pos[i] + si >= 0) & (pos[i] + si < n) & (pos[j] + sj >= 0) & (pos[j] + sj < n))


@dataclass
class SparseOperator:
    """``-div(A grad .) + lam`` on all nodes of ``grid`` (restricted to ``free`` for solves)."""

    matrix: sp.csr_matrix
    lam: float
    symmetric: bool
    grid: Grid
    m: int
    samples: np.ndarray = field(repr=False)
    gradient: sp.csr_matrix = field(repr=False)
    flux: sp.csr_matrix = field(repr=False)
    free: Optional[np.ndarray] = None  # flat indices of unknowns (Dirichlet interior)
    mean_diagonal: np.ndarray = None

    @property
    def shape(self):
        return self.matrix.shape

    def restricted(self):
        if self.free is None:
            return self.matrix
        return self.matrix[self.free][:, self.free]


def assemble(coef, grid: Grid, lam: float = 0.0, scale: float = 1.0) -> SparseOperator:
    """Assemble ``D^T M D + lam I`` for ``A(x / scale)`` on ``grid``."""
    if lam < 0:
        raise ValueError("zeroth-order coefficient must be non-negative")
    if isinstance(coef, CoefficientField):
        from .coeff import check_elliptic

        check_elliptic(coef)
        symmetric = coef.is_symmetric()
        skip = coef.zero_blocks()
        m = coef.m
    else:
        tensor = np.asarray(coef, dtype=float)
        mat = tensor.reshape(tensor.shape[0] * tensor.shape[1], -1)
        symmetric = bool(np.allclose(mat, mat.T, rtol=0, atol=1e-14 * np.abs(mat).max()))
        skip = tensor == 0
        m = tensor.shape[1]
    samples = edge_samples(coef, grid, scale)
    D = gradient_matrix(grid, m)
    M = flux_matrix(samples, grid, skip)
    K = (D.T @ (M @ D)).tocsr()
    if lam:
        K = (K + lam * sp.identity(K.shape[0], format="csr")).tocsr()
    if symmetric:
        K = (0.5 * (K + K.T)).tocsr()
    free = None
    if not grid.periodic:
        free = np.concatenate([a * grid.size + np.flatnonzero(grid.interior_mask()) for a in range(m)])
    diag = np.array([np.mean(samples[i, i, a, i, a]) for a in range(m) for i in range(grid.dim)])
    mean_diag = diag.reshape(m, grid.dim).mean(axis=1)
    return SparseOperator(K, lam, symmetric, grid, m, samples, D, M, free, mean_diag)


def operator_rayleigh(op: SparseOperator, probes=10, seed=0) -> float:
    rng = np.random.default_rng(seed)
    K = op.restricted()
    return min(float(v @ (K @ v)) / float(v @ v) for v in rng.standard_normal((probes, K.shape[0])))


# --- preconditioners ------------------------------------------------------------


def _spectral_preconditioner(op: SparseOperator) -> spla.LinearOperator:
    """Inverse of ``mean(a_ii) (-Laplace) + lam`` diagonalised by FFT (torus) or DST-I (box)."""
    g = op.grid
    m = op.m
    if g.periodic:
        sym = discrete_laplace_symbol(g)
        denom = np.stack([op.mean_diagonal[a] * sym + op.lam for a in range(m)])
        zero = denom == 0
        denom[zero] = 1.0
        axes = tuple(range(1, g.dim + 1))

        def apply(r):
            rh = fft.fftn(r.reshape((m,) + g.node_shape), axes=axes) / denom
            rh[zero] = 0.0
            return np.real(fft.ifftn(rh, axes=axes)).ravel()

        n = op.shape[0]
    else:
        k = np.arange(1, g.n)
        lam1 = (2.0 / g.h * np.sin(0.5 * np.pi * k / g.n)) ** 2
        sym = sum(np.meshgrid(*([lam1] * g.dim), indexing="ij"))
        denom = np.stack([op.mean_diagonal[a] * sym + op.lam for a in range(m)])
        inner = (m,) + (g.n - 1,) * g.dim
        axes = tuple(range(1, g.dim + 1))

        def apply(r):
            rh = fft.dstn(r.reshape(inner), type=1, axes=axes, norm="ortho") / denom
            return fft.idstn(rh, type=1, axes=axes, norm="ortho").ravel()

        n = len(op.free)
    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def _jacobi(K) -> spla.LinearOperator:
    inv = 1.0 / K.diagonal()
    return spla.LinearOperator(K.shape, matvec=lambda r: inv * r, dtype=float)


def solve_krylov(op: SparseOperator, rhs: np.ndarray, tol: float = 1e-10, maxiter: int = 20000,
                 preconditioner: str = "spectral", x0=None):
    """Solve ``K u = rhs`` on the free unknowns; returns (u on free unknowns, SolveReport).

    PCG for symmetric operators, BiCGStab otherwise.  ``rhs`` is indexed like
    the restricted operator.  Periodic problems with ``lam = 0`` are solved
    in the mean-zero gauge and need a mean-zero right-hand side.
    """
    t0 = time.perf_counter()
    K = op.restricted()
    b = np.asarray(rhs, dtype=float).ravel()
    method = "PCG" if op.symmetric else "BiCGStab"
    singular = op.grid.periodic and op.lam == 0
    if singular:
        N = op.grid.size
        for a in range(op.m):
            s = b[a * N:(a + 1) * N].sum()
            if abs(s) > 1e-10 * max(np.abs(b).sum(), 1e-300):
                raise SolverError("lam = 0 on a periodic grid needs a mean-zero right-hand side")
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), SolveReport(0, 0.0, time.perf_counter() - t0, method)
    if preconditioner == "spectral":
        P = _spectral_preconditioner(op)
    elif preconditioner == "jacobi":
        P = _jacobi(K)
    elif preconditioner in (None, "none"):
        P = None
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")
    count = [0]

    def cb(_):
        count[0] += 1

    solver = spla.cg if op.symmetric else spla.bicgstab
    x, info = solver(K, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=P, callback=cb)
    if singular:
        N = op.grid.size
        for a in range(op.m):
            x[a * N:(a + 1) * N] -= x[a * N:(a + 1) * N].mean()
    res = float(np.linalg.norm(b - K @ x) / bnorm)
    report = SolveReport(count[0], res, time.perf_counter() - t0, method)
    if info != 0 and res > tol * 10:
        raise SolverError(f"{method} stopped after {count[0]} iterations with residual {res:.3e}", report)
    return x, report


def solve_fft(lam: float, rhs: DiscreteField) -> DiscreteField:
    """Invert ``-Laplace_h + lam`` (2d+1-point stencil) on a periodic power-of-two grid."""
    g = rhs.grid
    if not g.fft_ready:
        raise ValueError("FFT solve needs a periodic grid with n a power of two")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    axes = tuple(range(rhs.data.ndim - g.dim, rhs.data.ndim))
    rh = fft.fftn(rhs.data, axes=axes)
    denom = discrete_laplace_symbol(g) + lam
    zero_idx = (Ellipsis,) + (0,) * g.dim
    if lam == 0:
        if np.max(np.abs(rh[zero_idx])) > 1e-10 * max(np.abs(rh).max(), 1e-300):
            raise SolverError("lam = 0 needs a mean-zero right-hand side")
        denom = denom.copy()
        denom[(0,) * g.dim] = 1.0
        rh[zero_idx] = 0.0
    out = np.real(fft.ifftn(rh / denom, axes=axes))
    return DiscreteField(g, out, staggered=rhs.staggered)
