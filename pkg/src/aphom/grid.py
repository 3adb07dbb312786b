"""Uniform grids, discrete fields and the staggered difference operators.

Nodes sit at ``origin + h k``.  Component ``i`` of an edge field lives on the
i-edge starting at node ``k``, i.e. at ``origin + h (k + e_i / 2)``.  On a
periodic grid every node owns one edge per direction; on a Dirichlet grid
(``n`` cells, ``n + 1`` nodes per side) the edge leaving the last node is
absent and its slot is kept at zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import fft, signal


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int
    side: float
    boundary: str = "periodic"
    origin: float = 0.0

    def __post_init__(self):
        if self.boundary not in ("periodic", "dirichlet"):
            raise ValueError(f"unknown boundary type {self.boundary!r}")
        if self.n < 4:
            raise ValueError("need at least 4 cells per side")
        if not self.side > 0:
            raise ValueError("box side must be positive")

    @property
    def h(self) -> float:
        return self.side / self.n

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def nodes_per_side(self) -> int:
        return self.n if self.periodic else self.n + 1

    @property
    def node_shape(self) -> tuple:
        return (self.nodes_per_side,) * self.dim

    @property
    def size(self) -> int:
        return self.nodes_per_side**self.dim

    @property
    def fft_ready(self) -> bool:
        return self.periodic and (self.n & (self.n - 1)) == 0

    def axis(self) -> np.ndarray:
        return self.origin + self.h * np.arange(self.nodes_per_side)

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (*node_shape, d)."""
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.dim), indexing="ij"), axis=-1)

    def edge_coords(self, i: int) -> np.ndarray:
        x = self.coords().copy()
        x[..., i] += 0.5 * self.h
        return x

    def edge_mask(self, i: int) -> np.ndarray:
        """True where the i-edge leaving a node exists."""
        mask = np.ones(self.node_shape, dtype=bool)
        if not self.periodic:
            idx = [slice(None)] * self.dim
            idx[i] = -1
            mask[tuple(idx)] = False
        return mask

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.node_shape, dtype=bool)
        if not self.periodic:
            for i in range(self.dim):
                idx = [slice(None)] * self.dim
                idx[i] = 0
                mask[tuple(idx)] = False
                idx[i] = -1
                mask[tuple(idx)] = False
        return mask

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights (cell volume included)."""
        w1 = np.full(self.nodes_per_side, self.h)
        if not self.periodic:
            w1[0] = w1[-1] = 0.5 * self.h
        w = np.ones(())
        for _ in range(self.dim):
            w = np.multiply.outer(w, w1)
        return w

    def header(self) -> dict:
        return {"dim": self.dim, "n": self.n, "boxSide": self.side, "boundary": self.boundary,
                "origin": self.origin}


@dataclass
class DiscreteField:
    """Field values on a grid.

    ``data`` has shape ``(c, *node_shape)`` for node fields and
    ``(d, c, *node_shape)`` for edge fields (``staggered=True``).
    """

    grid: Grid
    data: np.ndarray
    staggered: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        lead = 2 if self.staggered else 1
        if self.data.shape[lead:] != self.grid.node_shape:
            raise ValueError(f"data shape {self.data.shape} does not fit grid {self.grid.node_shape}")
        if self.staggered and self.data.shape[0] != self.grid.dim:
            raise ValueError("edge field needs one slot per direction")

    @property
    def components(self) -> int:
        if self.staggered:
            return self.data.shape[0] * self.data.shape[1]
        return self.data.shape[0]

    @classmethod
    def scalar(cls, grid: Grid, values) -> "DiscreteField":
        return cls(grid, np.asarray(values, dtype=float)[None])

    @classmethod
    def from_function(cls, grid: Grid, func) -> "DiscreteField":
        vals = np.asarray(func(grid.coords()), dtype=float)
        if vals.shape == grid.node_shape:
            vals = vals[None]
        else:
            vals = np.moveaxis(vals, -1, 0)
        return cls(grid, vals)

    def flat(self) -> np.ndarray:
        return self.data.reshape((-1,) + self.grid.node_shape)


def _axes(grid: Grid) -> tuple:
    return tuple(range(-grid.dim, 0))


def forward_diff(arr: np.ndarray, i: int, grid: Grid) -> np.ndarray:
    """(a[k + e_i] - a[k]) / h along spatial axis i (zero where the edge is absent)."""
    ax = arr.ndim - grid.dim + i
    if grid.periodic:
        return (np.roll(arr, -1, axis=ax) - arr) / grid.h
    out = np.zeros_like(arr)
    hi = [slice(None)] * arr.ndim
    lo = [slice(None)] * arr.ndim
    hi[ax] = slice(1, None)
    lo[ax] = slice(None, -1)
    out[tuple(lo)] = (arr[tuple(hi)] - arr[tuple(lo)]) / grid.h
    return out


def backward_diff(arr: np.ndarray, i: int, grid: Grid) -> np.ndarray:
    """(a[k] - a[k - e_i]) / h along spatial axis i; missing neighbours read as zero."""
    ax = arr.ndim - grid.dim + i
    if grid.periodic:
        return (arr - np.roll(arr, 1, axis=ax)) / grid.h
    prev = np.zeros_like(arr)
    hi = [slice(None)] * arr.ndim
    lo = [slice(None)] * arr.ndim
    hi[ax] = slice(1, None)
    lo[ax] = slice(None, -1)
    prev[tuple(hi)] = arr[tuple(lo)]
    return (arr - prev) / grid.h


def gradient(u: DiscreteField) -> DiscreteField:
    if u.staggered:
        raise ValueError("gradient expects a node field")
    g = u.grid
    return DiscreteField(g, np.stack([forward_diff(u.data, i, g) for i in range(g.dim)]), staggered=True)


def divergence(F: DiscreteField) -> DiscreteField:
    """Negative adjoint of :func:`gradient`; on Dirichlet grids only interior values are meaningful."""
    if not F.staggered:
        raise ValueError("divergence expects an edge field")
    g = F.grid
    out = sum(backward_diff(F.data[i], i, g) for i in range(g.dim))
    return DiscreteField(g, out)


def inner(a: DiscreteField, b: DiscreteField) -> float:
    """Discrete L^2 pairing with periodic (rectangle) or trapezoid weights."""
    if a.staggered != b.staggered:
        raise ValueError("cannot pair node and edge fields")
    w = a.grid.h**a.grid.dim if a.grid.periodic else a.grid.quadrature_weights()
    return float(np.sum(a.data * b.data * w))


def l2_norm(u: DiscreteField) -> float:
    g = u.grid
    sq = np.sum(u.data.reshape((-1,) + g.node_shape) ** 2, axis=0)
    if g.periodic or u.staggered:
        return math.sqrt(float(np.sum(sq)) * g.h**g.dim)
    return math.sqrt(float(np.sum(sq * g.quadrature_weights())))


def h1_seminorm(u: DiscreteField) -> float:
    return l2_norm(gradient(u))


def h1_norm(u: DiscreteField) -> float:
    return math.hypot(l2_norm(u), h1_seminorm(u))


def mean(u: DiscreteField, region=None) -> np.ndarray:
    """Average of each component over the torus (or the masked region)."""
    arr = u.data
    nsp = u.grid.dim
    if region is None:
        return arr.mean(axis=tuple(range(arr.ndim - nsp, arr.ndim)))
    return arr[..., region].mean(axis=-1)


# --- windowed norms ---------------------------------------------------------


def _trapezoid_kernel(width: int) -> np.ndarray:
    k = np.ones(width + 1)
    k[0] = k[-1] = 0.5
    return k / width


def window_cells(R: float, h: float) -> int:
    return max(1, int(round(2 * R / h)))


def window_average(values: np.ndarray, h: float, R: float, periodic: bool = True) -> np.ndarray:
    """Trapezoid average over cubes of half-width R around every node.

    Periodic input wraps; otherwise only windows fully inside the array are
    returned ("valid" convolution).
    """
    w = window_cells(R, h)
    k1 = _trapezoid_kernel(w)
    dim = values.ndim
    if periodic:
        n = values.shape[0]
        if w + 1 > n:
            raise ValueError("window wider than the periodic box")
        out = values
        for ax in range(dim):
            ker = np.zeros(values.shape[ax])
            idx = (np.arange(w + 1) - w // 2) % values.shape[ax]
            np.add.at(ker, idx, k1)
            shape = [1] * dim
            shape[ax] = -1
            # circular correlation with a (nearly) symmetric kernel
            out = np.real(fft.ifft(fft.fft(out, axis=ax) * np.conj(fft.fft(ker)).reshape(shape), axis=ax))
        return out
    kern = k1
    for _ in range(dim - 1):
        kern = np.multiply.outer(kern, k1)
    if any(s < w + 1 for s in values.shape):
        raise ValueError("window larger than the domain")
    return signal.fftconvolve(values, kern, mode="valid")


def window_sup_norm(arr: np.ndarray, h: float, p: float, R: float, periodic: bool = True,
                    region: Optional[np.ndarray] = None) -> float:
    """Discrete ``S^p_R`` norm: max over window positions of the p-average of |arr|.

    ``arr`` has shape (c, *nodes); components at the same index are treated
    as co-located (edge offsets of h/2 are ignored).
    """
    arr = np.asarray(arr, dtype=float)
    mag = np.sum(arr**2, axis=0) ** (p / 2)
    avg = window_average(mag, h, R, periodic)
    if region is not None:
        if periodic:
            avg = avg[region]
        else:
            raise ValueError("region restriction needs a periodic grid")
    return float(np.max(avg)) ** (1.0 / p)


def windowed_norm(u: DiscreteField, p: float, R: float, region=None) -> float:
    return window_sup_norm(u.flat(), u.grid.h, p, R, periodic=u.grid.periodic, region=region)


# --- smoothing ----------------------------------------------------------------


def bump_kernel(eps: float, h: float, dim: int) -> np.ndarray:
    """Unit-mass samples of ``exp(-1/(1-|x|^2))`` scaled to radius eps."""
    if eps < 2 * h:
        raise ValueError(f"mollifier radius {eps} under-resolved on spacing {h}")
    r = int(math.floor(eps / h))
    ax = np.arange(-r, r + 1) * h / eps
    x2 = sum(g**2 for g in np.meshgrid(*([ax] * dim), indexing="ij"))
    ker = np.zeros_like(x2)
    inside = x2 < 1
    ker[inside] = np.exp(-1.0 / (1.0 - x2[inside]))
    return ker / ker.sum()


def mollify(u: DiscreteField, eps: float) -> DiscreteField:
    """Convolution with the compactly supported bump at scale eps.

    Periodic grids wrap around; on Dirichlet grids the field is extended by
    zero outside the domain.
    """
    g = u.grid
    ker = bump_kernel(eps, g.h, g.dim)
    arr = u.flat()
    out = np.empty_like(arr)
    r = ker.shape[0] // 2
    for c in range(arr.shape[0]):
        if g.periodic:
            padded = np.pad(arr[c], r, mode="wrap")
            out[c] = signal.fftconvolve(padded, ker, mode="valid")
        else:
            out[c] = signal.fftconvolve(arr[c], ker, mode="same")
    return DiscreteField(g, out.reshape(u.data.shape), staggered=u.staggered)


def wavenumbers(grid: Grid):
    k = 2 * np.pi * fft.fftfreq(grid.n, d=grid.h)
    return np.meshgrid(*([k] * grid.dim), indexing="ij")


def discrete_laplace_symbol(grid: Grid) -> np.ndarray:
    """Eigenvalues of the 2d+1-point negative Laplacian on the torus."""
    return sum((2.0 / grid.h * np.sin(0.5 * kk * grid.h)) ** 2 for kk in wavenumbers(grid))


def heat_smooth(u: DiscreteField, t: float) -> DiscreteField:
    """``u * Phi_t`` via the Fourier multiplier ``exp(-t |xi|^2)``."""
    g = u.grid
    if not g.periodic:
        raise ValueError("heat smoothing needs a periodic grid")
    if t <= 0:
        raise ValueError("t must be positive")
    mult = np.exp(-t * sum(kk**2 for kk in wavenumbers(g)))
    ax = _axes(g)
    out = np.real(fft.ifftn(fft.fftn(u.data, axes=ax) * mult, axes=ax))
    return DiscreteField(g, out, staggered=u.staggered)


def cutoff(grid: Grid, delta: float) -> DiscreteField:
    """Boundary cutoff: 0 within delta of the boundary, 1 beyond 2 delta, C^1 ramp between."""
    if grid.periodic:
        raise ValueError("cutoff is defined on a bounded (Dirichlet) grid")
    x = grid.coords()
    lo, hi = grid.origin, grid.origin + grid.side
    dist = np.min(np.minimum(x - lo, hi - x), axis=-1)
    s = np.clip((dist - delta) / delta, 0.0, 1.0)
    return DiscreteField.scalar(grid, s * s * (3 - 2 * s))


# --- persistence ----------------------------------------------------------------


def save_apf(path, u: DiscreteField, **extra) -> None:
    """JSON header line followed by little-endian float64 payload (row-major)."""
    head = dict(u.grid.header())
    head["components"] = u.components
    head["staggered"] = u.staggered
    head.update(extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(u.data, dtype="<f8").tobytes())


def load_apf(path):
    """Returns (DiscreteField, header dict)."""
    with open(path, "rb") as fh:
        head = json.loads(fh.readline())
        payload = np.frombuffer(fh.read(), dtype="<f8")
    grid = Grid(head["dim"], head["n"], head["boxSide"], head["boundary"], head.get("origin", 0.0))
    stag = bool(head.get("staggered", False))
    lead = (grid.dim, head["components"] // grid.dim) if stag else (head["components"],)
    return DiscreteField(grid, payload.reshape(lead + grid.node_shape).copy(), staggered=stag), head
