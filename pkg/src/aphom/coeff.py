"""Almost-periodic coefficient fields built from real trigonometric polynomials.

A field is ``A(y) = const + sum_k [cos_k cos(w_k . y) + sin_k sin(w_k . y)]``
with every amplitude a tensor indexed ``(i, alpha, j, beta)``.  Besides
evaluation the module provides the finite-difference operator on shifts,
windowed ``S^p_R`` norms over R^d and the almost-periodicity moduli
``rho_k`` and ``omega_k``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc


class FieldError(ValueError):
    """Raised for malformed or non-elliptic coefficient fields."""


@dataclass(frozen=True)
class TrigMode:
    omega: np.ndarray
    cos: np.ndarray
    sin: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.cos)) or not np.all(np.isfinite(self.sin)):
            raise FieldError("mode amplitudes must be finite")
        if not np.any(self.omega != 0):
            raise FieldError("zero frequency is reserved for the constant term")


@dataclass(frozen=True)
class CoefficientField:
    """Tensor field ``a_{ij}^{alpha beta}(y)`` stored with shape (d, m, d, m)."""

    dim: int
    const: np.ndarray
    modes: tuple = ()
    mu: float = 1.0
    m: int = 1
    period: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        shape = (self.dim, self.m, self.dim, self.m)
        if self.const.shape != shape:
            raise FieldError(f"constant term has shape {self.const.shape}, expected {shape}")
        for mode in self.modes:
            if mode.omega.shape != (self.dim,) or mode.cos.shape != shape or mode.sin.shape != shape:
                raise FieldError("mode shapes do not match the field dimension")
        if not self.mu > 0:
            raise FieldError("ellipticity constant must be positive")

    @property
    def shape(self):
        return (self.dim, self.m, self.dim, self.m)

    @property
    def frequencies(self) -> np.ndarray:
        if not self.modes:
            return np.zeros((0, self.dim))
        return np.array([mode.omega for mode in self.modes])

    @property
    def complex_amplitudes(self) -> np.ndarray:
        """Amplitudes ``C_k`` with ``A = const + Re sum_k C_k exp(i w_k . y)``."""
        if not self.modes:
            return np.zeros((0,) + self.shape, dtype=complex)
        return np.array([mode.cos - 1j * mode.sin for mode in self.modes])

    @property
    def max_frequency(self) -> float:
        if not self.modes:
            return 0.0
        return float(np.max(np.linalg.norm(self.frequencies, axis=1)))

    @property
    def longest_wavelength(self) -> float:
        if not self.modes:
            return 0.0
        return float(2 * np.pi / np.min(np.linalg.norm(self.frequencies, axis=1)))

    @property
    def is_constant(self) -> bool:
        return all(not np.any(mode.cos) and not np.any(mode.sin) for mode in self.modes)

    def is_symmetric(self, tol=0.0) -> bool:
        def sym(t):
            return np.max(np.abs(t - t.transpose(2, 3, 0, 1)), initial=0.0) <= tol

        return sym(self.const) and all(sym(md.cos) and sym(md.sin) for md in self.modes)

    def zero_blocks(self) -> np.ndarray:
        """Boolean (d, m, d, m) mask of entries that vanish identically."""
        nz = self.const != 0
        for mode in self.modes:
            nz |= (mode.cos != 0) | (mode.sin != 0)
        return ~nz

    def __call__(self, y):
        return evaluate(self, y)

    def to_dict(self) -> dict:
        out = {
            "dim": self.dim,
            "m": self.m,
            "mu": self.mu,
            "const": self.const.tolist(),
            "modes": [
                {"omega": md.omega.tolist(), "cos": md.cos.tolist(), "sin": md.sin.tolist()}
                for md in self.modes
            ],
        }
        if self.period is not None:
            out["period"] = np.asarray(self.period).tolist()
        if self.name:
            out["name"] = self.name
        return out

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _as_tensor(values, dim, m) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size != (dim * m) ** 2:
        raise FieldError(f"amplitude has {arr.size} entries, expected {(dim * m) ** 2}")
    return arr.reshape(dim, m, dim, m)


def field_from_dict(doc: dict) -> CoefficientField:
    try:
        dim = int(doc["dim"])
        m = int(doc.get("m", 1))
        modes = tuple(
            TrigMode(
                omega=np.asarray(md["omega"], dtype=float).reshape(dim),
                cos=_as_tensor(md.get("cos", np.zeros((dim * m) ** 2)), dim, m),
                sin=_as_tensor(md.get("sin", np.zeros((dim * m) ** 2)), dim, m),
            )
            for md in doc.get("modes", [])
        )
        period = doc.get("period")
        return CoefficientField(
            dim=dim,
            m=m,
            const=_as_tensor(doc["const"], dim, m),
            modes=modes,
            mu=float(doc["mu"]),
            period=None if period is None else np.asarray(period, dtype=float).reshape(dim),
            name=str(doc.get("name", "")),
        )
    except (KeyError, TypeError) as exc:
        raise FieldError(f"malformed field document: {exc}") from exc


def load_field(path) -> CoefficientField:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    fld = field_from_dict(doc)
    if not fld.name:
        fld = CoefficientField(**{**fld.__dict__, "name": path.stem})
    return fld


def save_field(fld: CoefficientField, path) -> None:
    with open(path, "w") as fh:
        json.dump(fld.to_dict(), fh, indent=2)


def scalar_field(dim, const, modes=(), mu=None, period=None, name="") -> CoefficientField:
    """Isotropic scalar field ``a(y) I`` from (omega, cos, sin) scalar triples."""
    eye = np.eye(dim).reshape(dim, 1, dim, 1)
    tmodes = tuple(
        TrigMode(np.atleast_1d(np.asarray(w, dtype=float)), c * eye, s * eye) for w, c, s in modes
    )
    if mu is None:
        amp = sum(abs(c) + abs(s) for _, c, s in modes)
        mu = min(const - amp, 1.0 / (const + amp))
    return CoefficientField(
        dim=dim,
        const=const * eye,
        modes=tmodes,
        mu=float(mu),
        period=None if period is None else np.asarray(period, dtype=float),
        name=name,
    )


def constant_field(matrix, m=1, mu=None, name="") -> CoefficientField:
    arr = np.asarray(matrix, dtype=float)
    dim = int(round(math.sqrt(arr.size))) // m
    tensor = arr.reshape(dim, m, dim, m)
    if mu is None:
        mat = tensor.reshape(dim * m, dim * m)
        lo = np.linalg.eigvalsh(0.5 * (mat + mat.T)).min()
        mu = min(lo, 1.0 / np.linalg.norm(mat, 2))
    return CoefficientField(dim=dim, m=m, const=tensor, mu=float(mu), name=name)


def evaluate(fld: CoefficientField, y) -> np.ndarray:
    """Field values at points ``y`` of shape (..., d); returns (..., d, m, d, m)."""
    y = np.asarray(y, dtype=float)
    if fld.dim == 1 and (y.ndim == 0 or y.shape[-1] != 1):
        y = y[..., None]
    lead = y.shape[:-1]
    out = np.broadcast_to(fld.const, lead + fld.shape).copy()
    for mode in fld.modes:
        phase = y @ mode.omega
        out += np.cos(phase)[..., None, None, None, None] * mode.cos
        out += np.sin(phase)[..., None, None, None, None] * mode.sin
    return out


def translate(fld: CoefficientField, x0) -> CoefficientField:
    """The field ``y -> A(y + x0)``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    modes = []
    for md in fld.modes:
        c, s = math.cos(md.omega @ x0), math.sin(md.omega @ x0)
        modes.append(TrigMode(md.omega, c * md.cos + s * md.sin, c * md.sin - s * md.cos))
    return CoefficientField(
        dim=fld.dim, m=fld.m, const=fld.const, modes=tuple(modes), mu=fld.mu,
        period=fld.period, name=fld.name,
    )


def adjoint_field(fld: CoefficientField) -> CoefficientField:
    """Swap index pairs (i, alpha) <-> (j, beta) in every amplitude."""

    def t(a):
        return np.ascontiguousarray(a.transpose(2, 3, 0, 1))

    return CoefficientField(
        dim=fld.dim,
        m=fld.m,
        const=t(fld.const),
        modes=tuple(TrigMode(md.omega, t(md.cos), t(md.sin)) for md in fld.modes),
        mu=fld.mu,
        period=fld.period,
        name=fld.name[:-1] if fld.name.endswith("*") else (fld.name + "*" if fld.name else ""),
    )


def ellipticity_certificate(fld: CoefficientField) -> dict:
    """Sufficient bounds for ``mu |xi|^2 <= A xi.xi <= |xi|^2 / mu``.

    Each mode contributes ``||[C S]||_2``, which bounds ``||C cos t + S sin t||``
    for every phase and so is unchanged by translation; it never exceeds
    ``||C|| + ||S||``.
    """
    n = fld.dim * fld.m
    c = fld.const.reshape(n, n)
    amp = sum(
        np.linalg.norm(np.hstack([md.cos.reshape(n, n), md.sin.reshape(n, n)]), 2)
        for md in fld.modes
    )
    lower = float(np.linalg.eigvalsh(0.5 * (c + c.T)).min() - amp)
    upper = float(np.linalg.norm(c, 2) + amp)
    return {
        "lower": lower,
        "upper": upper,
        "mu": fld.mu,
        "ok": bool(lower >= fld.mu and upper <= 1.0 / fld.mu),
    }


def check_elliptic(fld: CoefficientField) -> None:
    cert = ellipticity_certificate(fld)
    if not cert["ok"]:
        raise FieldError(
            f"ellipticity certificate fails: lower={cert['lower']:.4g}, "
            f"upper={cert['upper']:.4g}, mu={fld.mu:.4g}"
        )


def sampled_ellipticity(fld: CoefficientField, probes=10**6, extent=100.0, seed=0, chunk=100_000):
    """Min and max of ``A(y) xi . xi / |xi|^2`` over random probes."""
    rng = np.random.default_rng(seed)
    n = fld.dim * fld.m
    lo, hi = np.inf, -np.inf
    done = 0
    while done < probes:
        k = min(chunk, probes - done)
        y = rng.uniform(-extent, extent, size=(k, fld.dim))
        xi = rng.standard_normal((k, n))
        a = evaluate(fld, y).reshape(k, n, n)
        q = np.einsum("ka,kab,kb->k", xi, a, xi) / np.einsum("ka,ka->k", xi, xi)
        lo, hi = min(lo, q.min()), max(hi, q.max())
        done += k
    return float(lo), float(hi)


# --- differences -----------------------------------------------------------


@dataclass(frozen=True)
class DifferenceSpec:
    """Shift pairs ``(y_i, z_i)`` defining ``Delta_{y_1 z_1} ... Delta_{y_k z_k}``."""

    pairs: tuple

    def __post_init__(self):
        if len(self.pairs) < 1:
            raise ValueError("difference order must be at least 1")
        for y, z in self.pairs:
            if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
                raise ValueError("shifts must be finite")

    @property
    def order(self) -> int:
        return len(self.pairs)


def _shift(x, s):
    return np.asarray(x, dtype=float) + np.asarray(s, dtype=float)


def difference(g: Callable, spec: DifferenceSpec, x):
    """``Delta_{y_1 z_1} ... Delta_{y_k z_k} g (x)`` with ``Delta_{yz} g(x) = g(x+y) - g(x+z)``."""
    pairs = list(spec.pairs)

    def rec(idx, pt):
        if idx == len(pairs):
            return np.asarray(g(pt), dtype=float)
        y, z = pairs[idx]
        return rec(idx + 1, _shift(pt, y)) - rec(idx + 1, _shift(pt, z))

    return rec(0, x)


def product_rule_expansion(f: Callable, g: Callable, spec: DifferenceSpec, x):
    """Right-hand side of the subset expansion of ``Delta_P (f g)(x)``.

    Each subset Q of P contributes ``Delta_Q f`` evaluated at x shifted by the
    z's outside Q, times ``Delta_{P\\Q} g`` evaluated at x shifted by the y's in Q.
    """
    pairs = list(spec.pairs)
    k = len(pairs)
    total = 0.0
    for size in range(k + 1):
        for q in itertools.combinations(range(k), size):
            rest = [i for i in range(k) if i not in q]
            xf = np.asarray(x, dtype=float) + sum((np.asarray(pairs[i][1], dtype=float) for i in rest), 0.0)
            xg = np.asarray(x, dtype=float) + sum((np.asarray(pairs[i][0], dtype=float) for i in q), 0.0)
            fq = difference(f, DifferenceSpec(tuple(pairs[i] for i in q)), xf) if q else np.asarray(f(xf))
            gq = difference(g, DifferenceSpec(tuple(pairs[i] for i in rest)), xg) if rest else np.asarray(g(xg))
            total = total + fq * gq
    return total


# --- windowed norms over R^d ------------------------------------------------


@dataclass(frozen=True)
class SamplingPlan:
    """How sup/inf over R^d are approximated.

    ``centers`` window centers (and ``shifts`` y-shifts) are scrambled Sobol
    points in the cube ``[-extent, extent]^d``; window integrals use the
    trapezoid rule with ``resolution`` points per unit length; the inf over
    ``|z| <= L`` runs over a lattice of spacing ``z_step`` (``L/16`` if None).
    """

    centers: int = 64
    shifts: int = 64
    extent: float = 100.0
    resolution: float = 8.0
    z_step: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.centers < 1 or self.shifts < 1 or self.resolution <= 0:
            raise ValueError("empty sampling plan")


def sobol_points(count, dim, extent, seed):
    m = max(0, math.ceil(math.log2(max(count, 1))))
    pts = qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)[:count]
    return (2.0 * pts - 1.0) * extent


def _window_nodes(R, dim, resolution):
    """Trapezoid nodes/weights on the cube [-R, R]^d (weights sum to 1)."""
    npts = max(3, int(math.ceil(2 * R * resolution)) + 1)
    t = np.linspace(-R, R, npts)
    w = np.ones(npts)
    w[0] = w[-1] = 0.5
    w /= w.sum()
    grids = np.meshgrid(*([t] * dim), indexing="ij")
    pts = np.stack([gr.ravel() for gr in grids], axis=-1)
    wts = np.ones(1)
    for _ in range(dim):
        wts = np.multiply.outer(wts, w).ravel()
    return pts, wts


def s_norm(g: Callable, p: float, R: float, plan: SamplingPlan, dim: int = 1) -> float:
    """Estimate ``sup_x (avg_{Q(x,R)} |g|^p)^{1/p}`` over sampled centers.

    ``g`` maps an (N, d) array to values of shape (N,) or (N, ...); the
    pointwise magnitude is the Frobenius norm of the trailing axes.  Windows
    are cubes of half-width R.
    """
    if R <= 0:
        raise ValueError("window radius must be positive")
    centers = sobol_points(plan.centers, dim, plan.extent, plan.seed)
    offs, wts = _window_nodes(R, dim, plan.resolution)
    best = 0.0
    for c in centers:
        vals = np.asarray(g(c + offs), dtype=float).reshape(len(offs), -1)
        mag = np.sqrt(np.sum(vals**2, axis=1))
        best = max(best, float(np.dot(wts, mag**p)) ** (1.0 / p))
    return best


def mean_value(g: Callable, R: float, dim: int = 1, resolution: float = 8.0):
    """Average of ``g`` over the cube Q(0, R) of half-width R."""
    offs, wts = _window_nodes(R, dim, resolution)
    vals = np.asarray(g(offs), dtype=float)
    return np.tensordot(wts, vals, axes=(0, 0))


# --- almost-periodicity moduli ----------------------------------------------


def rho_exponent(k: int, qbar: float = 4.0) -> float:
    """``p`` with ``k/p = 1/2 - 1/qbar``."""
    if qbar <= 2:
        raise ValueError("reverse Hoelder exponent must exceed 2")
    return k / (0.5 - 1.0 / qbar)


def z_lattice(L: float, dim: int, step: float) -> np.ndarray:
    """Lattice points of spacing ``step`` in the closed ball |z| <= L."""
    r = int(math.floor(L / step + 1e-9))
    ax = np.arange(-r, r + 1) * step
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    pts = np.stack([gr.ravel() for gr in grids], axis=-1)
    return pts[np.linalg.norm(pts, axis=1) <= L + 1e-9 * step]


def shift_samples(count, dim, extent, step, seed):
    """Quasi-random shifts snapped onto the lattice ``step * Z^d``."""
    pts = sobol_points(count, dim, extent, seed + 7919)
    return np.round(pts / step) * step


def _partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


class _ModeWindows:
    """Precomputed exp(i w.x) on all window quadrature points."""

    def __init__(self, fld: CoefficientField, R, plan: SamplingPlan):
        centers = sobol_points(plan.centers, fld.dim, plan.extent, plan.seed)
        offs, self.wts = _window_nodes(R, fld.dim, plan.resolution)
        pts = centers[:, None, :] + offs[None, :, :]
        self.omega = fld.frequencies
        self.phase = np.exp(1j * pts @ self.omega.T)  # (S, Q, K)
        self.amp = fld.complex_amplitudes.reshape(len(fld.modes), -1)  # (K, E)

    def multiplier(self, y, z):
        return np.exp(1j * y @ self.omega.T) - np.exp(1j * z @ self.omega.T)

    def norms(self, mult, p):
        """S^p_R norms of the difference fields with mode multipliers ``mult`` (..., K)."""
        lead = mult.shape[:-1]
        mult = mult.reshape(-1, mult.shape[-1])
        out = np.empty(len(mult))
        for b, mu_ in enumerate(mult):
            vals = np.real(np.einsum("sqk,ke->sqe", self.phase * mu_, self.amp))
            mag = np.sqrt(np.sum(vals**2, axis=-1)) ** p
            out[b] = np.max(mag @ self.wts) ** (1.0 / p)
        return out.reshape(lead)


def rho(fld: CoefficientField, k: int, L: float, R: float, plan: SamplingPlan = SamplingPlan(),
        p: Optional[float] = None, qbar: float = 4.0) -> float:
    """Estimate of the k-th order almost-periodicity modulus ``rho_k(L, R)``.

    Nested ``sup_{y_1} inf_{|z_1|<=L} ... sup_{y_k} inf_{|z_k|<=L}`` of the sum
    over partitions of the shift set of products of ``S^p_R`` norms of
    difference fields.  The sups run over ``plan.shifts`` quasi-random shifts
    (a lower estimate), the infs over a z-lattice (an upper estimate).
    """
    if k not in (1, 2):
        raise ValueError("only k = 1, 2 are supported")
    if L <= 0 or R <= 0:
        raise ValueError("L and R must be positive")
    if fld.is_constant:
        return 0.0
    p = rho_exponent(k, qbar) if p is None else p
    step = plan.z_step if plan.z_step is not None else L / 16
    zs = z_lattice(L, fld.dim, step)
    ys = shift_samples(plan.shifts, fld.dim, plan.extent, step, plan.seed)
    win = _ModeWindows(fld, R, plan)

    if k == 1:
        best = 0.0
        for y in ys:
            mult = win.multiplier(y[None, :], zs)
            best = max(best, float(np.min(win.norms(mult, p))))
        return best

    second = []
    for y2 in ys:
        m2 = win.multiplier(y2[None, :], zs)
        second.append((m2, win.norms(m2, p)))
    best = 0.0
    for y1 in ys:
        m1 = win.multiplier(y1[None, :], zs)  # (Z1, K)
        n1 = win.norms(m1, p)
        inner_best = np.inf
        for z_idx in range(len(zs)):
            worst = 0.0
            for m2, n2 in second:
                n12 = win.norms(m1[z_idx] * m2, p)
                worst = max(worst, float(np.min(n12 + n1[z_idx] * n2)))
                if worst >= inner_best:
                    break
            inner_best = min(inner_best, worst)
        best = max(best, inner_best)
    return best


def omega_modulus(g, k: int, L: float, R: float, plan: SamplingPlan = SamplingPlan(),
                  region=None) -> float:
    """``omega_k(g; L, R)`` for a field ``g`` on a periodic grid.

    Shifts are rounded to grid multiples and the ``S^2_R`` norm is the exact
    discrete sliding-window sup, optionally restricted to window centers
    where ``region`` is True.
    """
    if k not in (1, 2):
        raise ValueError("only k = 1, 2 are supported")
    if L <= 0 or R <= 0:
        raise ValueError("L and R must be positive")
    grid = g.grid
    if grid.boundary != "periodic":
        raise ValueError("omega needs a periodic grid")
    arr = g.data.reshape((-1,) + grid.node_shape)
    return _omega_grid(arr, grid.h, k, L, R, plan, region)


def _omega_grid(arr, h, k, L, R, plan, region):
    from .grid import window_sup_norm

    dim = arr.ndim - 1
    if not np.any(arr):
        return 0.0
    step = plan.z_step if plan.z_step is not None else L / 16
    step = max(h, round(step / h) * h)
    zs = np.round(z_lattice(L, dim, step) / h).astype(int)
    side = arr.shape[1] * h
    ys = np.round(shift_samples(plan.shifts, dim, side / 2, step, plan.seed) / h).astype(int)
    axes = tuple(range(1, dim + 1))

    def shifted(a, s):
        return np.roll(a, tuple(-int(v) for v in s), axis=axes)

    def norm(a):
        return window_sup_norm(a, h, 2, R, periodic=True, region=region)

    def first(a):
        best = 0.0
        for y in ys:
            ay = shifted(a, y)
            best = max(best, min(norm(ay - shifted(a, z)) for z in zs))
        return best

    if k == 1 and region is None:
        # the torus-wide window sup is translation invariant: only z - y matters
        n = np.array(arr.shape[1:])
        cache = {}

        def net(w):
            key = tuple(int(v) for v in np.mod(w, n))
            if key not in cache:
                cache[key] = norm(arr - shifted(arr, key))
            return cache[key]

        return max(min(net(z - y) for z in zs) for y in ys)
    if k == 1:
        return first(arr)
    best = 0.0
    for y1 in ys:
        ay = shifted(arr, y1)
        inner = min(first(ay - shifted(arr, z1)) for z1 in zs)
        best = max(best, inner)
    return best
