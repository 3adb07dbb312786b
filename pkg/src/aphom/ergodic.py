"""Quantitative ergodic estimates on the torus.

Measures both sides of the oscillation-gradient inequality, the heat-kernel
decay bound for mean-zero functions, the reconstruction bound for
``||g||_{S^2_1}`` and the integral ``Theta_{k,sigma}(T)``.  Unknown
constants are reported raw (``C = 1``) or fitted, never assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .coeff import CoefficientField, SamplingPlan, omega_modulus, rho
from .grid import DiscreteField, forward_diff, gradient, heat_smooth, mean, window_sup_norm


def _snorm(u: DiscreteField, R: float, region=None) -> float:
    return window_sup_norm(u.flat(), u.grid.h, 2, R, periodic=True, region=region)


def geometric_menu(upper: float, lower: float = 1.0, ratio: float = 2.0) -> list:
    out, L = [], lower
    while L <= upper * (1 + 1e-12):
        out.append(L)
        L *= ratio
    return out


@dataclass
class OscillationTerms:
    """Raw pieces of ``||u||_{S^2_R} <= |M| + C (osc + L ||grad u||_{S^2_R})``."""

    L: float
    R: float
    lhs: float
    mean: float
    difference: float
    gradient: float

    def rhs(self, C: float = 1.0) -> float:
        return abs(self.mean) + C * (self.difference + self.gradient)

    def required_constant(self) -> float:
        excess = self.lhs - abs(self.mean)
        if excess <= 0:
            return 0.0
        denom = self.difference + self.gradient
        return math.inf if denom == 0 else excess / denom


def oscillation_bound(u: DiscreteField, L: float, R: float, plan: SamplingPlan = SamplingPlan(),
                      region=None) -> OscillationTerms:
    if L > R:
        raise ValueError("need L <= R")
    if L <= 0:
        raise ValueError("L must be positive")
    M = float(np.mean(u.flat()))
    return OscillationTerms(
        L=L,
        R=R,
        lhs=_snorm(u, R, region),
        mean=M,
        difference=omega_modulus(u, 1, L, R, plan, region),
        gradient=L * _snorm(gradient(u), R, region),
    )


@dataclass
class HeatDecay:
    t: np.ndarray
    sup: np.ndarray  # ||g * Phi_t||_inf
    grad_sup: np.ndarray  # ||grad(g * Phi_t)||_inf
    omega: float
    g_norm: float
    k: int
    L: float
    R: float

    def envelope(self, c: float) -> np.ndarray:
        return self.omega + np.exp(-c * self.t / (self.k * self.L**2)) * self.g_norm

    def required_constant(self, c: float, idx=None, gradient: bool = False) -> float:
        idx = slice(None) if idx is None else idx
        lhs = self.grad_sup * np.sqrt(self.t) if gradient else self.sup
        env = self.envelope(c)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(env > 0, lhs / env, np.where(lhs > 0, np.inf, 0.0))
        return float(np.max(ratio[idx], initial=0.0))

    def holds(self, C: float, c: float, gradient: bool = False) -> np.ndarray:
        lhs = self.grad_sup * np.sqrt(self.t) if gradient else self.sup
        return lhs <= C * self.envelope(c) * (1 + 1e-9) + 1e-300


def heat_decay(g: DiscreteField, k: int, L: float, R: float, t_list: Sequence[float],
               plan: SamplingPlan = SamplingPlan(), mean_tol: float = 1e-8) -> HeatDecay:
    """Measured ``||g * Phi_t||_inf`` and its gradient against the ergodic envelope."""
    scale = float(np.max(np.abs(g.data))) or 1.0
    if np.max(np.abs(mean(g))) > mean_tol * scale:
        raise ValueError("heat decay bound needs a mean-zero function")
    t = np.asarray(sorted(t_list), dtype=float)
    if np.any(t < k * R**2 * (1 - 1e-12)):
        raise ValueError("need t >= k R^2")
    sup, gsup = [], []
    for tt in t:
        u = heat_smooth(g, tt)
        sup.append(float(np.max(np.abs(u.data))))
        gsup.append(float(np.max(np.sqrt(np.sum(gradient(u).flat() ** 2, axis=0)))))
    return HeatDecay(
        t=t, sup=np.array(sup), grad_sup=np.array(gsup),
        omega=omega_modulus(g, k, L, R, plan), g_norm=_snorm(g, R), k=k, L=L, R=R,
    )


def calibrate_heat(run: HeatDecay, c_menu=(0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0), inflation: float = 2.0,
                   gradient: bool = False):
    """Fit ``(C, c)`` on every other t and return them.

    ``c`` is the largest menu value whose constant stays within ``inflation``
    times the constant of the slowest decay; the remaining t points then
    serve as an out-of-sample check.
    """
    idx = slice(None, None, 2)
    base = run.required_constant(min(c_menu), idx, gradient)
    best = (base, min(c_menu))
    for c in sorted(c_menu):
        C = run.required_constant(c, idx, gradient)
        if C <= inflation * base:
            best = (C, c)
    return best


def decay_rate(t, values) -> float:
    """Least-squares slope of ``-log(values)`` against t (positive means decay)."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = v > 1e-300
    if keep.sum() < 2:
        return math.inf
    slope = np.polyfit(t[keep], np.log(v[keep]), 1)[0]
    return float(-slope)


# --- reconstruction bound ----------------------------------------------------


def log_t_grid(T: float, points: int = 9) -> np.ndarray:
    return np.geomspace(1.0, T, points)


@dataclass
class ReconstructionBound:
    lhs: float
    head: float
    integral: float
    t: np.ndarray
    integrand: np.ndarray
    best_L: list

    @property
    def rhs(self) -> float:
        return self.head + self.integral


def reconstruction_bound(g: DiscreteField, k: int, T: float, L_menu: Optional[Sequence[float]] = None,
                         c: float = 0.1, t_points: int = 9, plan: SamplingPlan = SamplingPlan(),
                         region=None) -> ReconstructionBound:
    """Both sides of the bound of ``||g||_{S^2_1}`` by oscillation moduli of g and grad g.

    rhs = inf_L {omega_k(g; L, T) + e^{-c T^2/L^2} ||g||_{S^2_T}}
          + int_1^T inf_{L <= t} {omega_k(grad g; L, t) + e^{-c t^2/L^2} ||grad g||_{S^2_t}} dt
    with unit constants, trapezoid rule on a log-spaced t grid.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    menu = sorted(geometric_menu(T) if L_menu is None else L_menu)
    dg = gradient(g)
    dg_nodes = DiscreteField(g.grid, dg.flat())

    def inf_term(fn, norm, t):
        vals = [(omega_modulus(fn, k, L, t, plan, region) + math.exp(-c * t * t / (L * L)) * norm, L)
                for L in menu if 1 <= L <= t]
        return min(vals)

    head, _ = inf_term(g, _snorm(g, T, region), T)
    t = log_t_grid(T, t_points)
    vals, best = [], []
    for tt in t:
        v, L = inf_term(dg_nodes, _snorm(dg_nodes, tt, region), tt)
        vals.append(v)
        best.append(L)
    vals = np.array(vals)
    return ReconstructionBound(
        lhs=_snorm(g, 1.0, region), head=head, integral=float(np.trapezoid(vals, t)),
        t=t, integrand=vals, best_L=best,
    )


# --- Theta -------------------------------------------------------------------


@dataclass
class ThetaSpec:
    """Table ``rho[a, b] = rho_k(Ls[a], ts[b])`` plus the integral parameters."""

    k: int
    sigma: float
    T: float
    Ls: np.ndarray
    ts: np.ndarray
    rho: np.ndarray
    c: float = 0.1

    def __post_init__(self):
        self.Ls = np.asarray(self.Ls, dtype=float)
        self.ts = np.asarray(self.ts, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float).reshape(len(self.Ls), len(self.ts))
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1); the integral diverges at sigma = 1")
        if np.any(self.rho < 0):
            raise ValueError("rho samples must be non-negative")


@dataclass
class ThetaValue:
    value: float
    t: np.ndarray
    best_L: np.ndarray
    rho: np.ndarray
    exp_term: np.ndarray
    integrand: np.ndarray

    def rows(self):
        return [
            {"t": float(a), "L*": float(b), "rho": float(c), "expTerm": float(d), "integrand": float(e)}
            for a, b, c, d, e in zip(self.t, self.best_L, self.rho, self.exp_term, self.integrand)
        ]


def theta_bound(spec: ThetaSpec) -> ThetaValue:
    """``int_1^T inf_{1<=L<=t} {rho_k(L,t) + exp(-c t^2/L^2)} (T/t)^sigma dt``."""
    ts = spec.ts
    if ts.min() > 1 + 1e-12 or ts.max() < spec.T * (1 - 1e-12):
        raise ValueError(f"rho samples cover [{ts.min()}, {ts.max()}], need [1, {spec.T}]")
    keep = (ts >= 1 - 1e-12) & (ts <= spec.T * (1 + 1e-12))
    cols = np.flatnonzero(keep)
    t_out, L_out, r_out, e_out, f_out = [], [], [], [], []
    for b in cols:
        t = ts[b]
        cand = [(spec.rho[a, b] + math.exp(-spec.c * t * t / (L * L)), L, spec.rho[a, b])
                for a, L in enumerate(spec.Ls) if 1 - 1e-12 <= L <= t * (1 + 1e-12)]
        if not cand:
            raise ValueError(f"no L sample in [1, {t}]")
        val, L, r = min(cand)
        t_out.append(t)
        L_out.append(L)
        r_out.append(r)
        e_out.append(val - r)
        f_out.append(val * (spec.T / t) ** spec.sigma)
    t_arr, f_arr = np.array(t_out), np.array(f_out)
    if t_arr[-1] < spec.T:
        # close the interval by linear interpolation of the integrand at T
        nxt = np.flatnonzero(ts > spec.T)[0]
        prev = cols[-1]
        w = (spec.T - ts[prev]) / (ts[nxt] - ts[prev])
        cand = []
        for a, L in enumerate(spec.Ls):
            if L < 1 or L > spec.T:
                continue
            r = (1 - w) * spec.rho[a, prev] + w * spec.rho[a, nxt]
            cand.append((r + math.exp(-spec.c * spec.T**2 / L**2), L, r))
        val, L, r = min(cand)
        t_arr = np.append(t_arr, spec.T)
        f_arr = np.append(f_arr, val)
        L_out.append(L)
        r_out.append(r)
        e_out.append(val - r)
    return ThetaValue(float(np.trapezoid(f_arr, t_arr)), t_arr, np.array(L_out), np.array(r_out),
                      np.array(e_out), f_arr)


def theta_zero_rho(T: float, sigma: float, c: float = 0.1, Ls=(1.0,), points: int = 257) -> ThetaValue:
    """Theta for an exactly periodic field (rho identically zero)."""
    ts = np.geomspace(1.0, T, points)
    return theta_bound(ThetaSpec(1, sigma, T, np.asarray(Ls), ts, np.zeros((len(Ls), len(ts))), c))


def rho_table(fld: CoefficientField, k: int, Ls: Sequence[float], ts: Sequence[float],
              plan: SamplingPlan = SamplingPlan(), qbar: float = 4.0) -> np.ndarray:
    """``rho_k(L, t)`` on an (L, t) grid, with a common z-lattice so the table is monotone in L."""
    step = plan.z_step if plan.z_step is not None else min(Ls) / 16
    p = SamplingPlan(plan.centers, plan.shifts, plan.extent, plan.resolution, step, plan.seed)
    return np.array([[rho(fld, k, L, t, p, qbar=qbar) for t in ts] for L in Ls])
