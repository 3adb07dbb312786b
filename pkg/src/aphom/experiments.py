"""Config-driven experiments.

A config is a JSON object::

    {"kind": "effective", "field": "periodic1d", "seed": 0,
     "params": {...}, "checks": [{"id": "AC2", "metric": "oracle_error_abs", "op": "<=", "value": 0.017}]}

``field`` is a bundled field name, a path (relative to the config file) or
an inline field document.  Each kind fills ``report.metrics``; every check
compares one metric against a threshold and becomes a flag.
"""

from __future__ import annotations

import dataclasses
import json
import math
import operator
import time
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from . import bvp, ergodic, twoscale
from .coeff import (CoefficientField, FieldError, SamplingPlan, adjoint_field, check_elliptic,
                    ellipticity_certificate, evaluate, field_from_dict, load_field, rho, sampled_ellipticity)
from .corrector import (CorrectorError, corrector_grid, dual_residuals, effective_tensor, flux_and_dual,
                        max_spacing, psi_gap, solve_corrector, trusted_region)
from .grid import DiscreteField, Grid, divergence, gradient, heat_smooth, inner, save_apf, window_sup_norm
from .report import ExperimentReport, FitError
from .solver import SolverError, assemble

KINDS = ("field-check", "rho", "corrector", "effective", "dual", "growth", "cauchy", "theta",
         "twoscale", "rate", "profile", "liouville", "ergodic", "structure")


class ConfigError(ValueError):
    pass


# --- resolution of bundled data ----------------------------------------------------


def _data_dir(sub: str) -> Path:
    return Path(str(resources.files("aphom") / "data" / sub))


def bundled_fields() -> list:
    return sorted(p.stem for p in _data_dir("fields").glob("*.json"))


def bundled_configs() -> list:
    return sorted(p.stem for p in _data_dir("configs").glob("*.json"))


def resolve_field(spec, base: Path = Path(".")) -> CoefficientField:
    if isinstance(spec, dict):
        fld = field_from_dict(spec)
    elif isinstance(spec, str):
        path = Path(spec)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            bundled = _data_dir("fields") / f"{spec}.json"
            if not bundled.exists():
                raise ConfigError(f"unknown field {spec!r}")
            path = bundled
        try:
            fld = load_field(path)
        except json.JSONDecodeError as exc:
            raise FieldError(f"{path}: {exc}") from exc
    else:
        raise ConfigError("field must be a name, a path or an inline document")
    check_elliptic(fld)
    return fld


def resolve_config(spec) -> tuple:
    """(config dict, base directory); accepts a path or a bundled config name."""
    path = Path(spec)
    if not path.exists():
        bundled = _data_dir("configs") / f"{spec}.json"
        if not bundled.exists():
            raise ConfigError(f"config {spec!r} not found")
        path = bundled
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("config needs a 'kind'")
    if cfg["kind"] not in KINDS:
        raise ConfigError(f"unknown kind {cfg['kind']!r}")
    cfg.setdefault("name", path.stem)
    return cfg, path.parent


# --- checks ------------------------------------------------------------------------

_OPS = {"<=": operator.le, "<": operator.lt, ">=": operator.ge, ">": operator.gt, "==": operator.eq}


def evaluate_check(check: dict, metrics: dict):
    try:
        cid, name, op = check["id"], check["metric"], check.get("op", "true")
    except KeyError as exc:
        raise ConfigError(f"check lacks {exc}") from exc
    if name not in metrics:
        raise ConfigError(f"check {cid}: metric {name!r} not produced (have {sorted(metrics)})")
    val = metrics[name]
    vals = val if isinstance(val, (list, tuple)) else [val]
    if op == "true":
        ok = all(bool(v) for v in vals)
    elif op == "false":
        ok = not any(bool(v) for v in vals)
    elif op in _OPS:
        if "value" not in check:
            raise ConfigError(f"check {cid} needs a value")
        ok = all(v is not None and not (isinstance(v, float) and math.isnan(v)) and _OPS[op](v, check["value"])
                 for v in vals)
    else:
        raise ConfigError(f"check {cid}: unknown op {op!r}")
    return cid, ok, val


# --- helpers -----------------------------------------------------------------------


def _plan(params: dict, seed: int) -> SamplingPlan:
    p = params.get("sampling", {})
    return SamplingPlan(
        centers=int(p.get("centers", 64)),
        shifts=int(p.get("shifts", 64)),
        extent=float(p.get("extent", 100.0)),
        resolution=float(p.get("resolution", 8.0)),
        z_step=p.get("z_step"),
        seed=seed,
    )


def _need(params: dict, *keys):
    missing = [k for k in keys if k not in params]
    if missing:
        raise ConfigError(f"missing parameters: {', '.join(missing)}")


def _grid_for(fld: CoefficientField, T: float, params: dict) -> Grid:
    if "n" in params and "side" in params:
        center = params.get("center", 0.0)
        side = float(params["side"])
        return Grid(fld.dim, int(params["n"]), side, "periodic", origin=center - side / 2)
    return corrector_grid(fld, T, box_factor=float(params.get("box_factor", 8)))


def _region(fld, grid, params):
    return trusted_region(fld, grid, float(params.get("trusted_fraction", 0.25)))


def _reports(cs):
    return {"iterations": [r.iterations for r in cs.reports], "residuals": cs.residuals,
            "method": cs.reports[0].method if cs.reports else None}


def _times(cs):
    return [r.wall_time for r in cs.reports]


def scalar_profile(fld: CoefficientField, grid: Grid) -> np.ndarray:
    """``a(y)`` for scalar fields (first diagonal entry otherwise) on the grid nodes."""
    return evaluate(fld, grid.coords())[..., 0, 0, 0, 0]


def harmonic_oracle(fld: CoefficientField):
    """Laminate oracle for fields varying along y_1 only: diag(<1/a>^-1, <a>, ...)."""
    if fld.period is None or fld.m != 1:
        raise ConfigError("the laminate oracle needs a scalar periodic field")
    for md in fld.modes:
        if np.any(md.omega[1:] != 0):
            raise ConfigError("the laminate oracle needs a field depending on y_1 only")
    p = float(np.atleast_1d(fld.period)[0])

    def a(t):
        y = np.zeros(fld.dim)
        y[0] = t
        return float(evaluate(fld, y)[0, 0, 0, 0])

    harm = p / integrate.quad(lambda t: 1.0 / a(t), 0.0, p, limit=200, epsabs=1e-13, epsrel=1e-12)[0]
    arith = integrate.quad(a, 0.0, p, limit=200, epsabs=1e-13, epsrel=1e-12)[0] / p
    out = np.eye(fld.dim) * arith
    out[0, 0] = harm
    return out


# --- kinds --------------------------------------------------------------------------


def run_field_check(fld, params, rep, ctx):
    cert = ellipticity_certificate(fld)
    lo, hi = sampled_ellipticity(fld, int(params.get("probes", 100_000)), float(params.get("extent", 100.0)),
                                 ctx["seed"])
    adj = adjoint_field(adjoint_field(fld))
    inv = max([float(np.abs(adj.const - fld.const).max())]
              + [float(np.abs(a.cos - b.cos).max() + np.abs(a.sin - b.sin).max()) for a, b in zip(adj.modes, fld.modes)])
    rep.constants["certificate"] = cert
    rep.metrics.update({
        "cert_ok": cert["ok"], "cert_lower": cert["lower"], "cert_upper": cert["upper"], "mu": fld.mu,
        "sampled_min": lo, "sampled_max": hi, "sampled_ok": bool(lo >= fld.mu and hi <= 1 / fld.mu),
        "symmetric": fld.is_symmetric(), "adjoint_involution_error": inv,
        "modes": len(fld.modes), "periodic": fld.period is not None,
    })


def run_rho(fld, params, rep, ctx):
    ks = [int(k) for k in np.atleast_1d(params.get("k", 1))]
    Ls = [float(v) for v in params.get("L", [1.0])]
    R = float(params.get("R", 4.0))
    plan = ctx["plan"]
    cols = {"L": Ls}
    allv, mono = [], True
    for k in ks:
        vals = [rho(fld, k, L, R, plan, qbar=float(params.get("qbar", 4.0))) for L in Ls]
        cols[f"rho_{k}"] = vals
        allv += vals
        mono &= bool(np.all(np.diff(vals) <= 1e-12))
    rep.add_series("rho", "L", "length", cols, log=False)
    rep.metrics.update({"rho": allv, "rho_max": max(allv), "rho_nonincreasing_in_L": mono})


def run_corrector(fld, params, rep, ctx):
    _need(params, "T")
    T = float(params["T"])
    grid = _grid_for(fld, T, params)
    cs = solve_corrector(fld, T, grid, tol=float(params.get("tol", 1e-10)),
                         maxiter=int(params.get("maxiter", 20000)))
    cs.region = _region(fld, grid, params)
    s1 = cs.s_norms(1.0)
    sT = cs.s_norms(min(T, grid.side / 2))
    rep.metrics.update({
        "chi_s2": s1["chi"], "grad_s2": s1["grad"], "residual_max": max(cs.residuals),
        "energy": sT["grad"] + sT["chi"] / T,
    })
    rep.diagnostics["grid"] = grid.header()
    rep.diagnostics["solves"] = _reports(cs)
    rep.timings["solves"] = _times(cs)
    if ctx.get("out") is not None and params.get("dump", True):
        for j, b in cs.columns:
            save_apf(Path(ctx["out"]) / f"chi_T{T:g}_j{j}_b{b}.apf", DiscreteField(grid, cs.chi[j, b]),
                     T=T, column=[j, b], field=fld.name)


def run_effective(fld, params, rep, ctx):
    _need(params, "T")
    T = float(params["T"])
    tol = float(params.get("tol", 1e-10))
    grid = _grid_for(fld, T, params)
    cs = solve_corrector(fld, T, grid, tol=tol, maxiter=int(params.get("maxiter", 20000)))
    ah = effective_tensor(cs)
    lo, hi = ah.eig_range
    d = fld.dim
    rep.metrics.update({
        "a_hat": ah.matrix.tolist(), "eig_min": lo, "eig_max": hi, "mu": fld.mu,
        "eig_in_range": bool(lo >= fld.mu * (1 - 1e-12) and hi <= (1 + d) / fld.mu),
        "skew_norm": float(np.abs(ah.skew_part).max()),
    })
    oracle = params.get("oracle")
    if oracle is not None:
        if oracle == "laminate":
            ref = harmonic_oracle(fld)
        else:
            ref = np.asarray(oracle, dtype=float).reshape(ah.matrix.shape)
        err = np.abs(ah.matrix - ref)
        rep.constants["oracle"] = ref.tolist()
        rep.metrics["oracle_error_abs"] = float(err.max())
        rep.metrics["oracle_error_rel"] = float(err.max() / np.abs(ref).max())
        rep.metrics["oracle_diag_rel"] = float(np.max(np.abs(np.diag(ah.matrix) - np.diag(ref)) / np.abs(np.diag(ref))))
    if params.get("adjoint", False):
        cs_star = solve_corrector(adjoint_field(fld), T, grid, tol=tol)
        gap = float(np.abs(effective_tensor(cs_star).matrix - ah.matrix.T).max())
        rep.metrics["adjoint_transpose_error"] = gap
        rep.metrics["adjoint_tolerance_ratio"] = gap / tol
        rep.timings["adjoint_solves"] = _times(cs_star)
    rep.diagnostics["grid"] = grid.header()
    rep.diagnostics["solves"] = _reports(cs)
    rep.timings["solves"] = _times(cs)


def run_dual(fld, params, rep, ctx):
    _need(params, "T", "n")
    T = float(params["T"])
    ns = [int(v) for v in params["n"]]
    base = corrector_grid(fld, T)
    side = float(params.get("side", base.side))
    rows = {k: [] for k in ("staggered_flux_identity", "staggered_divergence_identity",
                            "collocated_flux_identity", "collocated_divergence_identity")}
    hs = []
    for n in ns:
        grid = Grid(fld.dim, n, side, "periodic", origin=-side / 2)
        cs = solve_corrector(fld, T, grid, tol=float(params.get("tol", 1e-12)))
        dual = flux_and_dual(cs)
        for k in rows:
            rows[k].append(dual.diagnostics[k])
        hs.append(grid.h)
    rep.add_series("dual_residuals", "h", "length", {"h": hs, **rows})
    for key in ("collocated_flux_identity", "collocated_divergence_identity"):
        fit = rep.add_fit(f"{key}_order", hs, rows[key])
        rep.metrics[f"{key}_order"] = fit.slope
    rep.metrics["collocated_flux_identity"] = rows["collocated_flux_identity"]
    rep.metrics["collocated_divergence_identity"] = rows["collocated_divergence_identity"]
    rep.metrics["staggered_max"] = max(max(rows["staggered_flux_identity"]), max(rows["staggered_divergence_identity"]))


def _study_grid(fld, T, params):
    factor = float(params.get("box_factor", 8))
    return corrector_grid(fld, T, box_factor=factor)


def run_growth(fld, params, rep, ctx):
    _need(params, "T")
    Ts = [float(v) for v in params["T"]]
    chi, grad, times = [], [], []
    for T in Ts:
        grid = _study_grid(fld, T, params)
        cs = solve_corrector(fld, T, grid, tol=float(params.get("tol", 1e-10)))
        cs.region = _region(fld, grid, params)
        s = cs.s_norms(1.0)
        chi.append(s["chi"])
        grad.append(s["grad"])
        times.append(_times(cs))
    rep.add_series("growth", "T", "1", {"T": Ts, "chi_s2": chi, "grad_chi_s2": grad})
    rep.metrics.update({"chi_s2": chi, "grad_chi_s2": grad, "grad_ratio": max(grad) / min(grad),
                        "chi_ratio": max(chi) / min(chi)})
    try:
        rep.metrics["chi_growth_slope"] = rep.add_fit("growth", Ts, chi).slope
    except FitError:
        rep.metrics["chi_growth_slope"] = None
    rep.timings["solves"] = times


def run_cauchy(fld, params, rep, ctx):
    _need(params, "T")
    Ts = [float(v) for v in params["T"]]
    diffs, times = [], []
    for T in Ts:
        grid = _study_grid(fld, 2 * T, params)
        tol = float(params.get("tol", 1e-10))
        a = solve_corrector(fld, T, grid, tol=tol)
        b = solve_corrector(fld, 2 * T, grid, tol=tol)
        region = _region(fld, grid, params)
        diff = (a.chi - b.chi).reshape((-1,) + grid.node_shape)
        diffs.append(window_sup_norm(diff, grid.h, 2, 1.0, region=region))
        times.append(_times(a) + _times(b))
    rep.add_series("cauchy", "T", "1", {"T": Ts, "chi_T_minus_chi_2T": diffs})
    rep.metrics["cauchy_diff"] = diffs
    try:
        fit = rep.add_fit("cauchy", Ts, diffs)
        rep.metrics["beta_hat"] = -fit.slope
        rep.metrics["beta_ci_low"] = -fit.ci95[1]
    except FitError as exc:
        rep.metrics["beta_hat"] = None
        rep.diagnostics["fit_error"] = str(exc)
    rep.timings["solves"] = times


def _theta_table(fld, params, T, plan):
    sigma = float(params.get("sigma", 0.5))
    c = float(params.get("c", 0.1))
    k = int(params.get("k", 1))
    points = int(params.get("points", 65))
    ts = np.geomspace(1.0, T, points)
    source = params.get("rho", "zero" if fld.period is not None or fld.is_constant else "field")
    if source == "zero":
        table = np.zeros((1, len(ts)))
        Ls = np.array([1.0])
    elif source == "inverse_t":
        Ls = ts.copy()
        table = np.broadcast_to(1.0 / ts, (len(Ls), len(ts))).copy()
    elif source == "field":
        Ls = np.array(ergodic.geometric_menu(T))
        ts_coarse = np.unique(np.concatenate([np.geomspace(1.0, T, int(params.get("rho_points", 5))), Ls]))
        table = ergodic.rho_table(fld, k, Ls, ts_coarse, plan)
        ts = ts_coarse
    else:
        raise ConfigError(f"unknown rho source {source!r}")
    return ergodic.ThetaSpec(k, sigma, T, Ls, ts, table, c), source


def run_theta(fld, params, rep, ctx):
    _need(params, "T")
    Ts = [float(v) for v in np.atleast_1d(params["T"])]
    vals, bounds, rows = [], [], []
    sigma = float(params.get("sigma", 0.5))
    factor = float(params.get("bound_factor", 0.01))
    for T in Ts:
        spec, source = _theta_table(fld, params, T, ctx["plan"])
        th = ergodic.theta_bound(spec)
        vals.append(th.value)
        bounds.append(factor * T**sigma)
        rows = th.rows()
    rep.add_series("theta", "T", "1", {"T": Ts, "theta": vals, "bound": bounds})
    last = {k: [r[k] for r in rows] for k in ("t", "L*", "rho", "expTerm", "integrand")}
    rep.add_series("theta_integrand", "t", "1", last, log=False)
    rep.metrics.update({"theta": vals, "theta_over_T_sigma": [v / T**sigma for v, T in zip(vals, Ts)],
                        "theta_within_bound": [v <= b for v, b in zip(vals, bounds)]})
    if params.get("reference_quadrature", True) and source == "zero":
        c = float(params.get("c", 0.1))
        ref = [integrate.quad(lambda t, T=T: math.exp(-c * t * t) * (T / t) ** sigma, 1.0, T, limit=200)[0]
               for T in Ts]
        rep.metrics["theta_quadrature"] = ref
        rep.metrics["theta_quadrature_rel_gap"] = max(abs(a - b) / b for a, b in zip(vals, ref))
    if source == "inverse_t":
        c = float(params.get("c", 0.1))
        ref = [integrate.quad(lambda t, T=T: (1 / t + math.exp(-c)) * (T / t) ** sigma, 1.0, T, limit=200)[0]
               for T in Ts]
        rep.metrics["theta_quadrature"] = ref
    if len(Ts) >= 3:
        rep.metrics["theta_over_T_slope"] = rep.add_fit("theta", Ts, [v / T for v, T in zip(vals, Ts)]).slope


def _reference(fld, params, T_ref):
    tol = float(params.get("tol", 1e-10))
    return solve_corrector(fld, T_ref, corrector_grid(fld, T_ref), tol=tol, check_box=fld.period is None)


def run_twoscale(fld, params, rep, ctx):
    _need(params, "eps")
    eps_list = sorted((float(e) for e in params["eps"]), reverse=True)
    T_ref = float(params.get("T_ref", 256.0 if fld.period is not None or fld.is_constant else 4 / min(eps_list)))
    ref = _reference(fld, params, T_ref)
    ah = effective_tensor(ref)
    rows = {k: [] for k in ("eps", "delta", "h1err", "l2err", "dual_norm", "residual_sum")}
    chi_norms, pts = [], []
    for e in eps_list:
        t0 = time.perf_counter()
        pt = twoscale.two_scale_point(fld, e, ah, ref, params.get("problem", "sinsin"), params.get("problem_params"),
                                      float(params.get("tol", 1e-10)), params.get("cells_per_period"))
        rep.timings[f"eps_{e:g}"] = time.perf_counter() - t0
        ex = pt.expansion
        for k, v in (("eps", e), ("delta", pt.delta), ("h1err", ex.h1), ("l2err", pt.l2_error),
                     ("dual_norm", ex.dual_norm), ("residual_sum", sum(ex.residuals.values()))):
            rows[k].append(v)
        rep.diagnostics[f"eps_{e:g}"] = {"delta_parts": pt.delta_parts, **ex.to_dict(), "n": pt.n}
        chi_norms.append(pt.delta_parts["chi"] * (1 / e))
        pts.append(pt)
    rep.add_series("twoscale", "delta", "1", {"delta": rows["delta"], "h1err": rows["h1err"]})
    rep.add_series("twoscale_eps", "eps", "1", {k: v for k, v in rows.items() if k != "delta"})
    a_const = fld.const.reshape(ah.matrix.shape)
    rep.metrics.update({
        "h1err": rows["h1err"], "w_h1_max": max(rows["h1err"]), "delta": rows["delta"],
        "chi_s2_max": max(chi_norms), "a_hat_vs_constant": float(np.abs(ah.matrix - a_const).max()),
        "dual_within_residual_sum": [d <= s * 1.05 + 1e-12 for d, s in zip(rows["dual_norm"], rows["residual_sum"])],
        "h1err_nonincreasing": bool(np.all(np.diff(rows["h1err"]) <= 1e-12)),
    })
    try:
        fit = rep.add_fit("twoscale", rows["delta"], rows["h1err"])
        rep.metrics["exponent"] = fit.slope
        rep.metrics["exponent_ci_low"] = fit.ci95[0]
    except FitError as exc:
        rep.metrics["exponent"] = None
        rep.diagnostics["fit_degenerate"] = str(exc)
    if ctx.get("out") is not None and params.get("dump", True):
        save_apf(Path(ctx["out"]) / f"w_eps{eps_list[-1]:g}.apf", pts[-1].expansion.w, epsilon=eps_list[-1])


def run_rate(fld, params, rep, ctx):
    _need(params, "eps")
    eps_list = sorted((float(e) for e in params["eps"]), reverse=True)
    tol = float(params.get("tol", 1e-10))
    T_max = float(params.get("T_max", 256.0 if fld.period is not None else 4 / min(eps_list)))
    box = corrector_grid(fld, T_max, box_factor=float(params.get("box_factor", 8)))
    ref = solve_corrector(fld, T_max, box, tol=tol)
    ah = effective_tensor(ref)
    adj = adjoint_field(fld)
    ref_star = ref if fld.is_symmetric() else solve_corrector(adj, T_max, box, tol=tol)
    sigma = float(params.get("sigma", 0.5))
    rows = {k: [] for k in ("eps", "l2err", "relative", "h2_u0", "psi_gap", "psi_gap_adjoint", "theta_over_T", "rhs")}
    for e in eps_list:
        t0 = time.perf_counter()
        pt, _, _ = bvp.rate_point(fld, e, ah, params.get("problem", "sinsin"), params.get("problem_params"), tol=tol)
        T = 1.0 / e
        cs = solve_corrector(fld, T, box, tol=tol, check_box=False)
        gap = psi_gap(cs, ref)
        gap_star = gap if ref_star is ref else psi_gap(solve_corrector(adj, T, box, tol=tol, check_box=False), ref_star)
        if params.get("theta", "auto") == "skip":
            th = 0.0
        else:
            spec, _ = _theta_table(fld, {**params, "sigma": sigma}, T, ctx["plan"])
            th = ergodic.theta_bound(spec).value
        rhs = gap + gap_star + th / T
        for k, v in (("eps", e), ("l2err", pt.l2_error), ("relative", pt.relative), ("h2_u0", pt.h2_u0),
                     ("psi_gap", gap), ("psi_gap_adjoint", gap_star), ("theta_over_T", th / T), ("rhs", rhs)):
            rows[k].append(v)
        rep.timings[f"eps_{e:g}"] = time.perf_counter() - t0
        rep.diagnostics[f"eps_{e:g}"] = {"n": pt.n, "iterations": pt.report_eps.iterations,
                                         "residual": pt.report_eps.residual}
    rep.add_series("rate", "eps", "1", {"eps": rows["eps"], "l2err": rows["l2err"], "relative": rows["relative"],
                                        "rhs": rows["rhs"]})
    fit = rep.add_fit("rate", rows["eps"], rows["l2err"])
    C = max(r / b for r, b in zip(rows["relative"], rows["rhs"]) if b > 0)
    rep.constants["a_hat"] = ah.to_dict()
    rep.constants["rhs_constant"] = C
    rep.metrics.update({"slope": fit.slope, "r2": fit.r2, "l2err": rows["l2err"], "relative": rows["relative"],
                        "rhs": rows["rhs"], "rhs_constant": C,
                        "rhs_dominates": [r <= C * b * (1 + 1e-12) for r, b in zip(rows["relative"], rows["rhs"])]})


def run_profile(fld, params, rep, ctx):
    _need(params, "T")
    Ts = [float(v) for v in params["T"]]
    radii = [float(r) for r in params.get("radii", [1.0, 2.0, 4.0])]
    table = []
    for T in Ts:
        grid = _study_grid(fld, T, params)
        cs = solve_corrector(fld, T, grid, tol=float(params.get("tol", 1e-10)))
        center = np.full(fld.dim, grid.origin + grid.side / 2)
        u = DiscreteField(grid, cs.chi[0, 0])
        G = cs.grad[0, 0] + 0.0
        G[0, 0] += 1.0  # grad of chi + P_1
        prof = bvp.gradient_profile(u, center, radii, grad=G)
        table.append(prof.values)
    table = np.array(table)
    cols = {"T": Ts}
    cols.update({f"r={r:g}": table[:, a] for a, r in enumerate(radii)})
    rep.add_series("profile", "T", "1", cols)
    first = table[:, 0]
    rep.metrics.update({"profile_r_min": first.tolist(), "profile_ratio": float(first.max() / first.min())})
    if "eps" in params:
        e = float(params["eps"])
        n = bvp.resolving_cells(fld, e)
        prob = bvp.make_problem(params.get("problem", "affine"), fld.dim, n, fld, e, params.get("problem_params"))
        u, _ = bvp.solve_dirichlet(prob)
        x0 = np.full(fld.dim, 0.5)
        cr = [bvp.caccioppoli_ratio(u, x0, r) for r in params.get("caccioppoli_radii", [0.05, 0.1, 0.2])]
        rep.metrics["caccioppoli"] = cr
        rep.metrics["caccioppoli_max"] = max(cr)


def run_liouville(fld, params, rep, ctx):
    sigma = float(params.get("sigma", 0.5))
    Rs = [float(v) for v in params.get("R", [4, 8, 16, 32])]
    coef = fld
    if params.get("coefficient") == "identity":
        coef = np.eye(fld.dim).reshape(fld.dim, 1, fld.dim, 1)
    run = bvp.liouville_probe(coef, sigma, Rs, float(params.get("r", 1.0)), params.get("h"),
                              float(params.get("tol", 1e-10)))
    rep.add_series("liouville", "R", "length", {"R": Rs, "grad_mean": run.values})
    fit = rep.add_fit("liouville", Rs, run.values)
    rep.metrics.update({"grad_mean": run.values.tolist(), "slope": fit.slope,
                        "decreasing": bool(np.all(np.diff(run.values) < 0))})
    rep.diagnostics["n"] = run.n


def _sample_grid(fld, params):
    side = float(params.get("side", 64.0 if fld.dim == 1 else 16.0))
    hmax = max_spacing(fld, points=int(params.get("points_per_wavelength", 8)))
    h = min(hmax if not math.isinf(hmax) else 0.25, 0.25)
    n = int(params.get("n", 1 << math.ceil(math.log2(side / h))))
    return Grid(fld.dim, n, side, "periodic", origin=-side / 2)


def run_ergodic(fld, params, rep, ctx):
    """Semigroup identity, heat decay with one calibrated (C, c) per field, oscillation sweep, Theta."""
    names = params.get("fields")
    if names is None:
        _ergodic_one(fld, params, rep, ctx, "")
    else:
        for name in names:
            _ergodic_one(resolve_field(name, ctx["base"]), params, rep, ctx, f"{name}.")
        for key, how in (("semigroup_error", max), ("heat_holds", all), ("heat_grad_holds", all),
                         ("heat_nonincreasing", all), ("oscillation_C_max", max)):
            rep.metrics[key] = how(rep.metrics[f"{n}.{key}"] for n in names)
        rep.metrics["oscillation_points"] = min(rep.metrics[f"{n}.oscillation_points"] for n in names)
    sigma, T, c = float(params.get("sigma", 0.5)), float(params.get("theta_T", 8.0)), float(params.get("c", 0.1))
    th = ergodic.theta_zero_rho(T, sigma, c)
    rep.metrics["theta_zero"] = th.value
    rep.metrics["theta_zero_over_T_sigma"] = th.value / T**sigma


def _ergodic_one(fld, params, rep, ctx, prefix):
    grid = _sample_grid(fld, params)
    a = scalar_profile(fld, grid)
    g = DiscreteField.scalar(grid, a - a.mean())
    base = ctx["plan"]
    shifts = int(params.get("sampling", {}).get("shifts", 64 if fld.dim == 1 else 16))
    frac = float(params.get("z_step_fraction", 0.125))

    def plan_for(L):
        step = base.z_step if base.z_step is not None else max(grid.h, round(frac * L / grid.h) * grid.h)
        return dataclasses.replace(base, shifts=shifts, z_step=step)

    s, t = 0.7, 1.3
    semi = float(np.abs(heat_smooth(heat_smooth(g, s), t).data - heat_smooth(g, s + t).data).max())
    metrics = {"semigroup_error": semi}

    L = float(params.get("L", 2 * math.pi if fld.period is None else float(np.max(fld.period))))
    R = float(params.get("R", 1.0))
    ts = [float(v) for v in params.get("t", np.geomspace(max(R * R, 1.0), 64.0, 9))]
    hd = ergodic.heat_decay(g, 1, L, R, ts, plan_for(L))
    C, c = ergodic.calibrate_heat(hd)
    Cg, cg = ergodic.calibrate_heat(hd, gradient=True)
    holds = hd.holds(C, c)
    holds_g = hd.holds(Cg, cg, gradient=True)
    rep.add_series(f"{prefix}heat_decay", "t", "1", {"t": hd.t, "sup": hd.sup, "grad_sup_sqrt_t": hd.grad_sup * np.sqrt(hd.t),
                                            "envelope": C * hd.envelope(c)}, log=False)
    rep.constants[f"{prefix}heat"] = {"C": C, "c": c, "C_grad": Cg, "c_grad": cg, "omega": hd.omega, "g_norm": hd.g_norm}
    metrics.update({
        "heat_holds": bool(np.all(holds)), "heat_grad_holds": bool(np.all(holds_g)),
        "heat_nonincreasing": bool(np.all(np.diff(hd.sup) <= 1e-12 * max(hd.sup[0], 1e-300))),
    })
    if fld.period is not None and np.any(hd.sup > 1e-13):
        keep = hd.sup > 1e-13
        metrics["periodic_decay_rate"] = ergodic.decay_rate(hd.t[keep], hd.sup[keep])

    u = DiscreteField.scalar(grid, a)
    Ls = [float(v) for v in params.get("osc_L", [0.5, 1.0, 1.5, 2.0])]
    mults = [float(v) for v in params.get("osc_R_factor", [1, 2, 3])]
    consts, rows = [], {"L": [], "R": [], "lhs": [], "rhs_unit": [], "C": []}
    for Lo in Ls:
        for mlt in mults:
            ob = ergodic.oscillation_bound(u, Lo, Lo * mlt, plan_for(Lo))
            rc = ob.required_constant()
            consts.append(rc)
            for k, v in (("L", Lo), ("R", Lo * mlt), ("lhs", ob.lhs), ("rhs_unit", ob.rhs(1.0)), ("C", rc)):
                rows[k].append(v)
    rep.add_series(f"{prefix}oscillation", "R", "length", {"R": rows["R"], "lhs": rows["lhs"], "rhs_unit": rows["rhs_unit"]},
                   log=False)
    rep.diagnostics[f"{prefix}oscillation"] = rows
    metrics.update({"oscillation_points": len(consts), "oscillation_C_max": max(consts)})
    rep.metrics.update({prefix + k: v for k, v in metrics.items()})


def _sbp_error(fld, grid, seed):
    rng = np.random.default_rng(seed)
    m = fld.m
    u = DiscreteField(grid, rng.standard_normal((m,) + grid.node_shape))
    F = DiscreteField(grid, rng.standard_normal((grid.dim, m) + grid.node_shape), staggered=True)
    a = inner(gradient(u), F)
    b = -inner(u, divergence(F))
    scale = math.sqrt(inner(gradient(u), gradient(u)) * inner(F, F))
    op = assemble(fld, grid, 0.0)
    v = rng.standard_normal(op.shape[0])
    w = rng.standard_normal(op.shape[0])
    Kv = op.matrix @ v
    lhs = float(w @ Kv)
    rhs = float((op.gradient @ w) @ (op.flux @ (op.gradient @ v)))
    return max(abs(a - b) / scale, abs(lhs - rhs) / max(abs(lhs), 1.0))


def run_structure(fld, params, rep, ctx):
    """SBP, adjoint transposition and the ellipticity range of the effective tensor over a field list."""
    names = params.get("fields", bundled_fields())
    T = float(params.get("T", 4.0))
    tol = float(params.get("tol", 1e-12))
    out = {}
    for name in names:
        f = resolve_field(name, ctx["base"])
        grid = corrector_grid(f, T)
        cs = solve_corrector(f, T, grid, tol=tol)
        ah = effective_tensor(cs)
        cs_star = solve_corrector(adjoint_field(f), T, grid, tol=tol)
        gap = float(np.abs(effective_tensor(cs_star).matrix - ah.matrix.T).max())
        lo, hi = ah.eig_range
        out[name] = {"sbp": _sbp_error(f, Grid(f.dim, 16, grid.side, "periodic"), ctx["seed"]),
                     "adjoint_gap": gap, "eig_min": lo, "eig_max": hi, "mu": f.mu,
                     "in_range": bool(lo >= f.mu * (1 - 1e-12) and hi <= (1 + f.dim) / f.mu)}
    rep.diagnostics["fields"] = out
    rep.metrics.update({
        "sbp_max": max(v["sbp"] for v in out.values()),
        "adjoint_gap_max": max(v["adjoint_gap"] for v in out.values()),
        "adjoint_gap_over_tol": max(v["adjoint_gap"] for v in out.values()) / tol,
        "eig_in_range_all": all(v["in_range"] for v in out.values()),
    })


RUNNERS: dict = {
    "field-check": run_field_check, "rho": run_rho, "corrector": run_corrector, "effective": run_effective,
    "dual": run_dual, "growth": run_growth, "cauchy": run_cauchy, "theta": run_theta,
    "twoscale": run_twoscale, "rate": run_rate, "profile": run_profile, "liouville": run_liouville,
    "ergodic": run_ergodic, "structure": run_structure,
}


def run_experiment(cfg: dict, base: Path = Path("."), out=None, seed=None) -> ExperimentReport:
    """Run one config; raises ConfigError, FieldError, SolverError or CorrectorError on failure."""
    kind = cfg.get("kind")
    if kind not in RUNNERS:
        raise ConfigError(f"unknown kind {kind!r}")
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    if "field" not in cfg:
        raise ConfigError("config needs a 'field'")
    fld = resolve_field(cfg["field"], base)
    echo = {k: v for k, v in cfg.items() if k not in ("out",)}
    echo["seed"] = seed
    rep = ExperimentReport(kind, echo, fld.digest())
    ctx = {"seed": seed, "plan": _plan(params, seed), "out": out, "base": base}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        RUNNERS[kind](fld, params, rep, ctx)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad parameters for {kind}: {exc!r}") from exc
    rep.timings["total"] = time.perf_counter() - t0
    for check in cfg.get("checks", []):
        cid, ok, val = evaluate_check(check, rep.metrics)
        rep.flag(cid, ok, metric=check["metric"], op=check.get("op", "true"), threshold=check.get("value"),
                 value=val)
    return rep


EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_FIELD, EXIT_SOLVER = 0, 1, 2, 3, 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, FieldError):
        return EXIT_FIELD
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    return EXIT_CONFIG
