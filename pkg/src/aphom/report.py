"""Experiment reports: labelled series, power-law fits, flags and a reproducible hash."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats


class FitError(ValueError):
    pass


@dataclass
class PowerLawFit:
    slope: float
    intercept: float
    r2: float
    stderr: float
    ci95: tuple
    points: int

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "stderr": self.stderr,
                "ci95": list(self.ci95), "points": self.points}


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> PowerLawFit:
    """Least squares of log y on log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise FitError("x and y differ in length")
    if x.size < 3:
        raise FitError("a power-law fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise FitError("a power-law fit needs finite positive values")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise FitError("x values are all equal")
    res = stats.linregress(lx, ly)
    r2 = float(res.rvalue**2) if np.ptp(ly) > 0 else 1.0
    stderr = float(res.stderr)
    dof = x.size - 2
    half = float(stats.t.ppf(0.975, dof)) * stderr if dof > 0 else math.inf
    return PowerLawFit(float(res.slope), float(res.intercept), r2, stderr,
                       (float(res.slope) - half, float(res.slope) + half), int(x.size))


@dataclass
class Series:
    name: str
    x_label: str
    x_unit: str
    columns: dict  # label -> list of floats; first entry is the abscissa
    units: dict
    log: bool = True

    @property
    def x(self):
        return self.columns[self.x_label]

    def to_dict(self):
        return {"columns": {k: [_clean(v) for v in vals] for k, vals in self.columns.items()},
                "units": self.units, "x": self.x_label}

    def write_csv(self, path: Path):
        labels = list(self.columns)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"{k} [{self.units.get(k, '1')}]" for k in labels])
            for row in zip(*(self.columns[k] for k in labels)):
                w.writerow([repr(float(v)) for v in row])


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_clean(a) for a in v.tolist()]
    if isinstance(v, dict):
        return {str(k): _clean(a) for k, a in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(a) for a in v]
    return v


def _strip_times(obj):
    if isinstance(obj, dict):
        return {k: _strip_times(v) for k, v in obj.items() if k not in ("wall_time", "timings")}
    if isinstance(obj, list):
        return [_strip_times(v) for v in obj]
    return obj


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    field_hash: Optional[str] = None
    series: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def add_series(self, name, x_label, x_unit, columns: dict, units: Optional[dict] = None, log=True):
        units = dict(units or {})
        units.setdefault(x_label, x_unit)
        for k in columns:
            units.setdefault(k, "1")
        cols = {x_label: [float(v) for v in columns[x_label]]}
        cols.update({k: [float(v) for v in vals] for k, vals in columns.items() if k != x_label})
        self.series[name] = Series(name, x_label, x_unit, cols, units, log)
        return self.series[name]

    def add_fit(self, name, x, y):
        fit = fit_power_law(x, y)
        self.fits[name] = fit.to_dict()
        return fit

    def flag(self, assertion: str, passed: bool, **detail):
        self.flags[assertion] = {"passed": bool(passed), **_clean(detail)}

    @property
    def passed(self) -> bool:
        return all(f["passed"] for f in self.flags.values())

    def to_dict(self, with_hash=True) -> dict:
        doc = {
            "kind": self.kind,
            "config": _clean(self.config),
            "field_hash": self.field_hash,
            "series": {k: s.to_dict() for k, s in self.series.items()},
            "fits": _clean(self.fits),
            "constants": _clean(self.constants),
            "metrics": _clean(self.metrics),
            "flags": _clean(self.flags),
            "diagnostics": _clean(self.diagnostics),
            "passed": self.passed,
        }
        if with_hash:
            doc["hash"] = self.digest()
            doc["timings"] = _clean(self.timings)
        return doc

    def canonical(self) -> str:
        return json.dumps(_strip_times(self.to_dict(with_hash=False)), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def write(self, out_dir, figures: bool = True) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.json", "series": [], "figures": []}
        with open(paths["report"], "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        for name, s in self.series.items():
            p = out / f"{name}.csv"
            s.write_csv(p)
            paths["series"].append(p)
        if figures and self.series:
            from .plotting import plot_series

            for name, s in self.series.items():
                paths["figures"].append(plot_series(s, out / f"{name}.png", self.fits.get(name)))
        return paths


def read_series_csv(path):
    """Columns of a series CSV, keyed by bare label (units stripped)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise FitError(f"{path}: no data rows")
    labels = [h.split(" [")[0] for h in rows[0]]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return {k: data[:, i] for i, k in enumerate(labels)}
