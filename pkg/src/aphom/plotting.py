"""Figures for report series (non-interactive backend)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_series(series, path, fit=None):
    x = np.asarray(series.x, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 3.6), dpi=110)
    positive = series.log and np.all(x > 0)
    for label, vals in series.columns.items():
        if label == series.x_label:
            continue
        y = np.asarray(vals, dtype=float)
        ok = np.isfinite(y)
        if positive:
            ok &= y > 0
        if not ok.any():
            continue
        unit = series.units.get(label, "1")
        ax.plot(x[ok], y[ok], "o-", ms=4, label=label if unit == "1" else f"{label} [{unit}]")
    if fit is not None and positive:
        xs = np.geomspace(x.min(), x.max(), 50)
        ax.plot(xs, math.exp(fit["intercept"]) * xs ** fit["slope"], "k--", lw=1,
                label=f"slope {fit['slope']:.3f}")
    if positive:
        ax.set_xscale("log")
        ys = [v for k, vals in series.columns.items() if k != series.x_label for v in vals]
        if ys and all(v > 0 for v in ys if np.isfinite(v)):
            ax.set_yscale("log")
    ax.set_xlabel(f"{series.x_label} [{series.x_unit}]")
    ax.set_title(series.name)
    ax.grid(True, which="both", alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
