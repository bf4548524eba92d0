"""Figure rendering for reports, uncertainty and Grad-CAM output.

Everything draws through the Agg backend so headless runs work; functions
take data plus an output path and return the saved path.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_leadtime_series(series, ylabel, path, title=None):
    """series: {label: 12 values}; x axis is minutes ahead (5..60)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    minutes = np.arange(1, 13) * 5
    for label, values in series.items():
        ax.plot(minutes, values, marker="o", label=label)
    ax.set_xlabel("minutes ahead")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_season_bars(groups, ylabel, path, title=None):
    """groups: {label (model/metric): {season: value}}; grouped bar chart."""
    seasons = []
    for values in groups.values():
        for s in values:
            if s not in seasons:
                seasons.append(s)
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(1, len(groups))
    xs = np.arange(len(seasons))
    for j, (label, values) in enumerate(groups.items()):
        heights = [values.get(s, 0.0) for s in seasons]
        ax.bar(xs + j * width, heights, width=width, label=label)
    ax.set_xticks(xs + width * (len(groups) - 1) / 2)
    ax.set_xticklabels(seasons)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_prediction_panel(x_acc, y_acc, pred_acc, path, title=None):
    """Input hour, observed target hour, predicted hour as mm accumulations."""
    panels = [("input hour", x_acc), ("target hour", y_acc), ("prediction", pred_acc)]
    vmax = max(float(np.max(p)) for _, p in panels) or 1.0
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.6))
    for ax, (label, data) in zip(axes, panels):
        im = ax.imshow(data, vmin=0, vmax=vmax, cmap="viridis")
        ax.set_title(label)
        ax.axis("off")
    fig.colorbar(im, ax=axes, shrink=0.8, label="mm / h")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_uncertainty_maps(maps, path, title=None):
    """12 per-lead variance maps in a 3x4 grid, shared color scale."""
    var = np.asarray(maps)
    vmax = float(var.max()) or 1.0
    fig, axes = plt.subplots(3, 4, figsize=(11, 8))
    for t, ax in enumerate(axes.flat):
        im = ax.imshow(var[t], vmin=0, vmax=vmax, cmap="magma")
        ax.set_title(f"+{(t + 1) * 5} min", fontsize=9)
        ax.axis("off")
    fig.colorbar(im, ax=axes, shrink=0.7, label="variance (normalized units$^2$)")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_heatmap_grid(results, acc_mm, path):
    """Grad-CAM results plus the input accumulation as a reference panel."""
    names = list(results)
    n = len(names) + 1
    cols = 5
    rows = math.ceil(n / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.4 * cols, 2.4 * rows))
    axes = np.atleast_1d(axes).ravel()
    axes[0].imshow(acc_mm, cmap="viridis")
    axes[0].set_title("input accumulation", fontsize=8)
    axes[0].axis("off")
    for ax, name in zip(axes[1:], names):
        r = results[name]
        ax.imshow(r.heatmap, vmin=0, vmax=1, cmap="inferno")
        label = name + (" (empty)" if r.empty else "")
        ax.set_title(label, fontsize=8)
        ax.axis("off")
    for ax in axes[n:]:
        ax.axis("off")
    return _save(fig, path)


def plot_metric_table(reports, path):
    """Table-shaped summary image: rows = (threshold, model), cols = metrics."""
    cols = ["threshold", "model", "mse", "f1", "csi", "hss", "mcc"]
    rows = []
    for rep in reports:
        for thr in sorted(rep.thresholds, key=float):
            block = rep.thresholds[thr]
            rows.append([f"> {thr} mm", rep.model, f"{rep.mse:.5f}",
                         *(f"{block[m]:.5f}" for m in ("f1", "csi", "hss", "mcc"))])
    fig, ax = plt.subplots(figsize=(8, 0.5 + 0.35 * len(rows)))
    ax.axis("off")
    table = ax.table(cellText=rows, colLabels=cols, loc="center")
    table.auto_set_font_size(False)
    table.set_fontsize(8)
    return _save(fig, path)
