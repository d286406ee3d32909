"""Report figures. Uses the Agg canvas directly so no global pyplot state is touched."""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.cm import ScalarMappable
from matplotlib.colors import Normalize
from matplotlib.figure import Figure

from .grid import heatmap_rgb

# PNG metadata would otherwise embed the matplotlib version string
_PNG_META = {"Software": None}


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100, metadata=_PNG_META)


def shared_log_range(*grids):
    logs = [np.log10(g[g > 0]) for g in (np.asarray(x) for x in grids) if np.any(g > 0)]
    if not logs:
        return (0.0, 1.0)
    return float(min(l.min() for l in logs)), float(max(l.max() for l in logs))


def plot_triptych(hr, lr, sr, path, title=None):
    """HR / LR / SR heatmaps on one shared log10 colour scale; zeros stay white."""
    lo, hi = shared_log_range(hr, lr, sr)
    fig = Figure(figsize=(10, 3.6))
    axes = fig.subplots(1, 3)
    for ax, (name, v) in zip(axes, (("HR", hr), ("LR", lr), ("SR", sr))):
        ax.imshow(heatmap_rgb(v, log_range=(lo, hi)), interpolation="nearest")
        ax.set_title(f"{name} {np.shape(v)[0]}x{np.shape(v)[1]}")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(ScalarMappable(Normalize(lo, hi), "viridis"), ax=list(axes),
                 label="log10 emission (kg m-2 s-1)", shrink=0.8)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_histograms(path, bins=64, **maps):
    """Overlaid log10 histograms of nonzero values; zero shares go in the legend."""
    lo, hi = shared_log_range(*maps.values())
    edges = np.linspace(lo, hi if hi > lo else lo + 1, bins + 1)
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    for name, v in maps.items():
        v = np.asarray(v).ravel()
        pos = v[v > 0]
        zero_share = 1.0 - pos.size / v.size
        ax.hist(np.log10(pos), bins=edges, histtype="step", density=False,
                label=f"{name} (zeros {zero_share:.0%})")
    ax.set_xlabel("log10 emission")
    ax.set_ylabel("cells")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def plot_ssim_bars(rows, path):
    """Bar chart of mean SSIM per (label, model) table row."""
    fig = Figure(figsize=(max(4, 0.9 * len(rows) + 2), 4))
    ax = fig.subplots()
    names = [f"{r['label']}\n{r['model']}" for r in rows]
    values = [float(r["mean_ssim"]) for r in rows]
    ax.bar(range(len(rows)), values, color="#4c72b0")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, fontsize=8)
    ax.set_ylabel("mean SSIM")
    ax.set_ylim(min(0.0, min(values, default=0.0)), 1.0)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
