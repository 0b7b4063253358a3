"""Figure rendering for surfaces and cuts (matplotlib, imported lazily).

Only the CLI's ``--plot`` path imports this module, so the numerical core
never pulls in matplotlib.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import SurfaceGrid
from .surface import CutSet


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_surface(
    surface: SurfaceGrid,
    path: str | Path,
    title: str = "",
    label: str = "",
    nodes: tuple | None = None,
    vmin: float | None = None,
) -> Path:
    """Filled image of a surface with invalid cells left blank."""
    plt = _pyplot()
    s = surface.spec
    data = np.where(surface.valid, surface.values, np.nan)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(
        data,
        origin="lower",
        extent=(s.x_min, s.x_max, s.y_min, s.y_max),
        cmap="viridis",
        vmin=vmin,
        interpolation="nearest",
    )
    if nodes is not None:
        xy = np.array([[p[0], p[1]] for p in nodes])
        ax.plot(xy[:, 0], xy[:, 1], "wo", ms=5, mec="k")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label=label)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_cuts(cuts: CutSet, path: str | Path, title: str = "") -> Path:
    """One line per swept parameter value, in dB relative to the sweep maximum."""
    plt = _pyplot()
    db = np.where(cuts.valid, cuts.db(), np.nan)
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for k, pv in enumerate(cuts.param_values):
        ax.plot(cuts.xs, db[k], label=f"{cuts.param} = {pv:g}")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("ETAP (dB rel. max)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
