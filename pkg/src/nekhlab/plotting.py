"""Optional PNG renderings; matplotlib is imported lazily.

The core never imports this module.  Every function returns the written
path, or ``None`` when matplotlib is unavailable.
"""
from __future__ import annotations

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        return None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def available() -> bool:
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def plot_zonemap(S: np.ndarray, box, path, title: str = "zone rank s"):
    """S: (ny, nx) integer codes (-1 boundary band, -2 unclassified, -3 ambiguous)."""
    plt = _pyplot()
    if plt is None:
        return None
    from matplotlib.colors import ListedColormap, BoundaryNorm
    x0, x1, y0, y1 = box
    cmap = ListedColormap(["#7b3294", "#d7191c", "#000000", "#ffffff", "#abd9e9", "#2c7bb6", "#053061"])
    norm = BoundaryNorm(np.arange(-3.5, 4.5), cmap.N)
    fig, ax = plt.subplots(figsize=(6, 5.4))
    im = ax.imshow(S, origin="lower", extent=(x0, x1, y0, y1), cmap=cmap, norm=norm,
                   interpolation="nearest", aspect="equal")
    cb = fig.colorbar(im, ax=ax, ticks=range(-3, 4))
    cb.ax.set_yticklabels(["ambig.", "unclass.", "band", "0", "1", "2", "3"])
    ax.set_xlabel("$a_1$")
    ax.set_ylabel("$a_2$")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectory(traj, path):
    plt = _pyplot()
    if plt is None:
        return None
    t = np.asarray(traj.times)
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    nrm = np.linalg.norm(traj.actions, axis=1)
    pos = t > 0
    ax0.loglog(t[pos], nrm[pos], lw=0.8, label="|a(t)|")
    ax0.loglog(t[pos], traj.sup[pos], lw=1.2, label="running sup")
    ax0.set_xlabel("t")
    ax0.legend()
    if traj.d >= 2:
        ax1.plot(traj.actions[:, 0], traj.actions[:, 1], ",", alpha=0.6)
        ax1.set_xlabel("$a_1$")
        ax1.set_ylabel("$a_2$")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_growth(t, sup, envelope, path, fitted=None):
    plt = _pyplot()
    if plt is None:
        return None
    t = np.asarray(t)
    pos = t > 0
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(t[pos], np.asarray(sup)[pos], label="sup |a|")
    ax.loglog(t[pos], np.asarray(envelope)[pos], "--", label="envelope")
    if fitted is not None:
        ax.loglog(t[pos], np.asarray(fitted)[pos], ":", label="fit")
    ax.set_xlabel("t")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
