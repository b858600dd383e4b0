"""Static SVG renderings of profiles, registered families, and boxplots.

All figures are rendered headless and written atomically.  SVG output is
made reproducible by pinning the hash salt and dropping the embedded
creation date, so identical inputs give identical bytes.
"""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["plot_profile", "plot_curve_family", "plot_functional_boxplot"]

matplotlib.rcParams["svg.hashsalt"] = "speedprof"

_SVG_METADATA = {"Date": None}


def _atomic_savefig(fig, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".svg")
    os.close(fd)
    try:
        fig.savefig(tmp, format="svg", metadata=_SVG_METADATA)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)


def plot_profile(path: str, x, v, stop_intervals=(), title: str = "speed profile") -> None:
    """One speed-vs-distance curve with its stop intervals shaded."""
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(x, v, lw=1.5)
    for lo, hi in stop_intervals:
        ax.axvspan(lo, hi, color="tab:red", alpha=0.25, lw=0)
    ax.set_xlabel("distance [m]")
    ax.set_ylabel("speed [m/s]")
    ax.set_title(title)
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    _atomic_savefig(fig, path)


def plot_curve_family(path: str, grid, curves, mean=None, title: str = "curves") -> None:
    """A family of curves on a common grid, with an optional mean overlay."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for row in curves:
        ax.plot(grid, row, lw=0.8, color="tab:gray", alpha=0.6)
    if mean is not None:
        ax.plot(grid, mean, lw=2.0, color="tab:blue", label="mean")
        ax.legend(loc="best")
    ax.set_xlabel("distance [m]")
    ax.set_ylabel("speed [m/s]")
    ax.set_title(title)
    fig.tight_layout()
    _atomic_savefig(fig, path)


def plot_functional_boxplot(path: str, box, curves=None, title: str = "functional boxplot") -> None:
    """Median, central regions, whiskers and (if curves given) outliers."""
    fig, ax = plt.subplots(figsize=(8, 4))
    grid = box.grid
    for frac in sorted(box.regions, reverse=True):
        lower, upper = box.regions[frac]
        ax.fill_between(grid, lower, upper, alpha=0.25, color="tab:blue", lw=0)
    ax.plot(grid, box.whisker_lower, color="tab:blue", lw=1.0, ls="--")
    ax.plot(grid, box.whisker_upper, color="tab:blue", lw=1.0, ls="--")
    ax.plot(grid, box.median, color="black", lw=2.0, label="median")
    if curves is not None:
        for idx in box.outliers:
            ax.plot(grid, curves[idx], color="tab:red", lw=1.0)
    ax.set_xlabel("distance [m]")
    ax.set_ylabel("speed [m/s]")
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    _atomic_savefig(fig, path)
