"""Functional depth, functional boxplots, and pointwise summaries.

Curves sampled on a common grid are ranked by h-modal depth (Cuevas,
Febrero & Fraiman, Comput. Statist. 22, 2007): each curve scores the sum of
a truncated Gaussian kernel applied to its L2 distances from every curve in
the sample, so curves in densely populated regions of function space rank
deepest.  The functional boxplot (Sun & Genton, JCGS 20, 2011) draws the
envelope of the deepest half, inflates it by 1.5 times its height to get
fences, and flags curves that escape the fences anywhere as outliers.
Classical per-position boxplot statistics are provided alongside for
comparison at fixed stations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_float_1d, as_float_2d, check_strictly_increasing

__all__ = [
    "FunctionalBoxplot",
    "PointwiseBoxplots",
    "default_bandwidth",
    "functional_boxplot",
    "h_modal_depth",
    "l2_distance",
    "pointwise_boxplots",
]

DEFAULT_BANDWIDTH_PERCENTILE = 0.15
DEFAULT_STATION_STEP = 10.0
_KERNEL_SCALE = 2.0 / math.sqrt(2.0 * math.pi)


def l2_distance(grid, f, g) -> float:
    """L2 distance between two curves sampled on a common grid."""
    grid = as_float_1d(grid, "grid")
    f = as_float_1d(f, "f")
    g = as_float_1d(g, "g")
    if len(f) != len(grid) or len(g) != len(grid):
        raise ValueError("curves and grid must share their length")
    check_strictly_increasing(grid, "grid")
    diff = f - g
    return float(np.sqrt(np.trapezoid(diff * diff, grid)))


def _pairwise_l2(grid: np.ndarray, curves: np.ndarray) -> np.ndarray:
    diff = curves[:, None, :] - curves[None, :, :]
    sq = np.trapezoid(diff * diff, grid, axis=-1)
    return np.sqrt(np.maximum(sq, 0.0))


def default_bandwidth(distances, p: float = DEFAULT_BANDWIDTH_PERCENTILE) -> float:
    """Percentile-type bandwidth from a collection of distances.

    The intended collection is the full set of n^2 pairwise distances,
    self-distances (zeros) included.  The percentile uses the shifted
    plotting position idx = p*(n-1) + 1 on the sorted values (0-based,
    clamped to the ends, linear interpolation in between), which sits one
    rank above the usual linear quantile so that small samples get a
    strictly positive bandwidth as soon as any distance is positive.
    """
    d = as_float_1d(distances, "distances")
    if len(d) == 0:
        raise ValueError("distances must be non-empty")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    s = np.sort(d)
    idx = p * (len(s) - 1.0) + 1.0
    idx = min(max(idx, 0.0), len(s) - 1.0)
    k = int(math.floor(idx))
    frac = idx - k
    if k >= len(s) - 1:
        return float(s[-1])
    return float((1.0 - frac) * s[k] + frac * s[k + 1])


def h_modal_depth(grid, curves, bandwidth: float | None = None, *,
                  include_self_distances: bool = True) -> np.ndarray:
    """h-modal depth of each curve within the sample.

    depth_i = sum_k K(||f_i - f_k|| / h) with the half-Gaussian kernel
    K(u) = (2/sqrt(2*pi)) exp(-u^2/2); the self term is included in the
    sum.  The default bandwidth is the percentile rule over all pairwise
    distances (self-distances included unless ``include_self_distances``
    is switched off); when that rule degenerates to zero (all curves
    identical) every depth is reported as n, the all-tied convention.  An
    explicitly supplied bandwidth must be positive.
    """
    grid = as_float_1d(grid, "grid")
    check_strictly_increasing(grid, "grid")
    rows = as_float_2d(curves, "curves")
    if rows.shape[1] != len(grid):
        raise ValueError("curves and grid must share their length")
    n = rows.shape[0]
    dist = _pairwise_l2(grid, rows)
    if bandwidth is None:
        if n < 2:
            raise ValueError("the default bandwidth needs at least two curves")
        pool = dist.ravel() if include_self_distances else dist[np.triu_indices(n, k=1)]
        bandwidth = default_bandwidth(pool)
        if bandwidth == 0.0:
            return np.full(n, float(n))
    elif bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    u = dist / bandwidth
    return (_KERNEL_SCALE * np.exp(-0.5 * u * u)).sum(axis=1)


@dataclass(frozen=True, eq=False)
class FunctionalBoxplot:
    """Envelope summary of a curve family ranked by depth.

    ``regions`` maps a central fraction (0.25, 0.5, 0.75) to the pointwise
    (lower, upper) envelope of the deepest ceil(fraction * n) curves;
    fences inflate the 50% region by ``factor`` times its height, and
    whiskers are the envelope of the non-outlying curves.
    """

    grid: np.ndarray
    depths: np.ndarray
    order: np.ndarray
    median_index: int
    median: np.ndarray
    regions: dict
    fence_lower: np.ndarray
    fence_upper: np.ndarray
    whisker_lower: np.ndarray
    whisker_upper: np.ndarray
    outliers: np.ndarray
    factor: float


def _central_region(rows: np.ndarray, order: np.ndarray, fraction: float):
    count = int(math.ceil(fraction * rows.shape[0] - 1e-9))
    count = max(count, 1)
    chosen = rows[order[:count]]
    return chosen.min(axis=0), chosen.max(axis=0)


def functional_boxplot(
    grid,
    curves,
    *,
    depths=None,
    bandwidth: float | None = None,
    factor: float = 1.5,
    fractions: tuple = (0.25, 0.5, 0.75),
) -> FunctionalBoxplot:
    """Functional boxplot of curves on a common grid (needs n >= 4).

    Curves are ordered by decreasing depth with ties broken by input order;
    a curve is an outlier when it lies strictly outside the fences at any
    grid position.
    """
    grid = as_float_1d(grid, "grid")
    check_strictly_increasing(grid, "grid")
    rows = as_float_2d(curves, "curves")
    if rows.shape[1] != len(grid):
        raise ValueError("curves and grid must share their length")
    n = rows.shape[0]
    if n < 4:
        raise ValueError("functional boxplot needs at least four curves")
    if depths is None:
        depths = h_modal_depth(grid, rows, bandwidth=bandwidth)
    else:
        depths = as_float_1d(depths, "depths")
        if len(depths) != n:
            raise ValueError("depths must give one value per curve")
    if 0.5 not in fractions:
        raise ValueError("fractions must include the central 0.5 region")

    order = np.argsort(-depths, kind="stable")
    regions = {float(p): _central_region(rows, order, float(p)) for p in sorted(fractions)}
    lower50, upper50 = regions[0.5]
    height = upper50 - lower50
    fence_lower = lower50 - factor * height
    fence_upper = upper50 + factor * height
    outlier_mask = np.any((rows < fence_lower) | (rows > fence_upper), axis=1)
    keep = rows[~outlier_mask]
    if keep.shape[0] == 0:
        raise ValueError("all curves flagged as outliers; fences are degenerate")
    return FunctionalBoxplot(
        grid=grid,
        depths=depths,
        order=order,
        median_index=int(order[0]),
        median=rows[order[0]].copy(),
        regions=regions,
        fence_lower=fence_lower,
        fence_upper=fence_upper,
        whisker_lower=keep.min(axis=0),
        whisker_upper=keep.max(axis=0),
        outliers=np.flatnonzero(outlier_mask),
        factor=float(factor),
    )


@dataclass(frozen=True, eq=False)
class PointwiseBoxplots:
    """Classical five-number summaries (plus V85) at fixed stations."""

    stations: np.ndarray
    minimum: np.ndarray
    q1: np.ndarray
    median: np.ndarray
    q3: np.ndarray
    maximum: np.ndarray
    v85: np.ndarray


def pointwise_boxplots(grid, curves, *, step: float = DEFAULT_STATION_STEP) -> PointwiseBoxplots:
    """Per-station speed summaries of curves sampled on a common grid.

    Stations run from the start of the grid at the given step; curves are
    linearly interpolated onto them, and quantiles use the standard linear
    convention.  V85, the 85th percentile, is the usual operating-speed
    figure.
    """
    grid = as_float_1d(grid, "grid")
    check_strictly_increasing(grid, "grid")
    rows = as_float_2d(curves, "curves")
    if rows.shape[1] != len(grid):
        raise ValueError("curves and grid must share their length")
    if step <= 0:
        raise ValueError("step must be positive")
    count = int(math.floor((grid[-1] - grid[0]) / step + 1e-12)) + 1
    stations = grid[0] + step * np.arange(count)
    sampled = np.vstack([np.interp(stations, grid, row) for row in rows])
    q1, med, q3, v85 = (
        np.quantile(sampled, q, axis=0, method="linear") for q in (0.25, 0.5, 0.75, 0.85)
    )
    return PointwiseBoxplots(
        stations=stations,
        minimum=sampled.min(axis=0),
        q1=q1,
        median=med,
        q3=q3,
        maximum=sampled.max(axis=0),
        v85=v85,
    )
