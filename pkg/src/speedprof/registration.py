"""Landmark registration of speed-vs-distance curves.

Curves recorded on the same road share structural events (stops, sharp
slow-downs) at slightly different positions.  Registration aligns them by
warping the distance axis: landmarks are extracted per curve from
low-speed runs, a reference configuration is the cross-curve mean, and each
curve gets a monotone piecewise-cubic warping that matches its landmarks to
the reference while staying close to the identity elsewhere.

The warping h maps reference positions to curve positions and is built
from Hermite segments.  Around every landmark a window of unit slope keeps
local speed shapes undistorted; between windows, tangents and secants are
kept inside the Fritsch-Carlson monotonicity region (Fritsch & Carlson,
SIAM J. Numer. Anal. 17, 1980), shrinking all windows symmetrically when
the landmark layout is too tight.  If no positive window width works, the
warping falls back to a plain monotone interpolant through the landmark
pairs and is flagged as degraded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_float_1d, as_float_2d, check_same_length, check_strictly_increasing

__all__ = [
    "LandmarkRegistration",
    "WarpingFunction",
    "apply_inverse_warp",
    "apply_warp",
    "build_warping",
    "cross_sectional_mean",
    "extract_landmarks",
    "reference_landmarks",
]

DEFAULT_WINDOW = 100.0
DEFAULT_GROUP_GAP = 20.0
DEFAULT_MIN_SECANT = 0.35
DEFAULT_EPS_STOP = 0.1


# cubic Hermite basis on [0, 1]; values/slopes at the nodes reproduce exactly
def _hermite(nodes, values, slopes, x, deriv=0):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    h = nodes[k + 1] - nodes[k]
    t = (x - nodes[k]) / h
    v0, v1 = values[k], values[k + 1]
    s0, s1 = slopes[k], slopes[k + 1]
    if deriv == 0:
        h00 = (1.0 + 2.0 * t) * (1.0 - t) ** 2
        h10 = t * (1.0 - t) ** 2
        h01 = t * t * (3.0 - 2.0 * t)
        h11 = t * t * (t - 1.0)
        return h00 * v0 + h * h10 * s0 + h01 * v1 + h * h11 * s1
    if deriv == 1:
        d00 = 6.0 * t * t - 6.0 * t
        d10 = 3.0 * t * t - 4.0 * t + 1.0
        d01 = -d00
        d11 = 3.0 * t * t - 2.0 * t
        return (d00 * v0 + d01 * v1) / h + d10 * s0 + d11 * s1
    raise ValueError("deriv must be 0 or 1")


@dataclass(frozen=True, eq=False)
class WarpingFunction:
    """Monotone piecewise-cubic map from reference positions to curve positions.

    Node values and slopes are interpolated exactly, so the anchors
    h(lo) = lo and h(hi) = hi hold bit for bit.  ``window`` is the realized
    unit-slope window width around each landmark; ``degraded`` marks the
    windowless fallback.
    """

    nodes: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    window: float = 0.0
    degraded: bool = False
    landmarks_ref: np.ndarray | None = None
    landmarks_curve: np.ndarray | None = None

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    def _check_inside(self, x):
        lo, hi = self.domain
        span = hi - lo
        xx = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(xx < lo - 1e-9 * span) or np.any(xx > hi + 1e-9 * span):
            raise ValueError(f"argument outside the warping domain [{lo}, {hi}]")
        return np.clip(xx, lo, hi)

    def __call__(self, x):
        xx = self._check_inside(x)
        out = _hermite(self.nodes, self.values, self.slopes, xx)
        return float(out[0]) if np.ndim(x) == 0 else out

    def derivative(self, x):
        xx = self._check_inside(x)
        out = _hermite(self.nodes, self.values, self.slopes, xx, deriv=1)
        return float(out[0]) if np.ndim(x) == 0 else out

    def invert(self, y, max_iter: int = 64):
        """h^-1 by bisection; node values invert exactly."""
        lo_d, hi_d = self.domain
        span = hi_d - lo_d
        vlo, vhi = float(self.values[0]), float(self.values[-1])
        yy = np.atleast_1d(np.asarray(y, dtype=float))
        tol = 1e-9 * max(vhi - vlo, 1e-300)
        if np.any(yy < vlo - tol) or np.any(yy > vhi + tol):
            raise ValueError(f"argument outside the warping range [{vlo}, {vhi}]")
        yq = np.clip(yy, vlo, vhi)

        k = np.clip(np.searchsorted(self.values, yq, side="right") - 1, 0, len(self.values) - 2)
        lo = self.nodes[k].copy()
        hi = self.nodes[k + 1].copy()
        exact = yq == self.values[k]
        for _ in range(max_iter):
            if np.max(hi - lo) <= 1e-15 * span:
                break
            mid = 0.5 * (lo + hi)
            pred = _hermite(self.nodes, self.values, self.slopes, mid) >= yq
            hi = np.where(pred, mid, hi)
            lo = np.where(pred, lo, mid)
        out = np.where(exact, self.nodes[k], hi)
        return float(out[0]) if np.ndim(y) == 0 else out


def extract_landmarks(
    grid,
    values,
    *,
    eps_stop: float = DEFAULT_EPS_STOP,
    n_expected: int | None = None,
    group_gap: float = DEFAULT_GROUP_GAP,
    with_flags: bool = False,
):
    """Landmark positions of one speed curve sampled on ``grid``.

    Maximal runs with speed below ``eps_stop`` are found, runs closer than
    ``group_gap`` are merged, and each group contributes its midpoint.
    Runs touching the first or last grid sample are discarded: a vehicle at
    rest at the route boundary is a recording endpoint, not a stop event,
    and warping functions must keep landmarks strictly inside the domain.
    When ``n_expected`` asks for more landmarks than there are stop groups,
    the deepest local speed minima (kept ``group_gap`` away from existing
    landmarks and each other) fill the deficit; with ``with_flags`` the
    returned mask marks those filled entries.
    """
    grid = as_float_1d(grid, "grid")
    values = as_float_1d(values, "values")
    check_same_length(grid=grid, values=values)
    check_strictly_increasing(grid, "grid")
    if eps_stop <= 0:
        raise ValueError("eps_stop must be positive")

    below = (values < eps_stop).astype(int)
    starts = np.flatnonzero(np.diff(np.r_[0, below]) == 1)
    ends = np.flatnonzero(np.diff(np.r_[below, 0]) == -1)
    groups = []
    for s, e in zip(starts, ends):
        if s == 0 or e == len(values) - 1:
            continue  # route boundary, not a stop event
        if groups and grid[s] - grid[groups[-1][1]] < group_gap:
            groups[-1] = (groups[-1][0], e)
        else:
            groups.append((s, e))
    marks = [0.5 * (grid[s] + grid[e]) for s, e in groups]
    flags = [False] * len(marks)

    if n_expected is not None:
        if len(marks) > n_expected:
            # keep the widest stop groups, widest first, then restore order
            extents = [grid[e] - grid[s] for s, e in groups]
            keep = sorted(np.argsort(extents)[::-1][:n_expected])
            marks = [marks[i] for i in keep]
            flags = [False] * len(marks)
        while len(marks) < n_expected:
            cand = _deepest_free_minimum(grid, values, np.asarray(marks), group_gap)
            if cand is None:
                raise ValueError(
                    f"found only {len(marks)} landmarks, cannot reach {n_expected}"
                )
            marks.append(cand)
            flags.append(True)
            order = np.argsort(marks)
            marks = [marks[i] for i in order]
            flags = [flags[i] for i in order]

    positions = np.asarray(sorted(marks), dtype=float)
    if with_flags:
        order = np.argsort(marks)
        return positions, np.asarray(flags, dtype=bool)[order]
    return positions


def _deepest_free_minimum(grid, values, taken, group_gap):
    n = len(values)
    best = None
    best_val = np.inf
    for i in range(1, n - 1):
        if values[i] < values[i - 1] and values[i] <= values[i + 1]:
            if taken.size and np.min(np.abs(grid[i] - taken)) < group_gap:
                continue
            if values[i] < best_val:
                best_val = values[i]
                best = float(grid[i])
    return best


def reference_landmarks(landmark_rows) -> np.ndarray:
    """Component-wise mean landmark configuration across curves."""
    rows = as_float_2d(landmark_rows, "landmark_rows")
    for i in range(rows.shape[0]):
        check_strictly_increasing(rows[i], f"landmark_rows[{i}]")
    ref = rows.mean(axis=0)
    check_strictly_increasing(ref, "mean landmarks")
    return ref


def build_warping(
    curve_landmarks,
    ref_landmarks,
    domain,
    *,
    window: float = DEFAULT_WINDOW,
    min_secant: float = DEFAULT_MIN_SECANT,
) -> WarpingFunction:
    """Monotone warping h with h(ref landmark j) = curve landmark j.

    Around each landmark, h has slope one over a window of width
    ``window`` (shrunk globally as needed); connecting segments are cubic
    Hermite pieces whose secants are kept at least ``min_secant`` so the
    Fritsch-Carlson box guarantees monotonicity.  ``domain`` is the common
    position interval, given as (lo, hi) or as a scalar upper end with
    lo = 0.
    """
    x = as_float_1d(curve_landmarks, "curve_landmarks")
    u = as_float_1d(ref_landmarks, "ref_landmarks")
    check_same_length(curve_landmarks=x, ref_landmarks=u)
    if np.ndim(domain) == 0:
        lo, hi = 0.0, float(domain)
    else:
        lo, hi = (float(d) for d in domain)
    if not hi > lo:
        raise ValueError("domain must have positive length")
    if not 0.0 < min_secant < 1.0:
        raise ValueError("min_secant must lie in (0, 1)")
    if window < 0:
        raise ValueError("window must be non-negative")

    if len(u) == 0:
        nodes = np.array([lo, hi])
        return WarpingFunction(
            nodes=nodes,
            values=nodes.copy(),
            slopes=np.ones(2),
            window=0.0,
            degraded=False,
            landmarks_ref=u,
            landmarks_curve=x,
        )

    check_strictly_increasing(u, "ref_landmarks")
    check_strictly_increasing(x, "curve_landmarks")
    for arr, name in ((u, "ref_landmarks"), (x, "curve_landmarks")):
        if arr[0] <= lo or arr[-1] >= hi:
            raise ValueError(f"{name} must lie strictly inside the domain")

    s = min_secant
    caps = [float(window)]
    # windows must stay disjoint and inside the domain, on both axes
    for g in np.diff(u):
        caps.append(0.999 * g)
    for g in np.diff(x):
        caps.append(0.999 * g)
    caps.extend(1.999 * np.array([u[0] - lo, hi - u[-1], x[0] - lo, hi - x[-1]]))
    # interior connecting segments: secant (Gi - w)/(Gr - w) >= s
    for gr, gi in zip(np.diff(u), np.diff(x)):
        caps.append((gi - s * gr) / (1.0 - s))
    # end segments lose half a window only
    caps.append(2.0 * ((x[0] - lo) - s * (u[0] - lo)) / (1.0 - s))
    caps.append(2.0 * ((hi - x[-1]) - s * (hi - u[-1])) / (1.0 - s))

    w = min(caps)
    if w <= 0.0:
        return _fallback_warping(x, u, lo, hi)

    half = w / 2.0
    nodes = [lo]
    values = [lo]
    for uj, xj in zip(u, x):
        nodes.extend([uj - half, uj, uj + half])
        values.extend([xj - half, xj, xj + half])
    nodes.append(hi)
    values.append(hi)
    nodes = np.asarray(nodes)
    values = np.asarray(values)
    slopes = np.ones(len(nodes))
    slopes[0] = (values[1] - values[0]) / (nodes[1] - nodes[0])
    slopes[-1] = (values[-1] - values[-2]) / (nodes[-1] - nodes[-2])
    return WarpingFunction(
        nodes=nodes,
        values=values,
        slopes=slopes,
        window=float(w),
        degraded=False,
        landmarks_ref=u,
        landmarks_curve=x,
    )


def _fc_slopes(nodes: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Monotone tangents by the weighted-harmonic-mean rule."""
    h = np.diff(nodes)
    delta = np.diff(values) / h
    m = np.zeros(len(nodes))
    m[0] = delta[0]
    m[-1] = delta[-1]
    for k in range(1, len(nodes) - 1):
        if delta[k - 1] * delta[k] <= 0:
            m[k] = 0.0
        else:
            w1 = 2.0 * h[k] + h[k - 1]
            w2 = h[k] + 2.0 * h[k - 1]
            m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k])
    return m


def _fallback_warping(x, u, lo, hi) -> WarpingFunction:
    nodes = np.concatenate([[lo], u, [hi]])
    values = np.concatenate([[lo], x, [hi]])
    return WarpingFunction(
        nodes=nodes,
        values=values,
        slopes=_fc_slopes(nodes, values),
        window=0.0,
        degraded=True,
        landmarks_ref=u,
        landmarks_curve=x,
    )


def apply_warp(grid, values, warp: WarpingFunction, out_grid=None):
    """Registered curve f(h(x)) on ``out_grid`` (default: ``grid`` itself).

    ``grid``/``values`` sample the unregistered curve against curve
    positions; the result samples the registered curve against reference
    positions, so the curve's feature at h(x0) lands at x0.
    """
    grid = as_float_1d(grid, "grid")
    values = as_float_1d(values, "values")
    check_same_length(grid=grid, values=values)
    check_strictly_increasing(grid, "grid")
    out = grid if out_grid is None else as_float_1d(out_grid, "out_grid")
    positions = warp(out)
    return np.interp(positions, grid, values)


def apply_inverse_warp(grid, values, warp: WarpingFunction, out_grid=None):
    """Unregistered view g(h^-1(x)) of a reference-domain curve g."""
    grid = as_float_1d(grid, "grid")
    values = as_float_1d(values, "values")
    check_same_length(grid=grid, values=values)
    check_strictly_increasing(grid, "grid")
    out = grid if out_grid is None else as_float_1d(out_grid, "out_grid")
    positions = warp.invert(out)
    return np.interp(positions, grid, values)


def cross_sectional_mean(curves) -> np.ndarray:
    """Pointwise mean of curves sampled on a common grid."""
    rows = as_float_2d(curves, "curves")
    return rows.mean(axis=0)


class LandmarkRegistration(BaseEstimator, TransformerMixin):
    """Landmark-register a family of speed curves on a common grid.

    ``fit`` extracts per-curve landmarks, forms the mean reference and the
    per-curve warpings; ``transform`` evaluates each curve at its warped
    positions, returning curves aligned on the reference axis.  Fitted
    attributes: ``landmarks_`` (n_curves, n_landmarks), ``reference_``,
    ``warps_``, ``grid_``, ``registered_``, ``mean_``.
    """

    def __init__(
        self,
        eps_stop: float = DEFAULT_EPS_STOP,
        n_landmarks: int | None = None,
        group_gap: float = DEFAULT_GROUP_GAP,
        window: float = DEFAULT_WINDOW,
        min_secant: float = DEFAULT_MIN_SECANT,
    ):
        self.eps_stop = eps_stop
        self.n_landmarks = n_landmarks
        self.group_gap = group_gap
        self.window = window
        self.min_secant = min_secant

    def fit(self, X, grid=None, y=None):
        if grid is None:
            raise ValueError("fit requires the common position grid")
        X = as_float_2d(X, "X")
        grid = as_float_1d(grid, "grid")
        check_strictly_increasing(grid, "grid")
        if X.shape[1] != len(grid):
            raise ValueError("curves and grid must share their length")

        if self.n_landmarks is not None:
            target = int(self.n_landmarks)
        else:
            counts = [
                len(
                    extract_landmarks(
                        grid, row, eps_stop=self.eps_stop, group_gap=self.group_gap
                    )
                )
                for row in X
            ]
            target = max(counts)

        rows = []
        filled = []
        for row in X:
            marks, flags = extract_landmarks(
                grid,
                row,
                eps_stop=self.eps_stop,
                n_expected=target,
                group_gap=self.group_gap,
                with_flags=True,
            )
            rows.append(marks)
            filled.append(flags)
        self.landmarks_ = np.asarray(rows)
        self.filled_ = np.asarray(filled)
        if target > 0:
            self.reference_ = reference_landmarks(self.landmarks_)
        else:
            self.reference_ = np.empty(0)
        domain = (float(grid[0]), float(grid[-1]))
        self.warps_ = [
            build_warping(
                row,
                self.reference_,
                domain,
                window=self.window,
                min_secant=self.min_secant,
            )
            for row in self.landmarks_
        ]
        self.grid_ = grid
        self.registered_ = self.transform(X)
        self.mean_ = cross_sectional_mean(self.registered_)
        return self

    def transform(self, X):
        if not hasattr(self, "warps_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("this LandmarkRegistration is not fitted yet")
        X = as_float_2d(X, "X")
        if X.shape[0] != len(self.warps_):
            raise ValueError("transform needs one curve per fitted warping")
        return np.vstack(
            [apply_warp(self.grid_, row, warp) for row, warp in zip(X, self.warps_)]
        )

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, **fit_params).transform(X)
