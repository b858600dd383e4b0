"""Speed-vs-position profiles from monotone position curves.

A monotone position curve F(t) with derivative F'(t) induces a speed
profile over distance,

    v(x) = F'(F^-(x)),

where F^- is the generalized inverse; plateaus of F (stops) map to isolated
points of the x-domain where the profile touches zero.  This module builds
profiles from any source curve exposing ``value``/``derivative``/``domain``
(analytic curves and monotone fits alike), provides the generalized inverse
with controlled plateau-edge behaviour, a finite-difference diagnostic for
cusps of the composite, and the two-step estimator that chains variance
estimation, spline smoothing, monotone projection, and composition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_float_1d
from .monotone import MonotoneFit, fit_monotone
from .smoothing import (
    ObservationSet,
    SplineFit,
    VarianceEstimates,
    estimate_variances,
    evaluate,
    fit_spline,
    floored_variances,
    select_lambda_joint,
)

__all__ = [
    "AnalyticCurve",
    "CuspDiagnostic",
    "PipelineStageError",
    "SpeedProfile",
    "SpeedProfilePipeline",
    "compose_speed_profile",
    "cusp_diagnostic",
    "generalized_inverse",
    "two_step_estimate",
]

DEFAULT_TABLE_SIZE = 4096
DEFAULT_TRIM = 0.1
DEFAULT_EPS_STOP = 0.1


@dataclass(frozen=True, eq=False)
class AnalyticCurve:
    """A closed-form curve exposing the source-curve protocol."""

    f: Callable
    fprime: Callable
    domain: tuple[float, float]
    name: str = ""

    def value(self, t):
        return np.asarray(self.f(np.asarray(t, dtype=float)), dtype=float)

    def derivative(self, t):
        return np.asarray(self.fprime(np.asarray(t, dtype=float)), dtype=float)


def _seed_table(curve, n_seed: int):
    a, b = curve.domain
    t_seed = np.linspace(a, b, n_seed + 1)
    f_seed = np.asarray(curve.value(t_seed), dtype=float)
    # enforce the nondecreasing invariant against roundoff wiggle
    f_seed = np.maximum.accumulate(f_seed)
    return t_seed, f_seed


def _inverse_bisect(curve, x, t_seed, f_seed, side: str, max_iter: int, tol: float | None = None):
    a, b = float(t_seed[0]), float(t_seed[-1])
    fa, fb = float(f_seed[0]), float(f_seed[-1])
    span = b - a
    width_target = 1e-15 * span if tol is None else float(tol)
    range_tol = 1e-7 * max(fb - fa, 1e-300)
    xx = np.asarray(x, dtype=float)
    if np.any(xx < fa - range_tol) or np.any(xx > fb + range_tol):
        raise ValueError(f"inverse argument outside the curve range [{fa}, {fb}]")
    xq = np.clip(np.atleast_1d(xx), fa, fb)

    m = len(t_seed) - 1
    k = np.searchsorted(f_seed, xq, side="left" if side == "left" else "right")
    lo = t_seed[np.maximum(k - 1, 0)]
    hi = t_seed[np.minimum(k, m)]
    past_top = k > m
    lo = np.where(past_top, b, lo)
    hi = np.where(past_top, b, hi)

    for _ in range(max_iter):
        if np.max(hi - lo) <= width_target:
            break
        mid = 0.5 * (lo + hi)
        fm = np.asarray(curve.value(mid), dtype=float)
        pred = fm >= xq if side == "left" else fm > xq
        hi = np.where(pred, mid, hi)
        lo = np.where(pred, lo, mid)
    out = hi
    return float(out[0]) if xx.ndim == 0 else out


class _CallableCurve:
    """Adapter giving a plain callable the source-curve protocol."""

    def __init__(self, f, domain):
        self.f = f
        self.domain = (float(domain[0]), float(domain[1]))

    def value(self, t):
        return np.asarray(self.f(np.asarray(t, dtype=float)), dtype=float)


def generalized_inverse(
    curve,
    x,
    *,
    side: str = "left",
    domain=None,
    tol: float | None = None,
    n_seed: int = DEFAULT_TABLE_SIZE,
    max_iter: int = 64,
):
    """Invert a nondecreasing curve, resolving plateaus to a chosen edge.

    ``side="left"`` returns inf{t : F(t) >= x} (the left edge of a plateau
    at level x), ``side="right"`` returns inf{t : F(t) > x} (the right
    edge).  A coarse monotone lookup table brackets the crossing and
    bisection refines it, preserving F(lo) < x <= F(hi) throughout, until
    the bracket is narrower than ``tol`` (default: machine-level relative
    to the domain span).  ``curve`` is either a source-curve object or a
    plain callable together with an explicit ``domain``.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if not hasattr(curve, "value"):
        if domain is None:
            raise ValueError("a plain callable needs an explicit domain=(a, b)")
        curve = _CallableCurve(curve, domain)
    t_seed, f_seed = _seed_table(curve, n_seed)
    return _inverse_bisect(curve, x, t_seed, f_seed, side, max_iter, tol=tol)


@dataclass(frozen=True, eq=False)
class SpeedProfile:
    """Speed as a function of travelled distance, v(x) = F'(F^-(x)).

    Evaluation clamps x into the profile window [x_lo, x_hi] and clips the
    result at zero (a monotone source can still carry derivative roundoff).
    ``stop_intervals`` lists maximal x-ranges where the profile stays below
    ``eps_stop``.
    """

    source: Any
    x_lo: float
    x_hi: float
    eps_stop: float = DEFAULT_EPS_STOP
    stop_intervals: tuple = ()
    n_table: int = DEFAULT_TABLE_SIZE
    provenance: dict = field(default_factory=dict, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def domain(self) -> tuple[float, float]:
        return self.x_lo, self.x_hi

    @property
    def stop_points(self) -> tuple[float, ...]:
        """Midpoints of the stop intervals (the detected zero-speed set)."""
        return tuple(0.5 * (lo + hi) for lo, hi in self.stop_intervals)

    def _table(self):
        if "table" not in self._cache:
            self._cache["table"] = _seed_table(self.source, self.n_table)
        return self._cache["table"]

    def position_to_time(self, x, *, side: str = "left"):
        """Generalized-inverse times of positions x."""
        t_seed, f_seed = self._table()
        return _inverse_bisect(self.source, x, t_seed, f_seed, side, 64)

    def __call__(self, x):
        xx = np.asarray(x, dtype=float)
        xc = np.clip(np.atleast_1d(xx), self.x_lo, self.x_hi)
        tau = self.position_to_time(xc)
        v = np.asarray(self.source.derivative(np.atleast_1d(tau)), dtype=float)
        v = np.clip(v, 0.0, None)
        return float(v[0]) if xx.ndim == 0 else v

    def sample(self, n: int = 512):
        """n evenly spaced (x, v) samples across the window."""
        x = np.linspace(self.x_lo, self.x_hi, n)
        return x, self(x)

    def on_grid(self, step: float = 1.0):
        """(x, v) on a fixed-step grid anchored at x_lo."""
        if step <= 0:
            raise ValueError("step must be positive")
        count = int(np.floor((self.x_hi - self.x_lo) / step + 1e-12)) + 1
        x = self.x_lo + step * np.arange(count)
        return x, self(x)


def _stop_intervals(x: np.ndarray, v: np.ndarray, eps_stop: float) -> tuple:
    below = (v < eps_stop).astype(int)
    starts = np.flatnonzero(np.diff(np.r_[0, below]) == 1)
    ends = np.flatnonzero(np.diff(np.r_[below, 0]) == -1)
    return tuple((float(x[s]), float(x[e])) for s, e in zip(starts, ends))


def compose_speed_profile(
    source,
    *,
    trim: float = DEFAULT_TRIM,
    eps_stop: float = DEFAULT_EPS_STOP,
    n_table: int = DEFAULT_TABLE_SIZE,
) -> SpeedProfile:
    """Build the distance-domain speed profile of a monotone source curve.

    The x-window keeps the central (1 - 2*trim) fraction of the travelled
    range, discarding the boundary zones where an estimated source curve is
    least reliable.
    """
    if not 0.0 <= trim < 0.5:
        raise ValueError("trim must lie in [0, 0.5)")
    if eps_stop <= 0:
        raise ValueError("eps_stop must be positive")
    a, b = source.domain
    fa = float(np.asarray(source.value(np.asarray(a, dtype=float)), dtype=float))
    fb = float(np.asarray(source.value(np.asarray(b, dtype=float)), dtype=float))
    if not fb > fa:
        raise ValueError("source curve must be increasing over its domain")
    rng = fb - fa
    x_lo = fa + trim * rng
    x_hi = fb - trim * rng
    profile = SpeedProfile(
        source=source,
        x_lo=float(x_lo),
        x_hi=float(x_hi),
        eps_stop=float(eps_stop),
        n_table=n_table,
    )
    x, v = profile.sample(n_table + 1)
    stops = _stop_intervals(x, v, eps_stop)
    return SpeedProfile(
        source=source,
        x_lo=float(x_lo),
        x_hi=float(x_hi),
        eps_stop=float(eps_stop),
        stop_intervals=stops,
        n_table=n_table,
        _cache=profile._cache,
    )


@dataclass(frozen=True, eq=False)
class CuspDiagnostic:
    """One-sided secant probe of a speed profile at a suspected cusp.

    For each probe angle theta the offset is h = F(t0 + theta) - F(t0); a
    vertical half-tangent at x0 makes the secant slopes
    (v(x0 + h) - v(x0)) / h grow like 3/theta, so the ratios approach one.
    ``hypothesis_met`` records the one-sided finite-difference check that
    the source curve is flat (F' = 0) with nonvanishing third derivative at
    t0, the regime in which the 3/theta reference applies.
    """

    x0: float
    t0: float
    thetas: np.ndarray
    offsets: np.ndarray
    base_value: float
    values: np.ndarray
    secant_slopes: np.ndarray
    reference_slopes: np.ndarray
    ratios: np.ndarray
    fprime_at_t0: float
    fthird_at_t0: float
    hypothesis_met: bool


def cusp_diagnostic(
    profile: SpeedProfile,
    x0: float,
    thetas,
    *,
    delta: float = 1e-3,
    slope_tol: float = 1e-3,
    third_tol: float = 1e-3,
) -> CuspDiagnostic:
    """Probe a profile to the right of a zero-speed point x0.

    ``t0`` is the right edge of the source plateau at level x0; offsets are
    images of time steps theta under the source curve, so the diagnostic
    works on analytic and estimated profiles alike.
    """
    thetas = as_float_1d(thetas, "thetas")
    if np.any(thetas <= 0):
        raise ValueError("thetas must be positive")
    source = profile.source
    t0 = float(profile.position_to_time(x0, side="right"))

    def f_at(t):
        return float(np.asarray(source.value(np.asarray(t, dtype=float)), dtype=float))

    b = float(source.domain[1])
    f0 = f_at(t0)
    room = b - t0
    if room > 0:
        d = min(delta, room / 3.0)
        fprime = (f_at(t0 + d) - f0) / d
        fthird = (f_at(t0 + 3 * d) - 3 * f_at(t0 + 2 * d) + 3 * f_at(t0 + d) - f0) / d**3
        hypothesis_met = abs(fprime) <= slope_tol and abs(fthird) > third_tol
    else:
        fprime = float("nan")
        fthird = float("nan")
        hypothesis_met = False

    if np.any(t0 + thetas > b + 1e-12 * (b - source.domain[0])):
        raise ValueError("probe angles run past the source domain")
    offsets = np.asarray(source.value(t0 + thetas), dtype=float) - f0
    if np.any(offsets <= 0):
        raise ValueError("offsets must be positive; the curve does not rise after t0")
    base = float(profile(x0))
    values = np.atleast_1d(np.asarray(profile(x0 + offsets), dtype=float))
    secant = (values - base) / offsets
    reference = 3.0 / thetas
    return CuspDiagnostic(
        x0=float(x0),
        t0=t0,
        thetas=thetas,
        offsets=offsets,
        base_value=base,
        values=values,
        secant_slopes=secant,
        reference_slopes=reference,
        ratios=secant / reference,
        fprime_at_t0=fprime,
        fthird_at_t0=fthird,
        hypothesis_met=hypothesis_met,
    )


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names the culprit."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


def _run_stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(stage, str(exc)) from exc


def two_step_estimate(
    data: ObservationSet,
    *,
    order: int = 3,
    criterion: str = "gml",
    lam: float | None = None,
    variances: tuple[float, float] | None = None,
    lam_mono: float = 1e-4,
    n_interior: int | None = None,
    mono_max_iter: int = 200,
    trim: float = DEFAULT_TRIM,
    eps_stop: float = DEFAULT_EPS_STOP,
) -> SpeedProfile:
    """Estimate a speed profile from noisy position/speed observations.

    Stage 1 smooths both channels jointly with a derivative-matched spline
    (noise variances and the penalty weight chosen by ``criterion`` unless
    given); stage 2 projects the smooth onto the monotone class and composes
    the distance-domain profile.  Failures carry the stage name via
    :class:`PipelineStageError`.  The returned profile's ``provenance`` maps
    stage names to the fitted intermediate objects.
    """
    if variances is None:
        est = _run_stage("variance", estimate_variances, data, order=order, criterion=criterion)
        var_pair = floored_variances(est)
    else:
        est = None
        sx2, sv2 = variances
        if sx2 <= 0 or sv2 <= 0:
            raise PipelineStageError("variance", "supplied variances must be positive")
        var_pair = (float(sx2), float(sv2))

    if lam is None:
        lam_use = _run_stage(
            "lambda",
            select_lambda_joint,
            data,
            order=order,
            criterion=criterion,
            variances=var_pair,
        )
    else:
        lam_use = float(lam)

    spline = _run_stage("spline", fit_spline, data, order=order, lam=lam_use, variances=var_pair)

    targets = evaluate(spline, spline.times)
    mono = _run_stage(
        "monotone",
        fit_monotone,
        spline.times,
        targets,
        lam=lam_mono,
        n_interior=n_interior,
        max_iter=mono_max_iter,
    )

    profile = _run_stage("profile", compose_speed_profile, mono, trim=trim, eps_stop=eps_stop)
    profile.provenance.update(
        {
            "variances": est,
            "lambda": lam_use,
            "spline": spline,
            "monotone": mono,
        }
    )
    return profile


class SpeedProfilePipeline(BaseEstimator):
    """Two-step speed-profile estimator with inspectable stages.

    After ``fit`` the intermediate results are available as ``variances_``
    (may be None when supplied), ``lambda_``, ``spline_``, ``monotone_``
    and ``profile_``; ``predict`` evaluates the composed profile.
    """

    def __init__(
        self,
        order: int = 3,
        criterion: str = "gml",
        lam: float | None = None,
        variances: tuple[float, float] | None = None,
        lam_mono: float = 1e-4,
        n_interior: int | None = None,
        mono_max_iter: int = 200,
        trim: float = DEFAULT_TRIM,
        eps_stop: float = DEFAULT_EPS_STOP,
    ):
        self.order = order
        self.criterion = criterion
        self.lam = lam
        self.variances = variances
        self.lam_mono = lam_mono
        self.n_interior = n_interior
        self.mono_max_iter = mono_max_iter
        self.trim = trim
        self.eps_stop = eps_stop

    def fit(self, data: ObservationSet, y=None):
        profile = two_step_estimate(
            data,
            order=self.order,
            criterion=self.criterion,
            lam=self.lam,
            variances=self.variances,
            lam_mono=self.lam_mono,
            n_interior=self.n_interior,
            mono_max_iter=self.mono_max_iter,
            trim=self.trim,
            eps_stop=self.eps_stop,
        )
        self.variances_: VarianceEstimates | None = profile.provenance["variances"]
        self.lambda_: float = profile.provenance["lambda"]
        self.spline_: SplineFit = profile.provenance["spline"]
        self.monotone_: MonotoneFit = profile.provenance["monotone"]
        self.profile_: SpeedProfile = profile
        return self

    def predict(self, x):
        if not hasattr(self, "profile_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("this SpeedProfilePipeline is not fitted yet")
        return self.profile_(x)
