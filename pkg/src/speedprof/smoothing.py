"""Spline smoothing of position traces with derivative (speed) observations.

A vehicle pass is modelled as a smooth, increasing distance function F(t)
observed twice per sampling instant: a noisy position y_i = F(t_i) + e_i and
a noisy speed v_i = F'(t_i) + e'_i.  Both channels are smoothed jointly with
a polynomial smoothing spline of order ``m`` (quintic for the default m=3),
penalising the integrated squared m-th derivative.  The minimiser over the
Sobolev space W^m lives in a finite span built from the radial semi-kernel

    E_m(s, t) = theta_m * |s - t|^(2m-1),
    theta_m   = Gamma(1/2 - m) / (2^(2m) * pi^(1/2) * (m-1)!),

its first partial derivative (one term per speed observation), and the
monomials 1, t, ..., t^(m-1) spanning the penalty null space.  See Wahba,
"Spline Models for Observational Data" (1990), chapters 1-4, for the general
theory of smoothing with linear functionals.

Coefficients solve the bordered system

    (K + n * lam * W^-1) c + T d = y,     T^T c = 0,

where K applies the observation functionals to both arguments of E_m, T
applies them to the monomials, and W holds the inverse error variances.
Smoothing parameters are selected by generalized cross validation (GCV) or
generalized maximum likelihood (GML) scores computed from the influence
matrix A(lam); error variances are estimated from single-channel smooths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from sklearn.base import BaseEstimator

from ._validation import (
    as_float_1d,
    check_positive,
    check_same_length,
    check_strictly_increasing,
)

__all__ = [
    "ObservationSet",
    "SplineFit",
    "VarianceEstimates",
    "ConditionWarning",
    "semi_kernel",
    "semi_kernel_partial_s",
    "semi_kernel_partial_t",
    "semi_kernel_partial_st",
    "fit_spline",
    "fit_scalar_spline",
    "evaluate",
    "evaluate_derivative",
    "hat_matrix",
    "gcv_score",
    "gml_score",
    "select_lambda",
    "select_lambda_joint",
    "estimate_variances",
    "fill_missing_channel",
    "merge_channels",
    "DerivativeSplineSmoother",
]

LAMBDA_GRID_BOUNDS = (1e-8, 1e4)
LAMBDA_GRID_SIZE = 61
CONDITION_WARN_THRESHOLD = 1e12


class ConditionWarning(UserWarning):
    """Raised when the bordered system is close to numerically singular."""


# ---------------------------------------------------------------------------
# semi-kernel family
# ---------------------------------------------------------------------------


def _check_order(order: int) -> int:
    if int(order) != order or order < 2:
        raise ValueError(f"spline order must be an integer >= 2, got {order}")
    return int(order)


def _theta(order: int) -> float:
    order = _check_order(order)
    return math.gamma(0.5 - order) / (
        2 ** (2 * order) * math.sqrt(math.pi) * math.factorial(order - 1)
    )


def _abs_power_derivative(r, power: int, k: int):
    """k-th derivative of |r|^power for odd integer power, valid a.e."""
    coeff = 1.0
    for j in range(k):
        coeff *= power - j
    r = np.asarray(r, dtype=float)
    mag = np.abs(r) ** (power - k)
    if k % 2 == 1:
        return coeff * mag * np.sign(r)
    return coeff * mag


def semi_kernel(s, t, order: int = 3):
    """Radial semi-kernel E_m(s, t) of the order-m polynomial spline.

    Parameters
    ----------
    s, t : array_like
        Kernel arguments, broadcast against each other.
    order : int
        Spline order m >= 2 (m=3 gives the quintic smoothing spline).
    """
    theta = _theta(order)
    r = np.asarray(s, dtype=float) - np.asarray(t, dtype=float)
    return theta * np.abs(r) ** (2 * order - 1)


def semi_kernel_partial_s(s, t, order: int = 3):
    """First partial derivative of the semi-kernel in its first argument."""
    theta = _theta(order)
    r = np.asarray(s, dtype=float) - np.asarray(t, dtype=float)
    return theta * _abs_power_derivative(r, 2 * order - 1, 1)


def semi_kernel_partial_t(s, t, order: int = 3):
    """First partial derivative of the semi-kernel in its second argument."""
    return -semi_kernel_partial_s(s, t, order)


def semi_kernel_partial_st(s, t, order: int = 3):
    """Mixed second partial derivative of the semi-kernel."""
    theta = _theta(order)
    r = np.asarray(s, dtype=float) - np.asarray(t, dtype=float)
    return -theta * _abs_power_derivative(r, 2 * order - 1, 2)


# ---------------------------------------------------------------------------
# observation container and channel alignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationSet:
    """One pass of a vehicle: aligned sampling instants, positions and speeds.

    ``position_var_scale`` and ``speed_var_scale`` multiply the per-row error
    variances; rows filled by interpolation carry a scale of 2.
    """

    times: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    position_var_scale: np.ndarray | None = None
    speed_var_scale: np.ndarray | None = None

    def __post_init__(self):
        times = as_float_1d(self.times, "times")
        positions = as_float_1d(self.positions, "positions")
        speeds = as_float_1d(self.speeds, "speeds")
        check_same_length(times=times, positions=positions, speeds=speeds)
        if len(times) < 2:
            raise ValueError("an observation set needs at least two samples")
        check_strictly_increasing(times, "times")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "speeds", speeds)
        for name in ("position_var_scale", "speed_var_scale"):
            scale = getattr(self, name)
            if scale is not None:
                scale = as_float_1d(scale, name)
                check_same_length(times=times, **{name: scale})
                if np.any(scale <= 0):
                    raise ValueError(f"{name} entries must be positive")
                object.__setattr__(self, name, scale)

    @property
    def n(self) -> int:
        return len(self.times)

    def var_scales(self) -> tuple[np.ndarray, np.ndarray]:
        ones = np.ones(self.n)
        pos = ones if self.position_var_scale is None else self.position_var_scale
        spd = ones if self.speed_var_scale is None else self.speed_var_scale
        return pos, spd


def fill_missing_channel(times, positions, speeds) -> ObservationSet:
    """Build an ObservationSet from channels with missing (NaN) entries.

    Missing values in either channel are filled by linear interpolation from
    the surviving entries of the same channel; filled rows get their error
    variance inflated by a factor of 2.
    """
    times = as_float_1d(times, "times")
    positions = as_float_1d(positions, "positions", allow_nan=True)
    speeds = as_float_1d(speeds, "speeds", allow_nan=True)
    check_same_length(times=times, positions=positions, speeds=speeds)

    def _fill(values, channel):
        mask = np.isfinite(values)
        if mask.all():
            return values, np.ones(len(values))
        if mask.sum() < 2:
            raise ValueError(f"{channel} channel has fewer than two usable samples")
        filled = values.copy()
        filled[~mask] = np.interp(times[~mask], times[mask], values[mask])
        scale = np.where(mask, 1.0, 2.0)
        return filled, scale

    pos, pos_scale = _fill(positions, "position")
    spd, spd_scale = _fill(speeds, "speed")
    return ObservationSet(times, pos, spd, pos_scale, spd_scale)


def merge_channels(times_pos, positions, times_speed, speeds) -> ObservationSet:
    """Align position and speed channels recorded on different clocks.

    The sparser channel is linearly interpolated onto the denser channel's
    sampling instants; interpolated rows inherit an inflated (x2) variance.
    """
    times_pos = as_float_1d(times_pos, "times_pos")
    positions = as_float_1d(positions, "positions")
    times_speed = as_float_1d(times_speed, "times_speed")
    speeds = as_float_1d(speeds, "speeds")
    check_same_length(times_pos=times_pos, positions=positions)
    check_same_length(times_speed=times_speed, speeds=speeds)
    check_strictly_increasing(times_pos, "times_pos")
    check_strictly_increasing(times_speed, "times_speed")

    if len(times_pos) >= len(times_speed):
        base_times = times_pos
        base_pos, pos_scale = positions, np.ones(len(times_pos))
        spd = np.interp(base_times, times_speed, speeds)
        exact = np.isclose(base_times[:, None], times_speed[None, :], atol=1e-9).any(axis=1)
        spd_scale = np.where(exact, 1.0, 2.0)
    else:
        base_times = times_speed
        spd, spd_scale = speeds, np.ones(len(times_speed))
        base_pos = np.interp(base_times, times_pos, positions)
        exact = np.isclose(base_times[:, None], times_pos[None, :], atol=1e-9).any(axis=1)
        pos_scale = np.where(exact, 1.0, 2.0)
    return ObservationSet(base_times, base_pos, spd, pos_scale, spd_scale)


# ---------------------------------------------------------------------------
# system assembly
# ---------------------------------------------------------------------------


def _monomial_matrix(times: np.ndarray, order: int, with_derivatives: bool) -> np.ndarray:
    n = len(times)
    powers = np.arange(order)
    top = times[:, None] ** powers[None, :]
    if not with_derivatives:
        return top
    bottom = np.zeros((n, order))
    if order > 1:
        bottom[:, 1:] = powers[1:][None, :] * times[:, None] ** (powers[1:] - 1)[None, :]
    return np.vstack([top, bottom])


def _kernel_matrix(times: np.ndarray, order: int, with_derivatives: bool) -> np.ndarray:
    s = times[:, None]
    t = times[None, :]
    k00 = semi_kernel(s, t, order)
    if not with_derivatives:
        return k00
    k01 = semi_kernel_partial_t(s, t, order)
    k10 = semi_kernel_partial_s(s, t, order)
    k11 = semi_kernel_partial_st(s, t, order)
    return np.block([[k00, k01], [k10, k11]])


@dataclass(frozen=True)
class SplineFit:
    """Fitted spline coefficients for one pass.

    The fitted function is

        F(t) = sum_nu d_nu (t - t_ref)^(nu-1)
             + sum_i c_i E_m(t_i, t)
             + sum_i c'_i dE_m/ds(t_i, t)

    where the third sum is present only when speeds entered the fit.
    """

    order: int
    times: np.ndarray
    t_ref: float
    coef_poly: np.ndarray
    coef_kernel: np.ndarray
    coef_kernel_deriv: np.ndarray | None
    lam: float
    variances: tuple[float, float] | None
    condition: float

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


def _solve_bordered(K, T, winv_diag, n_factor, lam, y):
    nobs = K.shape[0]
    m = T.shape[1]
    top = K + np.diag(n_factor * lam * winv_diag)
    M = np.zeros((nobs + m, nobs + m))
    M[:nobs, :nobs] = top
    M[:nobs, nobs:] = T
    M[nobs:, :nobs] = T.T
    rhs = np.concatenate([y, np.zeros(m)])
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > CONDITION_WARN_THRESHOLD:
        warnings.warn(
            f"bordered smoothing system is ill conditioned (cond ~ {cond:.3g})",
            ConditionWarning,
        )
    try:
        sol = sla.solve(M, rhs, assume_a="sym")
    except sla.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"bordered smoothing system is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("bordered smoothing system produced non-finite coefficients")
    c = sol[:nobs]
    d = sol[nobs:]
    # the side constraint must hold for the penalty identity to be valid
    gap = float(np.max(np.abs(T.T @ c)))
    scale = float(np.max(np.abs(c))) + 1.0
    if gap > 1e-6 * scale:
        raise np.linalg.LinAlgError(f"side constraint violated by {gap:.3g}; system is degenerate")
    return c, d, cond


def fit_spline(
    data: ObservationSet,
    *,
    order: int = 3,
    lam: float,
    variances: tuple[float, float] = (1.0, 1.0),
) -> SplineFit:
    """Fit the derivative-informed smoothing spline at a fixed lambda.

    Parameters
    ----------
    data : ObservationSet
        Aligned times, positions and speeds.
    order : int
        Spline order m (penalty on the m-th derivative).
    lam : float
        Smoothing parameter, must be positive.
    variances : (float, float)
        Error variances (sigma_x^2, sigma_v^2) of the two channels.
    """
    order = _check_order(order)
    lam = check_positive(lam, "lam")
    sx2, sv2 = (check_positive(v, "variance") for v in variances)
    if data.n < order:
        raise ValueError(f"need at least {order} samples for an order-{order} fit")

    t_ref = float(data.times[0])
    times = data.times - t_ref
    K = _kernel_matrix(times, order, with_derivatives=True)
    T = _monomial_matrix(times, order, with_derivatives=True)
    pos_scale, spd_scale = data.var_scales()
    winv = np.concatenate([sx2 * pos_scale, sv2 * spd_scale])
    y = np.concatenate([data.positions, data.speeds])
    c_all, d, cond = _solve_bordered(K, T, winv, data.n, lam, y)
    n = data.n
    return SplineFit(
        order=order,
        times=data.times.copy(),
        t_ref=t_ref,
        coef_poly=d,
        coef_kernel=c_all[:n],
        coef_kernel_deriv=c_all[n:],
        lam=lam,
        variances=(float(sx2), float(sv2)),
        condition=float(cond),
    )


def fit_scalar_spline(times, values, *, order: int = 3, lam: float) -> SplineFit:
    """Smooth a single channel (positions alone, or speeds alone)."""
    order = _check_order(order)
    lam = check_positive(lam, "lam")
    times = as_float_1d(times, "times")
    values = as_float_1d(values, "values")
    check_same_length(times=times, values=values)
    check_strictly_increasing(times, "times")
    if len(times) < order:
        raise ValueError(f"need at least {order} samples for an order-{order} fit")

    t_ref = float(times[0])
    shifted = times - t_ref
    K = _kernel_matrix(shifted, order, with_derivatives=False)
    T = _monomial_matrix(shifted, order, with_derivatives=False)
    winv = np.ones(len(times))
    c, d, cond = _solve_bordered(K, T, winv, len(times), lam, values)
    return SplineFit(
        order=order,
        times=times.copy(),
        t_ref=t_ref,
        coef_poly=d,
        coef_kernel=c,
        coef_kernel_deriv=None,
        lam=lam,
        variances=None,
        condition=float(cond),
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(fit: SplineFit, t, deriv: int = 0):
    """Evaluate the fitted spline (or one of its derivatives) at times t.

    Derivative orders up to 2*order - 3 are exact everywhere; order 2*order - 2
    is exact away from the knots.  Extrapolation beyond the data window is
    allowed but increasingly unreliable; ``fit.domain`` records the window.
    """
    if deriv < 0 or int(deriv) != deriv:
        raise ValueError("deriv must be a non-negative integer")
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tt = np.atleast_1d(t) - fit.t_ref
    m = fit.order
    p = 2 * m - 1
    theta = _theta(m)

    out = np.zeros_like(tt)
    for nu, d_nu in enumerate(fit.coef_poly):
        if nu - deriv >= 0:
            coeff = d_nu * math.perm(nu, deriv)
            out += coeff * tt ** (nu - deriv)

    knots = fit.times - fit.t_ref
    r = knots[:, None] - tt[None, :]
    sign = -1.0 if deriv % 2 else 1.0
    out += sign * theta * (fit.coef_kernel @ _abs_power_derivative(r, p, deriv))
    if fit.coef_kernel_deriv is not None:
        out += sign * theta * (fit.coef_kernel_deriv @ _abs_power_derivative(r, p, deriv + 1))
    return float(out[0]) if scalar else out


def evaluate_derivative(fit: SplineFit, t):
    """First derivative of the fitted spline (the smoothed speed)."""
    return evaluate(fit, t, deriv=1)


# ---------------------------------------------------------------------------
# reduced spectral form: shared by the influence matrix and the scores
# ---------------------------------------------------------------------------


class _ReducedSystem:
    """Null-space-reduced spectral form of the smoothing system.

    One QR factorisation and one generalized symmetric eigendecomposition
    turn every later evaluation in lambda into O(n^2) work, with the
    influence matrix in whitened coordinates diagonalised explicitly:

        I - A_z(lam) = G diag(n lam / (mu_i + n lam)) G^T,   G^T G = I.
    """

    def __init__(self, K, T, winv_diag, n_factor):
        nobs, m = T.shape
        if nobs - m < 1:
            raise ValueError("too few observations for the requested spline order")
        Q, R = np.linalg.qr(T, mode="complete")
        rdiag = np.abs(np.diag(R[:m, :m]))
        if rdiag.min() <= 1e-12 * max(rdiag.max(), 1.0):
            raise np.linalg.LinAlgError("monomial basis is rank deficient on these times")
        self.Q1 = Q[:, :m]
        self.Q2 = Q[:, m:]
        self.R = R[:m, :m]
        self.K = K
        self.winv = winv_diag
        self.n_factor = n_factor
        self.m = m
        self.nobs = nobs
        Mq = self.Q2.T @ K @ self.Q2
        Nq = self.Q2.T @ (winv_diag[:, None] * self.Q2)
        mu, V = sla.eigh((Mq + Mq.T) / 2.0, (Nq + Nq.T) / 2.0)
        self.mu = np.clip(mu, 0.0, None)
        self.V = V  # V^T Nq V = I
        self.QV = self.Q2 @ V

    def shrink_factors(self, lam: float) -> np.ndarray:
        nl = self.n_factor * lam
        return nl / (self.mu + nl)

    def zeta(self, y: np.ndarray) -> np.ndarray:
        return self.QV.T @ y

    def hat_matrix(self, lam: float) -> np.ndarray:
        nl = self.n_factor * lam
        core = self.QV * (1.0 / (self.mu + nl))[None, :]
        return np.eye(self.nobs) - nl * (self.winv[:, None] * core) @ self.QV.T

    def fitted(self, lam: float, y: np.ndarray) -> np.ndarray:
        nl = self.n_factor * lam
        alpha = self.V @ (self.zeta(y) / (self.mu + nl))
        return y - nl * self.winv * (self.Q2 @ alpha)

    def coefficients(self, lam: float, y: np.ndarray):
        nl = self.n_factor * lam
        alpha = self.V @ (self.zeta(y) / (self.mu + nl))
        c = self.Q2 @ alpha
        resid = y - (self.K @ c + nl * self.winv * c)
        d = sla.solve_triangular(self.R, self.Q1.T @ resid)
        return c, d

    # -- scores in whitened coordinates --------------------------------

    def gcv(self, lam: float, zeta: np.ndarray) -> float:
        nu = self.shrink_factors(lam)
        nobs = self.nobs
        num = float(np.sum(nu**2 * zeta**2)) / nobs
        den = (float(np.sum(nu)) / nobs) ** 2
        if den <= 0:
            return math.inf
        return num / den

    def gml(self, lam: float, zeta: np.ndarray) -> float:
        nu = self.shrink_factors(lam)
        if np.any(nu <= 0):
            return math.inf
        num = float(np.sum(nu * zeta**2))
        log_det = float(np.mean(np.log(nu)))
        return num * math.exp(-log_det)

    def score(self, criterion: str, lam: float, zeta: np.ndarray) -> float:
        if criterion == "gcv":
            return self.gcv(lam, zeta)
        if criterion == "gml":
            return self.gml(lam, zeta)
        raise ValueError(f"criterion must be 'gcv' or 'gml', got {criterion!r}")

    def tie_scale(self, criterion: str, zeta: np.ndarray) -> float:
        base = float(np.mean(zeta**2)) if len(zeta) else 0.0
        if criterion == "gml":
            base *= len(zeta)
        return base


def _single_channel_system(times: np.ndarray, order: int) -> _ReducedSystem:
    t_ref = float(times[0])
    shifted = times - t_ref
    K = _kernel_matrix(shifted, order, with_derivatives=False)
    T = _monomial_matrix(shifted, order, with_derivatives=False)
    return _ReducedSystem(K, T, np.ones(len(times)), len(times))


def _joint_system(data: ObservationSet, order: int, variances) -> _ReducedSystem:
    sx2, sv2 = (check_positive(v, "variance") for v in variances)
    t_ref = float(data.times[0])
    shifted = data.times - t_ref
    K = _kernel_matrix(shifted, order, with_derivatives=True)
    T = _monomial_matrix(shifted, order, with_derivatives=True)
    pos_scale, spd_scale = data.var_scales()
    winv = np.concatenate([sx2 * pos_scale, sv2 * spd_scale])
    return _ReducedSystem(K, T, winv, data.n)


# ---------------------------------------------------------------------------
# public score / influence-matrix API (single channel)
# ---------------------------------------------------------------------------


def hat_matrix(times, order: int = 3, lam: float = 1.0) -> np.ndarray:
    """Influence matrix A(lam) of the single-channel smoothing spline.

    Fitted values at the sampling instants equal ``A @ values`` for any data
    vector: the matrix depends on the times, the order and lambda only.
    """
    order = _check_order(order)
    lam = check_positive(lam, "lam")
    times = as_float_1d(times, "times")
    check_strictly_increasing(times, "times")
    if len(times) <= order:
        raise ValueError("need more samples than the spline order")
    return _single_channel_system(times, order).hat_matrix(lam)


def gcv_score(lam: float, times, values, order: int = 3) -> float:
    """Generalized cross validation score of a single-channel smooth.

    score(lam) = [n^-1 y^T (I-A)^2 y] / [n^-1 tr(I-A)]^2
    """
    times = as_float_1d(times, "times")
    values = as_float_1d(values, "values")
    check_same_length(times=times, values=values)
    sysm = _single_channel_system(times, _check_order(order))
    return sysm.gcv(check_positive(lam, "lam"), sysm.zeta(values))


def gml_score(lam: float, times, values, order: int = 3) -> float:
    """Generalized maximum likelihood score of a single-channel smooth.

    score(lam) = [y^T (I-A) y] / det+[I-A]^(1/(n-m)), where det+ is the
    product of the n-m structurally non-zero eigenvalues of I-A.
    """
    times = as_float_1d(times, "times")
    values = as_float_1d(values, "values")
    check_same_length(times=times, values=values)
    sysm = _single_channel_system(times, _check_order(order))
    return sysm.gml(check_positive(lam, "lam"), sysm.zeta(values))


# ---------------------------------------------------------------------------
# lambda search: log grid plus golden-section refinement
# ---------------------------------------------------------------------------


def _golden_section(f, lo: float, hi: float, iters: int = 80):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a < 1e-7:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _minimise_score(score_fn, tie_scale: float, bounds=LAMBDA_GRID_BOUNDS, size=LAMBDA_GRID_SIZE):
    lo, hi = bounds
    grid = np.logspace(math.log10(lo), math.log10(hi), size)
    scores = np.array([score_fn(l) for l in grid], dtype=float)
    finite = np.isfinite(scores)
    if not finite.any():
        raise RuntimeError("selection score is non-finite over the whole search grid")
    s_min = scores[finite].min()
    tie_tol = 1e-9 * max(tie_scale, 1e-300)
    ties = finite & (scores <= s_min + tie_tol)
    best = int(np.nonzero(ties)[0].max())  # ties break toward the largest lambda

    lo_ref = grid[max(best - 1, 0)]
    hi_ref = grid[min(best + 1, size - 1)]
    if hi_ref > lo_ref:
        log_best, refined_score = _golden_section(
            lambda u: score_fn(10.0**u), math.log10(lo_ref), math.log10(hi_ref)
        )
        refined = 10.0**log_best
        if np.isfinite(refined_score) and refined_score < scores[best] - tie_tol:
            return float(refined)
    return float(grid[best])


def select_lambda(
    times,
    values,
    *,
    order: int = 3,
    criterion: str = "gml",
    bounds=LAMBDA_GRID_BOUNDS,
    grid_size: int = LAMBDA_GRID_SIZE,
) -> float:
    """Pick the smoothing parameter of a single-channel smooth.

    Scans a log-uniform grid and refines around the grid minimiser with a
    golden-section search; score ties are broken toward the larger lambda
    (the smoother fit), so exactly-polynomial data select the top of the
    search range.
    """
    times = as_float_1d(times, "times")
    values = as_float_1d(values, "values")
    check_same_length(times=times, values=values)
    check_strictly_increasing(times, "times")
    sysm = _single_channel_system(times, _check_order(order))
    zeta = sysm.zeta(values)
    return _minimise_score(
        lambda lam: sysm.score(criterion, lam, zeta),
        sysm.tie_scale(criterion, zeta),
        bounds,
        grid_size,
    )


def select_lambda_joint(
    data: ObservationSet,
    *,
    order: int = 3,
    criterion: str = "gml",
    variances: tuple[float, float] = (1.0, 1.0),
    bounds=LAMBDA_GRID_BOUNDS,
    grid_size: int = LAMBDA_GRID_SIZE,
) -> float:
    """Pick lambda for the joint position+speed fit.

    The GCV/GML scores are computed for the whitened joint model, where the
    influence matrix is symmetric and carries ``order`` unit eigenvalues for
    the penalty null space; the degrees-of-freedom convention follows the
    single-channel formulas with n replaced by the 2n stacked observations.
    """
    sysm = _joint_system(data, _check_order(order), variances)
    y = np.concatenate([data.positions, data.speeds])
    zeta = sysm.zeta(y)
    return _minimise_score(
        lambda lam: sysm.score(criterion, lam, zeta),
        sysm.tie_scale(criterion, zeta),
        bounds,
        grid_size,
    )


# ---------------------------------------------------------------------------
# error-variance estimation from single-channel smooths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarianceEstimates:
    """Estimated channel error variances and the lambdas that produced them."""

    sigma_x_sq: float
    sigma_v_sq: float
    criterion: str
    lambda_x: float
    lambda_v: float


def _channel_variance(times, values, order, criterion, bounds, grid_size):
    sysm = _single_channel_system(times, order)
    zeta = sysm.zeta(values)
    lam = _minimise_score(
        lambda l: sysm.score(criterion, l, zeta),
        sysm.tie_scale(criterion, zeta),
        bounds,
        grid_size,
    )
    nu = sysm.shrink_factors(lam)
    if criterion == "gcv":
        tr = float(np.sum(nu))
        if tr <= 0:
            raise RuntimeError("tr(I - A) is not positive; variance estimate undefined")
        est = float(np.sum(nu**2 * zeta**2)) / tr
    else:
        est = float(np.sum(nu * zeta**2)) / (len(times) - order)
    return est, lam


def estimate_variances(
    data: ObservationSet,
    *,
    order: int = 3,
    criterion: str = "gml",
    bounds=LAMBDA_GRID_BOUNDS,
    grid_size: int = LAMBDA_GRID_SIZE,
) -> VarianceEstimates:
    """Estimate the two channel error variances from independent smooths.

    Each channel is smoothed on its own with a criterion-selected lambda;
    the GCV variant uses y^T (I-A)^2 y / tr(I-A) and the GML variant uses
    y^T (I-A) y / (n - m).
    """
    if criterion not in ("gcv", "gml"):
        raise ValueError(f"criterion must be 'gcv' or 'gml', got {criterion!r}")
    order = _check_order(order)
    if data.n <= order:
        raise ValueError("variance estimation needs more samples than the spline order")
    sx2, lam_x = _channel_variance(data.times, data.positions, order, criterion, bounds, grid_size)
    sv2, lam_v = _channel_variance(data.times, data.speeds, order, criterion, bounds, grid_size)
    return VarianceEstimates(
        sigma_x_sq=sx2,
        sigma_v_sq=sv2,
        criterion=criterion,
        lambda_x=lam_x,
        lambda_v=lam_v,
    )


# variances below this floor are treated as numerically zero when weighting
_VARIANCE_FLOOR = 1e-12


def floored_variances(est: VarianceEstimates | tuple[float, float]) -> tuple[float, float]:
    """Clip estimated variances away from zero so weights stay finite."""
    if isinstance(est, VarianceEstimates):
        sx2, sv2 = est.sigma_x_sq, est.sigma_v_sq
    else:
        sx2, sv2 = est
    return max(float(sx2), _VARIANCE_FLOOR), max(float(sv2), _VARIANCE_FLOOR)


# ---------------------------------------------------------------------------
# estimator facade
# ---------------------------------------------------------------------------


class DerivativeSplineSmoother(BaseEstimator):
    """Smoothing-spline regression on positions and speeds jointly.

    Parameters
    ----------
    order : int, default 3
        Spline order m; the penalty integrates the squared m-th derivative.
    lam : float or None
        Smoothing parameter.  None selects it by ``criterion``.
    criterion : {"gml", "gcv"}
        Selection score used when ``lam`` is None.
    variances : tuple of float or None
        (sigma_x^2, sigma_v^2).  None estimates them from the data.
    lambda_bounds : tuple of float
        Search window for the selection grid.
    grid_size : int
        Number of log-spaced grid points scanned before refinement.

    Attributes
    ----------
    fit_ : SplineFit
    lambda_ : float
    variances_ : VarianceEstimates or tuple
    """

    def __init__(
        self,
        order: int = 3,
        lam: float | None = None,
        criterion: str = "gml",
        variances: tuple[float, float] | None = None,
        lambda_bounds=LAMBDA_GRID_BOUNDS,
        grid_size: int = LAMBDA_GRID_SIZE,
    ):
        self.order = order
        self.lam = lam
        self.criterion = criterion
        self.variances = variances
        self.lambda_bounds = lambda_bounds
        self.grid_size = grid_size

    def fit(self, t, y, v):
        data = ObservationSet(
            as_float_1d(t, "t"), as_float_1d(y, "y"), as_float_1d(v, "v")
        )
        return self.fit_observations(data)

    def fit_observations(self, data: ObservationSet):
        if self.variances is None:
            self.variances_ = estimate_variances(
                data, order=self.order, criterion=self.criterion,
                bounds=self.lambda_bounds, grid_size=self.grid_size,
            )
        else:
            self.variances_ = self.variances
        weights = floored_variances(
            self.variances_ if isinstance(self.variances_, VarianceEstimates) else tuple(self.variances_)
        )
        if self.lam is None:
            self.lambda_ = select_lambda_joint(
                data, order=self.order, criterion=self.criterion, variances=weights,
                bounds=self.lambda_bounds, grid_size=self.grid_size,
            )
        else:
            self.lambda_ = check_positive(self.lam, "lam")
        self.fit_ = fit_spline(data, order=self.order, lam=self.lambda_, variances=weights)
        return self

    def predict(self, t):
        self._check_fitted()
        return evaluate(self.fit_, t)

    def predict_derivative(self, t):
        self._check_fitted()
        return evaluate_derivative(self.fit_, t)

    def _check_fitted(self):
        if not hasattr(self, "fit_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("this DerivativeSplineSmoother is not fitted yet")
