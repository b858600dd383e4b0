"""Monotone smoothing by a log-derivative representation.

An increasing function is written as

    f(t) = beta0 + beta1 * h(t),      h(t) = int_a^t exp(W(u)) du,
    W(u) = int_a^u w(s) ds,

so that f' = beta1 * exp(W) never changes sign; w is the derivative of
log f' ("relative curvature").  Following Ramsay, "Estimating smooth
monotone functions" (JRSS B, 1998), w is expanded in a cubic B-spline basis
and estimated by penalised least squares,

    sum_i (y_i - beta0 - beta1 h(t_i))^2 + lam * int (w^(q))^2,

with (beta0, beta1) profiled out linearly and the basis coefficients found
by a damped Gauss-Newton iteration.  The inner integral W is the exact
antiderivative of the B-spline expansion; the outer integral is a composite
per-panel Simpson rule on a fixed uniform grid, cached across evaluations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline
from sklearn.base import BaseEstimator

from ._validation import as_float_1d, check_same_length, check_strictly_increasing
from .smoothing import SplineFit, evaluate

__all__ = [
    "MonotoneFit",
    "MonotoneSmoother",
    "NonConvergenceWarning",
    "fit_monotone",
    "h_value",
    "evaluate_monotone",
    "evaluate_monotone_derivative",
    "monotonize_spline",
]

DEFAULT_PANELS = 2048
MAX_INTERIOR_KNOTS = 50
_DEGREE = 3


class NonConvergenceWarning(UserWarning):
    """The Gauss-Newton iteration hit its iteration cap."""


def _make_knots(domain: tuple[float, float], n_interior: int) -> np.ndarray:
    a, b = domain
    interior = np.linspace(a, b, n_interior + 2)[1:-1] if n_interior > 0 else np.empty(0)
    return np.concatenate([np.full(_DEGREE + 1, a), interior, np.full(_DEGREE + 1, b)])


def _penalty_matrix(knots: np.ndarray, order: int) -> np.ndarray:
    """Gram matrix of the order-th basis derivatives, integrated exactly.

    The integrand is piecewise polynomial of degree at most 2*(3 - order) + 2,
    so a 4-point Gauss rule per knot span is exact.
    """
    nb = len(knots) - _DEGREE - 1
    if order > _DEGREE:
        raise ValueError("penalty order exceeds the basis degree")
    dbasis = BSpline(knots, np.eye(nb), _DEGREE).derivative(order)
    nodes, weights = leggauss(4)
    spans = np.unique(knots)
    P = np.zeros((nb, nb))
    for lo, hi in zip(spans[:-1], spans[1:]):
        half = (hi - lo) / 2.0
        pts = lo + half * (nodes + 1.0)
        B = dbasis(pts)
        P += half * (B * weights[:, None]).T @ B
    return (P + P.T) / 2.0


class _PanelGrid:
    """Uniform Simpson panels with cached fine-grid sample points."""

    def __init__(self, domain: tuple[float, float], n_panels: int):
        a, b = domain
        self.domain = (float(a), float(b))
        self.n_panels = int(n_panels)
        self.nodes = np.linspace(a, b, self.n_panels + 1)
        self.fine = np.linspace(a, b, 2 * self.n_panels + 1)
        self.width = (b - a) / self.n_panels

    def cumulative(self, g_fine: np.ndarray) -> np.ndarray:
        """Cumulative integral at the panel nodes from fine-grid samples."""
        g0 = g_fine[0:-2:2]
        g1 = g_fine[1::2]
        g2 = g_fine[2::2]
        panels = (self.width / 6.0) * (g0 + 4.0 * g1 + g2)
        out = np.empty(self.n_panels + 1)
        out[0] = 0.0
        np.cumsum(panels, out=out[1:])
        return out

    def cumulative_rows(self, g_fine: np.ndarray) -> np.ndarray:
        panels = (self.width / 6.0) * (g_fine[0:-2:2] + 4.0 * g_fine[1::2] + g_fine[2::2])
        out = np.zeros((self.n_panels + 1, g_fine.shape[1]))
        np.cumsum(panels, axis=0, out=out[1:])
        return out

    def locate(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.nodes, t, side="right") - 1
        return np.clip(idx, 0, self.n_panels - 1)


@dataclass(frozen=True)
class MonotoneFit:
    """Monotone fit f(t) = beta0 + beta1 * h(t) with w in a B-spline basis."""

    beta0: float
    beta1: float
    knots: np.ndarray
    coef: np.ndarray
    degree: int = _DEGREE
    lam: float = 0.0
    penalty_order: int = 3
    converged: bool = True
    n_iter: int = 0
    criterion_value: float = float("nan")
    n_panels: int = DEFAULT_PANELS
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def w_spline(self) -> BSpline:
        """w as a callable spline; w is the derivative of log f'."""
        return BSpline(self.knots, self.coef, self.degree)

    def _engine(self):
        key = "engine"
        if key not in self._cache:
            w_anti = self.w_spline.antiderivative()
            grid = _PanelGrid(self.domain, self.n_panels)
            e_fine = np.exp(w_anti(grid.fine))
            cum = grid.cumulative(e_fine)
            self._cache[key] = (w_anti, grid, e_fine, cum)
        return self._cache[key]

    # fit-result objects mimic the source-curve protocol used by profiles
    def value(self, t):
        return evaluate_monotone(self, t)

    def derivative(self, t):
        return evaluate_monotone_derivative(self, t)


def h_value(fit: MonotoneFit, t, n_panels: int | None = None):
    """The inner monotone transform h(t) = int_a^t exp(W(u)) du.

    ``n_panels`` overrides the cached quadrature density (used to check
    convergence of the rule); the default reuses the fit's cached panels.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tt = np.atleast_1d(t)
    a, b = fit.domain
    span = b - a
    if np.any(tt < a - 1e-9 * span) or np.any(tt > b + 1e-9 * span):
        raise ValueError(f"evaluation point outside the fit domain [{a}, {b}]")
    tt = np.clip(tt, a, b)

    if n_panels is None:
        w_anti, grid, e_fine, cum = fit._engine()
    else:
        w_anti = fit.w_spline.antiderivative()
        grid = _PanelGrid(fit.domain, n_panels)
        e_fine = np.exp(w_anti(grid.fine))
        cum = grid.cumulative(e_fine)

    idx = grid.locate(tt)
    left = grid.nodes[idx]
    mid = 0.5 * (left + tt)
    e_left = e_fine[2 * idx]
    e_mid = np.exp(w_anti(mid))
    e_t = np.exp(w_anti(tt))
    tail = (tt - left) / 6.0 * (e_left + 4.0 * e_mid + e_t)
    out = cum[idx] + tail
    return float(out[0]) if scalar else out


def evaluate_monotone(fit: MonotoneFit, t):
    """Value of the monotone fit at times t."""
    return fit.beta0 + fit.beta1 * h_value(fit, t)


def evaluate_monotone_derivative(fit: MonotoneFit, t):
    """Derivative beta1 * exp(W(t)); strictly one-signed by construction."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tt = np.atleast_1d(t)
    w_anti, _, _, _ = fit._engine()
    out = fit.beta1 * np.exp(w_anti(np.clip(tt, *fit.domain)))
    return float(out[0]) if scalar else out


class _FitEngine:
    """Precomputed quantities for the Gauss-Newton loop on fixed data."""

    def __init__(self, knots: np.ndarray, domain, times: np.ndarray, n_panels: int):
        nb = len(knots) - _DEGREE - 1
        self.nb = nb
        ib = BSpline(knots, np.eye(nb), _DEGREE).antiderivative()
        self.grid = _PanelGrid(domain, n_panels)
        self.ib_fine = ib(self.grid.fine)  # (2N+1, nb)
        self.idx = self.grid.locate(times)
        self.left = self.grid.nodes[self.idx]
        self.mid = 0.5 * (self.left + times)
        self.times = times
        self.ib_mid = ib(self.mid)
        self.ib_t = ib(times)
        self.tail_w = (times - self.left) / 6.0

    def h_and_state(self, gamma: np.ndarray):
        """h at the data times, or None if exp overflows; state feeds gradients."""
        w_fine = self.ib_fine @ gamma
        w_mid = self.ib_mid @ gamma
        w_t = self.ib_t @ gamma
        top = max(w_fine.max(), w_mid.max(), w_t.max())
        if top > 700.0:
            return None, None
        e_fine = np.exp(w_fine)
        e_mid = np.exp(w_mid)
        e_t = np.exp(w_t)
        cum = self.grid.cumulative(e_fine)
        e_left = e_fine[2 * self.idx]
        h = cum[self.idx] + self.tail_w * (e_left + 4.0 * e_mid + e_t)
        return h, (e_fine, e_mid, e_t)

    def gradient(self, state) -> np.ndarray:
        e_fine, e_mid, e_t = state
        g_fine = e_fine[:, None] * self.ib_fine
        gcum = self.grid.cumulative_rows(g_fine)
        g_left = g_fine[2 * self.idx]
        g_mid = e_mid[:, None] * self.ib_mid
        g_t = e_t[:, None] * self.ib_t
        return gcum[self.idx] + self.tail_w[:, None] * (g_left + 4.0 * g_mid + g_t)


def _profile_beta(h: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    X = np.column_stack([np.ones_like(h), h])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(beta[0]), float(beta[1])


def fit_monotone(
    times,
    values,
    *,
    lam: float = 1e-4,
    penalty_order: int = 3,
    n_interior: int | None = None,
    max_iter: int = 200,
    rel_tol: float = 1e-10,
    n_panels: int = DEFAULT_PANELS,
) -> MonotoneFit:
    """Fit a monotone function to scattered data by penalised Gauss-Newton.

    Parameters
    ----------
    times, values : array_like
        Strictly increasing sampling instants and the target values.
    lam : float
        Penalty weight on int (w^(penalty_order))^2; larger values push w,
        and with it the log-slope of the fit, toward a low-order polynomial.
    n_interior : int or None
        Interior knots of the cubic B-spline basis for w.  Defaults to one
        per data point, capped at 50, uniformly placed.
    """
    times = as_float_1d(times, "times")
    values = as_float_1d(values, "values")
    check_same_length(times=times, values=values)
    check_strictly_increasing(times, "times")
    if len(times) < 3:
        raise ValueError("monotone fitting needs at least three samples")
    if lam < 0:
        raise ValueError("lam must be non-negative")

    domain = (float(times[0]), float(times[-1]))
    if n_interior is None:
        n_interior = min(len(times), MAX_INTERIOR_KNOTS)
    knots = _make_knots(domain, n_interior)
    nb = len(knots) - _DEGREE - 1
    P = _penalty_matrix(knots, penalty_order)
    engine = _FitEngine(knots, domain, times, n_panels)

    gamma = np.zeros(nb)
    h, state = engine.h_and_state(gamma)
    beta0, beta1 = _profile_beta(h, values)
    resid = values - beta0 - beta1 * h
    crit = float(resid @ resid) + lam * float(gamma @ P @ gamma)

    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        D = engine.gradient(state)
        J = beta1 * D
        # Kaufman variable-projection Jacobian: the step targets the
        # profiled criterion, so directions absorbable by (beta0, beta1)
        # must be projected out of J or the iteration crawls along the
        # resulting flat valley.
        Q, _ = np.linalg.qr(np.column_stack([np.ones_like(h), h]))
        J = J - Q @ (Q.T @ J)
        grad_rhs = J.T @ resid - lam * (P @ gamma)
        H = J.T @ J + lam * P
        ridge = 1e-12 * (np.trace(H) / nb + 1.0)
        H[np.diag_indices_from(H)] += ridge
        try:
            step = np.linalg.solve(H, grad_rhs)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(H, grad_rhs, rcond=None)

        accepted = False
        scale = 1.0
        for _ in range(40):
            trial = gamma + scale * step
            h_try, state_try = engine.h_and_state(trial)
            if h_try is not None:
                b0, b1 = _profile_beta(h_try, values)
                r_try = values - b0 - b1 * h_try
                crit_try = float(r_try @ r_try) + lam * float(trial @ P @ trial)
                if crit_try < crit:
                    accepted = True
                    break
            scale *= 0.5
        if not accepted:
            converged = True  # no descent direction left at working precision
            break

        rel_drop = (crit - crit_try) / max(crit, 1e-300)
        gamma, h, state = trial, h_try, state_try
        beta0, beta1, resid, crit = b0, b1, r_try, crit_try
        if rel_drop < rel_tol:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"monotone fit stopped after {max_iter} iterations without meeting "
            f"the relative tolerance {rel_tol:g}",
            NonConvergenceWarning,
        )

    return MonotoneFit(
        beta0=beta0,
        beta1=beta1,
        knots=knots,
        coef=gamma,
        degree=_DEGREE,
        lam=float(lam),
        penalty_order=int(penalty_order),
        converged=converged,
        n_iter=n_iter,
        criterion_value=crit,
        n_panels=n_panels,
    )


def monotonize_spline(fit: SplineFit, **kwargs) -> MonotoneFit:
    """Project a fitted spline onto the monotone class.

    The monotone model is refit to the spline's fitted values at the original
    sampling instants, which keeps the two-step pipeline's second stage a
    plain regression problem.
    """
    targets = evaluate(fit, fit.times)
    return fit_monotone(fit.times, targets, **kwargs)


class MonotoneSmoother(BaseEstimator):
    """Estimator wrapper around :func:`fit_monotone`.

    Attributes
    ----------
    fit_ : MonotoneFit
    beta0_, beta1_ : float
    converged_ : bool
    """

    def __init__(
        self,
        lam: float = 1e-4,
        penalty_order: int = 3,
        n_interior: int | None = None,
        max_iter: int = 200,
        rel_tol: float = 1e-10,
        n_panels: int = DEFAULT_PANELS,
    ):
        self.lam = lam
        self.penalty_order = penalty_order
        self.n_interior = n_interior
        self.max_iter = max_iter
        self.rel_tol = rel_tol
        self.n_panels = n_panels

    def fit(self, t, y):
        self.fit_ = fit_monotone(
            t,
            y,
            lam=self.lam,
            penalty_order=self.penalty_order,
            n_interior=self.n_interior,
            max_iter=self.max_iter,
            rel_tol=self.rel_tol,
            n_panels=self.n_panels,
        )
        self.beta0_ = self.fit_.beta0
        self.beta1_ = self.fit_.beta1
        self.converged_ = self.fit_.converged
        return self

    def predict(self, t):
        self._check_fitted()
        return evaluate_monotone(self.fit_, t)

    def predict_derivative(self, t):
        self._check_fitted()
        return evaluate_monotone_derivative(self.fit_, t)

    def _check_fitted(self):
        if not hasattr(self, "fit_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("this MonotoneSmoother is not fitted yet")
