"""Tests for the strictly monotone fit f = b0 + b1 * int exp(int w)."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from speedprof.monotone import (
    MonotoneFit,
    NonConvergenceWarning,
    _make_knots,
    _penalty_matrix,
    evaluate_monotone,
    evaluate_monotone_derivative,
    fit_monotone,
    h_value,
    monotonize_spline,
)
from speedprof.smoothing import ObservationSet, fit_spline


def _flat_fit(beta0=0.0, beta1=1.0, coef_value=0.0, n_interior=4, domain=(0.0, 1.0)):
    knots = _make_knots(domain, n_interior)
    nb = len(knots) - 4
    return MonotoneFit(
        beta0=beta0,
        beta1=beta1,
        knots=knots,
        coef=np.full(nb, coef_value),
        lam=0.0,
        converged=True,
        n_iter=0,
        criterion_value=0.0,
    )


# ---------------------------------------------------------------------------
# h and the evaluators on analytically known w


def test_h_is_identity_for_zero_w():
    fit = _flat_fit()
    t = np.linspace(0.0, 1.0, 17)
    assert_allclose(h_value(fit, t), t, atol=1e-12)


def test_h_matches_exponential_for_unit_w():
    # w == 1 (B-splines sum to one) gives h(t) = e^t - 1
    fit = _flat_fit(coef_value=1.0)
    assert h_value(fit, 1.0) == pytest.approx(math.e - 1.0, abs=1e-6)
    t = np.linspace(0.0, 1.0, 9)
    assert_allclose(h_value(fit, t), np.expm1(t), atol=1e-6)


def test_evaluate_monotone_flat_example():
    fit = _flat_fit(beta0=1.0, beta1=2.0)
    assert evaluate_monotone(fit, 0.25) == pytest.approx(1.5, abs=1e-12)


def test_h_starts_at_zero():
    fit = _flat_fit(coef_value=0.7)
    assert h_value(fit, 0.0) == 0.0


def test_quadrature_halving_changes_little():
    fit = _flat_fit(coef_value=1.0)
    t = np.linspace(0.0, 1.0, 7)
    coarse = h_value(fit, t, n_panels=1024)
    fine = h_value(fit, t, n_panels=2048)
    assert np.max(np.abs(fine - coarse)) < 1e-8


def test_h_rejects_time_outside_domain():
    fit = _flat_fit()
    with pytest.raises(ValueError):
        h_value(fit, 1.5)


def test_derivative_matches_finite_difference():
    t = np.linspace(0.0, 1.0, 30)
    fit = fit_monotone(t, np.exp(t), lam=1e-6)
    probe = np.linspace(0.05, 0.95, 11)
    eps = 1e-6
    fd = (evaluate_monotone(fit, probe + eps) - evaluate_monotone(fit, probe - eps)) / (2 * eps)
    der = evaluate_monotone_derivative(fit, probe)
    assert_allclose(der, fd, rtol=1e-5)


# ---------------------------------------------------------------------------
# fitting


def test_linear_data_recovered_exactly():
    t = np.linspace(0.0, 1.0, 50)
    fit = fit_monotone(t, 3.0 + 2.0 * t, lam=1e-4)
    assert fit.converged
    assert fit.beta0 == pytest.approx(3.0, abs=1e-4)
    assert fit.beta1 == pytest.approx(2.0, abs=1e-4)
    grid = np.linspace(0.0, 1.0, 200)
    assert np.max(np.abs(fit.w_spline(grid))) < 1e-4


def test_every_converged_fit_is_strictly_increasing():
    rng = np.random.default_rng(17)
    t = np.linspace(0.0, 1.0, 40)
    scan = np.linspace(0.0, 1.0, 1000)
    targets = [
        t**2,
        0.5 * (2 * t - 1) ** 3 + 0.5,
        np.expm1(2 * t),
        t**3 + 0.02 * rng.normal(size=t.size),  # noisy, may dip locally
    ]
    for y in targets:
        fit = fit_monotone(t, y, lam=1e-6)
        if not fit.converged:
            continue
        vals = evaluate_monotone(fit, scan)
        assert np.all(np.diff(vals) > 0)


def test_noise_free_cubic_growth_curve_fits_closely():
    t = np.linspace(0.0, 1.0, 50)
    fit = fit_monotone(t, t**2, lam=1e-8)
    assert fit.converged
    grid = np.linspace(0.0, 1.0, 200)
    assert np.max(np.abs(evaluate_monotone(fit, grid) - grid**2)) < 5e-3


def test_plateau_derivative_stays_positive():
    # a curve with an interior flat spot: the representation cannot produce
    # zero slope, so the minimum fitted derivative is small but positive
    t = np.linspace(0.0, 1.0, 50)
    y = 0.5 * (2 * t - 1) ** 3 + 0.5
    fit = fit_monotone(t, y, lam=1e-8)
    grid = np.linspace(0.0, 1.0, 1000)
    der = evaluate_monotone_derivative(fit, grid)
    assert np.min(der) > 0.0


def test_profiled_beta_is_exact_at_solution():
    t = np.linspace(0.0, 2.0, 35)
    fit = fit_monotone(t, np.expm1(t), lam=1e-6)
    h = h_value(fit, t)
    design = np.column_stack([np.ones_like(h), h])
    beta, *_ = np.linalg.lstsq(design, np.expm1(t), rcond=None)
    assert abs(beta[0] - fit.beta0) < 1e-12
    assert abs(beta[1] - fit.beta1) < 1e-12


def test_solution_beats_coordinate_perturbations():
    t = np.linspace(0.0, 1.0, 25)
    y = t**3 + 0.1 * t
    fit = fit_monotone(t, y, lam=1e-4)
    P = _penalty_matrix(fit.knots, fit.penalty_order)

    def criterion(coef):
        trial = MonotoneFit(
            beta0=0.0, beta1=1.0, knots=fit.knots, coef=coef,
            lam=fit.lam, converged=True, n_iter=0, criterion_value=0.0,
        )
        h = h_value(trial, t)
        design = np.column_stack([np.ones_like(h), h])
        beta, *_ = np.linalg.lstsq(design, y, rcond=None)
        r = y - design @ beta
        return float(r @ r) + fit.lam * float(coef @ P @ coef)

    base = criterion(fit.coef)
    assert base == pytest.approx(fit.criterion_value, rel=1e-8)
    for k in range(len(fit.coef)):
        for delta in (-1e-3, 1e-3):
            coef = fit.coef.copy()
            coef[k] += delta
            assert base <= criterion(coef) + 1e-12


def test_nonconvergence_warns_and_flags():
    t = np.linspace(0.0, 1.0, 40)
    y = t**2
    with pytest.warns(NonConvergenceWarning):
        fit = fit_monotone(t, y, lam=1e-8, max_iter=1)
    assert not fit.converged
    assert fit.n_iter == 1


def test_fit_requires_three_points():
    with pytest.raises(ValueError):
        fit_monotone([0.0, 1.0], [0.0, 1.0])


def test_fit_rejects_negative_penalty():
    t = np.linspace(0.0, 1.0, 5)
    with pytest.raises(ValueError):
        fit_monotone(t, t, lam=-1.0)


def test_fit_rejects_unsorted_times():
    with pytest.raises(ValueError):
        fit_monotone([0.0, 2.0, 1.0], [0.0, 1.0, 2.0])


def test_decreasing_data_gets_negative_slope():
    # the representation carries the sign in beta1
    t = np.linspace(0.0, 1.0, 20)
    fit = fit_monotone(t, 5.0 - 3.0 * t, lam=1e-4)
    assert fit.beta1 == pytest.approx(-3.0, abs=1e-3)
    grid = np.linspace(0.0, 1.0, 100)
    assert np.all(np.diff(evaluate_monotone(fit, grid)) < 0)


# ---------------------------------------------------------------------------
# projection of a spline fit


def test_monotonize_spline_straightens_small_dip():
    rng = np.random.default_rng(4)
    times = np.linspace(0.0, 1.0, 40)
    pos = times + 0.03 * np.sin(12 * times) + 0.01 * rng.normal(size=40)
    spd = np.ones_like(times)
    data = ObservationSet(times=times, positions=pos, speeds=spd)
    spline = fit_spline(data, lam=1e-6)  # wiggly on purpose
    mono = monotonize_spline(spline, lam=1e-6)
    scan = np.linspace(0.0, 1.0, 1000)
    assert np.all(np.diff(evaluate_monotone(mono, scan)) > 0)


def test_monotonize_spline_tracks_increasing_values():
    from speedprof.smoothing import evaluate

    rng = np.random.default_rng(6)
    times = np.linspace(0.0, 1.0, 40)
    pos = np.expm1(times) + 0.02 * rng.normal(size=40)
    spd = np.exp(times) + 0.002 * rng.normal(size=40)
    data = ObservationSet(times=times, positions=pos, speeds=spd)
    spline = fit_spline(data, lam=1e-3, variances=(4e-4, 4e-6))
    mono = monotonize_spline(spline, lam=1e-6)
    spline_vals = evaluate(spline, times)
    rms_spline = np.sqrt(np.mean((spline_vals - pos) ** 2))
    rms_mono = np.sqrt(np.mean((evaluate_monotone(mono, times) - pos) ** 2))
    assert rms_mono <= 2 * rms_spline


def test_monotone_fit_protocol_methods():
    t = np.linspace(0.0, 1.0, 20)
    fit = fit_monotone(t, np.expm1(t), lam=1e-6)
    assert fit.domain == (0.0, 1.0)
    probe = np.array([0.2, 0.8])
    assert_allclose(fit.value(probe), evaluate_monotone(fit, probe))
    assert_allclose(fit.derivative(probe), evaluate_monotone_derivative(fit, probe))


def test_monotone_smoother_estimator():
    from speedprof.monotone import MonotoneSmoother

    t = np.linspace(0.0, 1.0, 30)
    y = t**2
    est = MonotoneSmoother(lam=1e-6).fit(t, y)
    assert est.converged_
    pred = est.predict(t)
    assert np.max(np.abs(pred - y)) < 1e-2
    der = est.predict_derivative(np.array([0.5]))
    assert der[0] == pytest.approx(1.0, abs=0.1)
