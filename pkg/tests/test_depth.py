"""Tests for h-modal depth, functional boxplots, and station summaries."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from speedprof.depth import (
    default_bandwidth,
    functional_boxplot,
    h_modal_depth,
    l2_distance,
    pointwise_boxplots,
)

GRID = np.linspace(0.0, 1.0, 101)


def _const(c):
    return np.full_like(GRID, float(c))


def _random_family(rng, n, grid=GRID):
    # smooth random curves: a few sine modes with random amplitudes
    k = np.arange(1, 4)[:, None]
    amps = rng.normal(size=(n, 3))
    return amps @ np.sin(np.pi * k * grid) + rng.normal(size=(n, 1))


# ---------------------------------------------------------------------------
# distances and bandwidth


def test_l2_distance_of_constant_shift():
    assert l2_distance(GRID, _const(0.0), _const(1.0)) == pytest.approx(1.0)
    assert l2_distance(GRID, _const(0.0), _const(-2.0)) == pytest.approx(2.0)


def test_l2_distance_of_linear_difference():
    # ||t|| on [0, 1] is 1/sqrt(3)
    assert l2_distance(GRID, GRID, _const(0.0)) == pytest.approx(1.0 / np.sqrt(3.0), rel=1e-4)


def test_l2_distance_validates():
    with pytest.raises(ValueError):
        l2_distance(GRID, _const(0.0), np.zeros(7))


def test_default_bandwidth_small_multiset():
    # sorted pool [0,0,0,1,1,2,2,3,3]: idx = 0.15*8 + 1 = 2.2 lands between
    # the third and fourth entries, 0.8*0 + 0.2*1 = 0.2
    assert abs(default_bandwidth([0, 0, 0, 1, 1, 2, 2, 3, 3]) - 0.2) < 1e-15


def test_default_bandwidth_end_clamps():
    pool = [0.0, 1.0, 2.0]
    assert default_bandwidth(pool, p=1.0) == 2.0
    assert default_bandwidth(pool, p=0.0) == 1.0  # idx = 1, one above the minimum


def test_default_bandwidth_validates():
    with pytest.raises(ValueError):
        default_bandwidth([])
    with pytest.raises(ValueError):
        default_bandwidth([1.0], p=1.5)


# ---------------------------------------------------------------------------
# h-modal depth


def test_middle_constant_is_deepest():
    curves = np.vstack([_const(0.0), _const(1.0), _const(2.0)])
    d = h_modal_depth(GRID, curves, bandwidth=1.0)
    assert d[1] > d[0]
    assert d[1] > d[2]
    assert d[0] == pytest.approx(d[2])  # symmetric layout


def test_depth_translation_invariance():
    rng = np.random.default_rng(21)
    for _ in range(20):
        curves = _random_family(rng, 6)
        shift = float(rng.normal()) * 3.0
        base = h_modal_depth(GRID, curves, bandwidth=0.8)
        moved = h_modal_depth(GRID, curves + shift, bandwidth=0.8)
        assert_allclose(moved, base, atol=1e-10)


def test_depth_translation_invariance_default_bandwidth():
    # distances are shift-invariant, hence so is the percentile bandwidth
    rng = np.random.default_rng(22)
    curves = _random_family(rng, 8)
    assert_allclose(
        h_modal_depth(GRID, curves + 5.0),
        h_modal_depth(GRID, curves),
        atol=1e-10,
    )


def test_identical_curves_all_tied_at_n():
    curves = np.vstack([_const(2.0)] * 5)
    assert_allclose(h_modal_depth(GRID, curves), 5.0)


def test_depth_rejects_bad_bandwidth():
    curves = np.vstack([_const(0.0), _const(1.0)])
    with pytest.raises(ValueError):
        h_modal_depth(GRID, curves, bandwidth=0.0)
    with pytest.raises(ValueError):
        h_modal_depth(GRID, curves, bandwidth=-1.0)


def test_depth_single_curve_needs_explicit_bandwidth():
    with pytest.raises(ValueError):
        h_modal_depth(GRID, _const(0.0)[None, :])
    d = h_modal_depth(GRID, _const(0.0)[None, :], bandwidth=1.0)
    assert d.shape == (1,)


def test_self_distance_toggle_changes_pool():
    curves = np.vstack([_const(0.0), _const(1.0), _const(5.0)])
    with_self = h_modal_depth(GRID, curves)
    without = h_modal_depth(GRID, curves, include_self_distances=False)
    assert not np.allclose(with_self, without)


# ---------------------------------------------------------------------------
# functional boxplot


def test_boxplot_of_four_constants():
    curves = np.vstack([_const(v) for v in (0.0, 1.0, 3.0, 2.0)])
    b = functional_boxplot(GRID, curves)
    assert b.median_index == 1
    assert_allclose(b.median, _const(1.0))
    lo, hi = b.regions[0.5]
    assert_allclose(lo, _const(1.0))
    assert_allclose(hi, _const(2.0))
    assert_allclose(b.fence_lower, _const(-0.5))
    assert_allclose(b.fence_upper, _const(3.5))
    assert_allclose(b.whisker_lower, _const(0.0))
    assert_allclose(b.whisker_upper, _const(3.0))
    assert b.outliers.size == 0


def test_boxplot_regions_nest_and_contain_median():
    rng = np.random.default_rng(31)
    for _ in range(20):
        curves = _random_family(rng, 12)
        b = functional_boxplot(GRID, curves)
        lo25, hi25 = b.regions[0.25]
        lo50, hi50 = b.regions[0.5]
        lo75, hi75 = b.regions[0.75]
        assert np.all(lo75 <= lo50) and np.all(lo50 <= lo25)
        assert np.all(hi25 <= hi50) and np.all(hi50 <= hi75)
        assert np.all(b.median >= lo25) and np.all(b.median <= hi25)
        assert np.all(b.fence_lower <= lo50) and np.all(b.fence_upper >= hi50)


def test_boxplot_flags_constructed_outlier():
    rng = np.random.default_rng(41)
    for trial in range(20):
        curves = _random_family(rng, 9)
        spread = curves.max() - curves.min()
        rogue = _const(curves.max() + 10.0 * (spread + 1.0))
        family = np.vstack([curves, rogue])
        b = functional_boxplot(GRID, family)
        assert 9 in b.outliers
        # flags match the fence rule exactly, in both directions
        escapes = np.any((family < b.fence_lower) | (family > b.fence_upper), axis=1)
        assert_allclose(np.flatnonzero(escapes), b.outliers)


def test_boxplot_keeps_tight_family_outlier_free():
    curves = np.vstack([_const(0.1 * i) for i in range(9)])
    b = functional_boxplot(GRID, curves)
    assert b.outliers.size == 0
    with_rogue = functional_boxplot(GRID, np.vstack([curves, _const(100.0)]))
    assert_allclose(with_rogue.outliers, [9])


def test_boxplot_respects_supplied_depths():
    curves = np.vstack([_const(v) for v in (0.0, 1.0, 2.0, 3.0)])
    b = functional_boxplot(GRID, curves, depths=[0.1, 0.2, 0.9, 0.3])
    assert b.median_index == 2
    assert_allclose(b.order, [2, 3, 1, 0])


def test_boxplot_tie_break_is_input_order():
    curves = np.vstack([_const(v) for v in (0.0, 1.0, 2.0, 3.0)])
    b = functional_boxplot(GRID, curves, depths=[1.0, 1.0, 1.0, 1.0])
    assert b.median_index == 0
    assert_allclose(b.order, [0, 1, 2, 3])


def test_boxplot_validation():
    three = np.vstack([_const(v) for v in (0.0, 1.0, 2.0)])
    with pytest.raises(ValueError):
        functional_boxplot(GRID, three)
    four = np.vstack([_const(v) for v in (0.0, 1.0, 2.0, 3.0)])
    with pytest.raises(ValueError):
        functional_boxplot(GRID, four, fractions=(0.25, 0.75))
    with pytest.raises(ValueError):
        functional_boxplot(GRID, four, depths=[1.0, 2.0])


# ---------------------------------------------------------------------------
# pointwise summaries


def test_pointwise_summary_of_constants():
    grid = np.arange(0.0, 101.0)
    curves = np.vstack([np.full_like(grid, v) for v in (0.0, 0.0, 10.0, 10.0)])
    p = pointwise_boxplots(grid, curves, step=10.0)
    assert len(p.stations) == 11
    assert p.stations[0] == 0.0 and p.stations[-1] == 100.0
    assert_allclose(p.median, 5.0)
    assert_allclose(p.minimum, 0.0)
    assert_allclose(p.maximum, 10.0)
    assert_allclose(p.q1, 0.0)
    assert_allclose(p.q3, 10.0)
    assert_allclose(p.v85, 10.0)


def test_pointwise_interpolates_between_samples():
    grid = np.array([0.0, 100.0])
    curves = np.array([[0.0, 100.0], [0.0, 100.0], [0.0, 100.0], [0.0, 100.0]])
    p = pointwise_boxplots(grid, curves, step=25.0)
    assert_allclose(p.median, [0.0, 25.0, 50.0, 75.0, 100.0])


def test_pointwise_validates_step():
    grid = np.arange(0.0, 11.0)
    curves = np.zeros((2, 11))
    with pytest.raises(ValueError):
        pointwise_boxplots(grid, curves, step=0.0)
