"""Reverse water-filling and the Gaussian distortion-rate reference."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from terncode.allocation import (
    reverse_water_fill,
    shannon_lower_bound,
    water_level,
)


def _oracle_water_level(variances, rate):
    """Independent 1-D root search on the total-rate equation."""
    variances = np.asarray(variances, dtype=np.float64)

    def total_rate(gamma):
        active = variances > gamma
        return np.sum(0.5 * np.log2(variances[active] / gamma)) / variances.size

    lo = variances[variances > 0].min() * 1e-12
    hi = variances.max()
    if total_rate(hi) >= rate:       # even the top level still meets the budget
        return hi
    return brentq(lambda g: total_rate(g) - rate, lo, hi, xtol=1e-14)


class TestWaterLevel:
    def test_equal_variances_closed_form(self):
        # symmetric case: every dimension active, gamma = sigma^2 4^-R
        for rate in (0.25, 1.0, 2.0):
            gamma = water_level(np.full(6, 2.0), rate)
            assert gamma == pytest.approx(2.0 * 4.0 ** -rate, rel=1e-9)

    def test_two_level_profile_matches_root_search_oracle(self):
        variances = np.array([4.0, 1.0])
        oracle = _oracle_water_level(variances, 0.5)
        assert oracle == pytest.approx(1.0, abs=1e-9)
        assert water_level(variances, 0.5) == pytest.approx(1.0, rel=1e-9)

    def test_zero_rate(self):
        gamma = water_level(np.array([1.0, 3.0]), 0.0)
        assert gamma >= 3.0

    def test_all_zero_profile(self):
        assert water_level(np.zeros(4), 0.0) == 0.0
        with pytest.raises(ValueError):
            water_level(np.zeros(4), 0.5)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            water_level(np.array([1.0, -1.0]), 0.5)
        with pytest.raises(ValueError):
            water_level(np.array([1.0]), -0.1)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.01, 50.0), min_size=1, max_size=12),
           st.floats(0.01, 4.0))
    def test_matches_oracle_everywhere(self, variances, rate):
        variances = np.asarray(variances)
        gamma = water_level(variances, rate)
        assert gamma == pytest.approx(_oracle_water_level(variances, rate),
                                      rel=1e-6)


class TestReverseWaterFill:
    def test_two_level_allocation(self):
        res = reverse_water_fill(np.array([4.0, 1.0]), 0.5)
        assert res.water_level == pytest.approx(1.0, rel=1e-9)
        np.testing.assert_allclose(res.codeword_variances, [3.0, 0.0],
                                   atol=1e-8)
        # (1/4) log2(4) = 0.5: the single active dimension carries it all
        np.testing.assert_allclose(res.per_dim_rates, [1.0, 0.0], atol=1e-8)
        assert res.rate == pytest.approx(0.5, abs=1e-9)

    def test_iid_unit_variance_one_bit(self):
        res = reverse_water_fill(np.ones(16), 1.0)
        assert res.distortion == pytest.approx(0.25, rel=1e-9)

    def test_zero_rate_everything_inactive(self):
        res = reverse_water_fill(np.array([2.0, 0.5, 1.0]), 0.0)
        assert res.water_level >= 2.0
        assert not res.active.any()
        np.testing.assert_array_equal(res.codeword_variances, 0.0)
        assert res.distortion == pytest.approx(np.mean([2.0, 0.5, 1.0]))

    def test_active_ratio_widens_the_set(self):
        variances = np.array([4.0, 1.0, 0.2])
        strict = reverse_water_fill(variances, 0.5)
        loose = reverse_water_fill(variances, 0.5, active_ratio=0.1)
        assert loose.active.sum() >= strict.active.sum()

    def test_rejects_negative_active_ratio(self):
        with pytest.raises(ValueError):
            reverse_water_fill(np.ones(3), 1.0, active_ratio=-1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.05, 20.0), min_size=2, max_size=10),
           st.floats(0.05, 3.0))
    def test_achieves_requested_rate(self, variances, rate):
        res = reverse_water_fill(np.asarray(variances), rate)
        # bisection returns the meets-or-exceeds side of the bracket
        assert res.rate >= rate - 1e-6
        assert res.rate <= rate + 0.05 * max(rate, 1.0) + 1e-6

    def test_distortion_decreasing_in_rate(self):
        variances = np.array([5.0, 2.0, 1.0, 0.3])
        dists = [reverse_water_fill(variances, r).distortion
                 for r in (0.1, 0.5, 1.0, 2.0, 4.0)]
        assert np.all(np.diff(dists) < 0)


class TestShannonLowerBound:
    def test_matches_allocation_distortion(self):
        variances = np.array([3.0, 1.0, 0.5])
        for rate in (0.2, 1.0, 2.5):
            assert shannon_lower_bound(variances, rate) == pytest.approx(
                reverse_water_fill(variances, rate).distortion)

    def test_scalar_and_vector_shapes(self):
        variances = np.ones(4)
        scalar = shannon_lower_bound(variances, 1.0)
        assert scalar.shape == ()
        assert float(scalar) == pytest.approx(0.25, rel=1e-9)
        curve = shannon_lower_bound(variances, [0.0, 1.0, 2.0])
        assert curve.shape == (3,)
        np.testing.assert_allclose(curve, [1.0, 0.25, 0.0625], rtol=1e-8)
