import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxfl_sim.core import (RngStream, WeightMode, appeals, check_finite, neumaier_sum,
                            neumaier_vsum, sigmoid, sigmoid_array, weight_from_gap)

finite = st.floats(-700, 700, allow_nan=False)


def test_weight_peaks_at_zero_gap():
    assert weight_from_gap(0.0) == 0.25


def test_raw_sigmoid_at_zero_gap():
    assert weight_from_gap(0.0, WeightMode.RAW_SIGMOID) == 0.5


def test_weight_against_mpmath_oracle():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    for gap in (-30.0, -3.0, -0.5, 0.1, 2.0, 10.0, 40.0):
        s = 1 / (1 + mpmath.exp(-gap))
        assert weight_from_gap(gap) == pytest.approx(float(s * (1 - s)), rel=1e-14)
        assert weight_from_gap(gap, "raw_sigmoid") == pytest.approx(float(s), rel=1e-14)


def test_saturated_gap_gives_tiny_weight():
    assert 0.0 < weight_from_gap(30.0) < 1e-12
    assert weight_from_gap(800.0) == 0.0


@given(finite)
def test_weight_is_exactly_even(gap):
    assert weight_from_gap(gap) == weight_from_gap(-gap)


@given(finite, finite)
def test_weight_decreases_in_abs_gap(a, b):
    if abs(a) < abs(b):
        assert weight_from_gap(a) >= weight_from_gap(b)


def test_weight_strictly_decreasing_on_dense_grid():
    grid = np.linspace(0.0, 30.0, 10_000)
    q = np.array([weight_from_gap(g) for g in grid])
    assert np.all(np.diff(q) < 0)


@given(finite)
def test_sigmoid_matches_array_version(x):
    assert sigmoid(x) == pytest.approx(float(sigmoid_array(np.array([x]))[0]), rel=1e-15)


@given(st.floats(-50, 50))
def test_sigmoid_symmetry(x):
    assert sigmoid(x) + sigmoid(-x) == pytest.approx(1.0, abs=1e-15)


def test_appeal_is_strict():
    assert appeals(0.1, 0.2)
    assert not appeals(0.2, 0.2)
    assert not appeals(0.3, 0.2)


@given(st.lists(st.floats(-1e6, 1e6), max_size=50))
def test_neumaier_sum_matches_exact_rational(values):
    exact = float(sum(Fraction(v) for v in values))
    assert neumaier_sum(values) == pytest.approx(exact, abs=1e-9)


def test_neumaier_recovers_cancellation():
    assert neumaier_sum([1.0, 1e100, 1.0, -1e100]) == 2.0


def test_vsum_is_coordinatewise():
    vs = [np.array([1.0, 1e100]), np.array([1e100, 1.0]), np.array([-1e100, -1e100])]
    np.testing.assert_array_equal(neumaier_vsum(vs), [1.0, 1.0])


def test_vsum_rejects_empty():
    with pytest.raises(ValueError):
        neumaier_vsum([])


def test_check_finite():
    assert check_finite(np.zeros(3))
    assert not check_finite(np.array([0.0, np.nan]))
    assert not check_finite(np.array([np.inf]))


class TestRngStream:
    def test_same_id_same_draws(self):
        a = RngStream(7, 3, 4, "local").generator().random(5)
        b = RngStream(7, 3, 4, "local").generator().random(5)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("other", [
        RngStream(8, 3, 4, "local"), RngStream(7, 2, 4, "local"),
        RngStream(7, 3, 5, "local"), RngStream(7, 3, 4, "sample"),
    ])
    def test_any_field_changes_the_stream(self, other):
        base = RngStream(7, 3, 4, "local").generator().random(4)
        assert not np.array_equal(base, other.generator().random(4))

    def test_streams_independent_of_consumption_order(self):
        a1 = RngStream(1, purpose="a").generator()
        a1.random(1000)
        b_after = RngStream(1, purpose="b").generator().random(3)
        b_fresh = RngStream(1, purpose="b").generator().random(3)
        np.testing.assert_array_equal(b_after, b_fresh)

    def test_child_keeps_unset_fields(self):
        s = RngStream(5, client=2).child(round=9, purpose="x")
        assert (s.seed, s.client, s.round, s.purpose) == (5, 2, 9, "x")

    def test_generator_is_philox(self):
        assert isinstance(RngStream(0).generator().bit_generator, np.random.Philox)

    def test_rejects_negative_indices(self):
        with pytest.raises(ValueError):
            RngStream(0, client=-2).generator()

    @settings(max_examples=25)
    @given(st.integers(0, 2**40), st.integers(-1, 10_000), st.integers(-1, 10_000))
    def test_uniform_draws_in_unit_interval(self, seed, client, rnd):
        x = RngStream(seed, client, rnd, "p").generator().random(8)
        assert np.all((0 <= x) & (x < 1))

    def test_uniform_mean_statistically_half(self):
        x = RngStream(3, purpose="mc").generator().random(100_000)
        assert abs(x.mean() - 0.5) < 3 * math.sqrt(1 / 12 / len(x))
