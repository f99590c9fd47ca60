import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrack.errors import InvalidInputError
from ctrack.mk_trend import (
    MKState,
    mk_batch,
    mk_threshold,
    mk_update,
    normal_quantile,
    z_from_state,
)
from oracles import mk_reference, normal_ppf_reference

# frozen from oracles.mk_reference
Z_N3 = 1.044465935734187
Z_N5 = 2.2045407685048604
Z_N6 = 2.630142022557628
Z_N10 = 3.9354796403996297


class TestBatch:
    def test_short_increasing(self):
        r = mk_batch([1, 2, 3])
        assert r.s_stat == 3
        assert r.variance == pytest.approx(3 * 2 * 11 / 18)
        assert r.z == pytest.approx(Z_N3, abs=1e-12)

    def test_all_tied(self):
        r = mk_batch([5, 5, 5, 5])
        assert r.s_stat == 0
        assert r.z == 0.0

    def test_monotone_length_ten(self):
        r = mk_batch(np.arange(10.0))
        assert (r.s_stat, r.variance) == (45, 125.0)
        assert r.z == pytest.approx(44 / math.sqrt(125))
        assert r.z == pytest.approx(Z_N10, abs=1e-12)

    def test_decreasing(self):
        r = mk_batch([3, 2, 1])
        assert r.s_stat == -3
        assert r.z == pytest.approx(-Z_N3, abs=1e-12)

    @pytest.mark.parametrize("series", [[], [1.0]])
    def test_too_short(self, series):
        with pytest.raises(InvalidInputError):
            mk_batch(series)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60))
    def test_matches_reference(self, xs):
        s, var, z = mk_reference(xs)
        r = mk_batch(xs)
        assert r.s_stat == s
        assert r.variance == pytest.approx(var)
        assert r.z == pytest.approx(z, abs=1e-12)

    @given(st.lists(st.integers(-5, 5), min_size=2, max_size=40))
    def test_reverse_negate_antisymmetry(self, xs):
        back = [-v for v in reversed(xs)]
        # reversing and negating preserves S; negating alone flips it
        assert mk_batch(back).s_stat == mk_batch(xs).s_stat
        assert mk_batch([-v for v in xs]).s_stat == -mk_batch(xs).s_stat

    @pytest.mark.parametrize("n", [2, 3, 7, 31, 200])
    def test_monotone_extremes(self, n):
        up = np.linspace(0, 1, n)
        assert mk_batch(up).s_stat == n * (n - 1) // 2
        assert mk_batch(up[::-1]).s_stat == -(n * (n - 1) // 2)

    def test_z_zero_iff_s_zero(self):
        assert mk_batch([1, 2, 1, 2, 1.5, 1.5]).z == 0.0 or mk_batch([1, 2, 1, 2, 1.5, 1.5]).s_stat != 0
        r = mk_batch([0.1, 0.2, 0.15])
        assert r.s_stat == 1 and r.z == 0.0  # continuity correction zeroes S=1


class TestStreaming:
    def test_update_matches_batch_three(self):
        st_ = mk_update(MKState(1, 2), [1, 2], 3)
        assert (st_.s_stat, st_.n) == (3, 3)
        assert st_.s_stat == mk_batch([1, 2, 3]).s_stat

    def test_first_value(self):
        assert mk_update(MKState(0, 0), [], 7) == MKState(0, 1)

    def test_ties_contribute_zero(self):
        assert mk_update(MKState(0, 2), [4, 4], 4) == MKState(0, 3)

    def test_history_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            mk_update(MKState(0, 2), [1.0], 3.0)

    def test_state_bounds(self):
        with pytest.raises(InvalidInputError):
            MKState(s_stat=4, n=3)
        with pytest.raises(InvalidInputError):
            MKState(s_stat=1, n=1)

    @settings(max_examples=200)
    @given(st.lists(st.one_of(st.floats(-10, 10), st.sampled_from([0.0, 1.0])), min_size=2, max_size=200))
    def test_fold_equals_batch(self, xs):
        state = MKState()
        for i, v in enumerate(xs):
            state = mk_update(state, xs[:i], v)
        batch = mk_batch(xs)
        assert state.s_stat == batch.s_stat
        assert abs(z_from_state(state) - batch.z) <= 1e-12

    @pytest.mark.parametrize(
        "s, n, z", [(45, 10, Z_N10), (0, 10, 0.0), (-45, 10, -Z_N10)]
    )
    def test_z_from_state(self, s, n, z):
        assert z_from_state(MKState(s, n)) == pytest.approx(z, abs=1e-12)

    def test_z_from_state_short(self):
        with pytest.raises(InvalidInputError):
            z_from_state(MKState(0, 1))


class TestQuantile:
    @pytest.mark.parametrize(
        "p, expected", [(0.99, 2.326348), (0.95, 1.644854), (0.90, 1.281552), (0.5, 0.0)]
    )
    def test_reference_values(self, p, expected):
        assert normal_quantile(p) == pytest.approx(expected, abs=1e-6)

    def test_against_high_precision_oracle(self):
        ps = np.concatenate([np.geomspace(1e-6, 0.5, 200), 1 - np.geomspace(1e-6, 0.5, 200)])
        worst = max(abs(normal_quantile(p) - normal_ppf_reference(p)) for p in ps)
        assert worst <= 1e-6

    @given(st.floats(1e-6, 1 - 1e-6))
    def test_symmetry(self, p):
        assert abs(normal_quantile(p) + normal_quantile(1 - p)) <= 1e-9

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
    def test_domain(self, p):
        with pytest.raises(InvalidInputError):
            normal_quantile(p)

    def test_threshold_alpha(self):
        assert mk_threshold(0.01) == pytest.approx(2.3263478740408408, abs=1e-9)

    def test_minimum_monotone_length_at_one_percent(self):
        thr = normal_quantile(0.99)
        passing = [n for n in range(2, 30) if mk_batch(np.arange(n)).z > thr]
        assert passing[0] == 6
        assert mk_batch(np.arange(6)).z == pytest.approx(Z_N6, abs=1e-12)
        assert mk_batch(np.arange(5)).z == pytest.approx(Z_N5, abs=1e-12)
