import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ctrack.errors import DegenerateInputError, InsufficientHistoryError, InvalidInputError
from ctrack.selectors import (
    AUM_K_GRID,
    AumState,
    DistState,
    aum_select,
    ct_select,
    dist_step,
    fine_scores,
    fine_select,
    gmm_select,
    power_iteration,
    union,
)
from ctrack.trajectory import GapHistory
from test_trajectory import increasing_store


def random_store(rng, n=30, k=4, t=12):
    labels = rng.integers(0, k, n)
    store = GapHistory(labels, k, t)
    drift = rng.normal(0, 0.3, (n, k))
    logits = rng.normal(0, 1, (n, k))
    for e in range(t):
        z = logits + e * drift + rng.normal(0, 0.2, (n, k))
        p = np.exp(z - z.max(axis=1, keepdims=True))
        store.record_epoch(e, p / p.sum(axis=1, keepdims=True), np.arange(n))
    return store


class TestCT:
    def test_monotone_selected(self):
        assert ct_select(increasing_store(epochs=10), 0.01).tolist() == [True]

    def test_five_epochs_not_selected(self):
        assert ct_select(increasing_store(epochs=5), 0.01).tolist() == [False]

    def test_six_epochs_selected(self):
        assert ct_select(increasing_store(epochs=6), 0.01).tolist() == [True]

    def test_flat_not_selected(self):
        store = GapHistory([0], 3, 10)
        for t in range(10):
            store.record_epoch(t, [[0.5, 0.25, 0.25]], [0])
        assert not ct_select(store, 0.01)[0]

    def test_errors(self):
        store = GapHistory([0], 2, 3)
        store.record_epoch(0, [[0.5, 0.5]], [0])
        with pytest.raises(InsufficientHistoryError):
            ct_select(store, 0.01)
        with pytest.raises(InvalidInputError):
            ct_select(increasing_store(), 1.5)

    @pytest.mark.parametrize("seed", range(10))
    def test_alpha_monotone(self, seed):
        store = random_store(np.random.default_rng(seed))
        strict, loose = ct_select(store, 0.01), ct_select(store, 0.10)
        assert np.all(loose[strict])

    @pytest.mark.parametrize("seed", range(5))
    def test_never_selects_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        n, k, t = 20, 3, 10
        labels = rng.integers(0, k, n)
        store = GapHistory(labels, k, t)
        for e in range(t):
            # own-label confidence decays: every off-label gap falls or holds
            own = 0.8 - 0.05 * e
            p = np.full((n, k), (1 - own) / (k - 1))
            p[np.arange(n), labels] = own
            store.record_epoch(e, p, np.arange(n))
        for alpha in (0.01, 0.1, 0.49):
            assert not ct_select(store, alpha).any()


class TestGMM:
    def test_separates_clusters(self):
        rng = np.random.default_rng(0)
        losses = np.concatenate([rng.normal(0.1, 0.05, 500), rng.normal(0.9, 0.05, 500)])
        losses = np.abs(losses)
        truth = np.repeat([True, False], 500)
        assert np.mean(gmm_select(losses, 0.5) == truth) >= 0.99

    def test_unique_minimum_selected(self):
        losses = np.array([0.01, 2.0, 2.1, 1.9, 0.5, 2.2])
        assert gmm_select(losses, 0.5)[0]

    def test_tau_nesting(self):
        rng = np.random.default_rng(1)
        losses = rng.gamma(2.0, 0.5, 400)
        loose = gmm_select(losses, 0.5)
        strict = gmm_select(losses, 0.99)
        assert np.all(loose[strict])

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            gmm_select(np.ones(10), 0.5)


class TestAUM:
    def test_margins(self):
        st_ = AumState([0, 0])
        st_.update([[2.0, 1.0, 0.5], [1.0, 2.0, 0.0]], [0, 1])
        np.testing.assert_allclose(st_.margin_sums, [1.0, -1.0])

    def test_binary_margin(self):
        assert AumState.margins(np.array([[1.0, 2.0]]), np.array([0]))[0] == -1.0

    def test_average(self):
        st_ = AumState([0])
        st_.update([[1.0, 0.0]], [0])
        st_.update([[1.0, 1.0]], [0])
        assert st_.average()[0] == 0.5
        assert st_.epochs_counted == 2

    def test_select_count_and_members(self):
        margins = np.array([0.3, -1, 2, 0.1, 5, -0.2, 0.7, 0.0, 1.5, -3])
        mask = aum_select(margins, noise_rate=0.4, k_slack=0.0)
        assert mask.sum() == 6
        assert set(np.flatnonzero(mask)) == set(np.argsort(-margins)[:6])

    def test_k_grid_nested(self):
        rng = np.random.default_rng(2)
        margins = rng.normal(size=50)
        masks = [aum_select(margins, 0.3, k) for k in AUM_K_GRID]
        assert AUM_K_GRID == (0.0, 0.05, 0.10)
        for bigger, smaller in zip(masks, masks[1:]):
            assert np.all(bigger[smaller])

    def test_ties_by_index(self):
        mask = aum_select(np.zeros(10), 0.3, 0.05)
        assert mask.tolist() == [True] * 7 + [False] * 3

    def test_invalid_fraction(self):
        with pytest.raises(InvalidInputError):
            aum_select(np.zeros(4), 0.6, 0.5)

    @given(hnp.arrays(np.float64, st.integers(1, 80), elements=st.floats(-10, 10)),
           st.floats(0, 0.8), st.sampled_from(AUM_K_GRID))
    def test_size_exact(self, margins, rate, k):
        keep = 1 - rate - k
        if keep <= 0:
            return
        assert aum_select(margins, rate, k).sum() == min(margins.size, math.ceil(round(keep * margins.size, 9)))


class TestDIST:
    def test_update_arithmetic(self):
        st_ = DistState([0], 2, momentum=0.9, init=0.5)
        dist_step(st_, [[0.8, 0.2]], [0], [0])
        assert st_.thresholds[0] == pytest.approx(0.53)

    def test_frozen_momentum(self):
        st_ = DistState([0, 1], 2, momentum=1.0, init=0.4)
        for _ in range(3):
            st_.step([[0.9, 0.1], [0.2, 0.8]], [0, 1])
        np.testing.assert_array_equal(st_.thresholds, [0.4, 0.4])

    def test_select_before_update(self):
        st_ = DistState([0], 2, momentum=0.9, init=0.5)
        _, m = st_.step([[0.6, 0.4]], [0])
        assert m.tolist() == [True]

    def test_default_init_uniform(self):
        assert DistState([0, 1, 2], 4).thresholds.tolist() == [0.25] * 3

    def test_label_mismatch(self):
        with pytest.raises(InvalidInputError):
            dist_step(DistState([0], 2), [[0.5, 0.5]], [1], [0])

    @settings(max_examples=50)
    @given(st.floats(0, 0.999), st.integers(0, 10000))
    def test_thresholds_in_unit_interval(self, lam, seed):
        rng = np.random.default_rng(seed)
        st_ = DistState(rng.integers(0, 3, 20), 3, lam)
        for _ in range(5):
            p = rng.dirichlet(np.ones(3), 20)
            st_.step(p, np.arange(20))
        assert np.all((st_.thresholds >= 0) & (st_.thresholds <= 1))


class TestFINE:
    def test_power_iteration_matches_eigh(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(40, 6))
        # make the top eigenvalue well separated
        a[:, 0] *= 5
        g = a.T @ a
        v = power_iteration(g)
        w, vecs = np.linalg.eigh(g)
        assert abs(abs(v @ vecs[:, -1]) - 1) < 1e-8

    def test_collinear_scores_one(self):
        u = np.array([1.0, 2.0, -1.0])
        feats = np.outer(np.arange(1, 7), u)
        labels = np.zeros(6, dtype=int)
        np.testing.assert_allclose(fine_scores(feats, labels), 1.0)
        assert fine_select(feats, labels, 0.5).all()

    def test_orthogonal_score_zero(self):
        feats = np.array([[3.0, 0.0], [2.0, 0.0], [5.0, 0.0], [0.0, 1.0]])
        scores = fine_scores(feats, np.zeros(4, dtype=int))
        assert scores[3] == pytest.approx(0.0, abs=1e-12)

    def test_mixed_synthetic(self):
        rng = np.random.default_rng(3)
        d, per, k = 8, 100, 3
        feats, labels, aligned = [], [], []
        dirs = np.linalg.qr(rng.normal(size=(d, d)))[0]
        for c in range(k):
            n_off = per // 10
            on = rng.uniform(1, 2, (per - n_off, 1)) * dirs[c] + rng.normal(0, 0.05, (per - n_off, d))
            off = rng.uniform(1, 2, (n_off, 1)) * dirs[(c + 1) % k] + rng.normal(0, 0.05, (n_off, d))
            feats += [on, off]
            labels += [c] * per
            aligned += [True] * (per - n_off) + [False] * n_off
        mask = fine_select(np.vstack(feats), np.array(labels), 0.5)
        assert np.array_equal(mask, np.array(aligned))

    def test_tiny_class(self):
        with pytest.raises(DegenerateInputError):
            fine_scores(np.ones((3, 2)), [0, 0, 1])


class TestUnion:
    def test_basic(self):
        assert union([[1, 0, 0], [0, 0, 1]]).tolist() == [True, False, True]

    def test_identity_and_idempotence(self):
        m = np.array([True, False, True, True])
        assert np.array_equal(union([m, np.zeros(4, bool)]), m)
        assert np.array_equal(union([m, m]), m)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            union([[1, 0], [1, 0, 1]])
