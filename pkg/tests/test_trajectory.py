import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ctrack.errors import InsufficientHistoryError, InvalidInputError, OrderingError
from ctrack.trajectory import GapHistory
from test_mk_trend import Z_N3, Z_N10


def rows_with_gaps(label, gaps):
    """Probability row whose gaps p[label] - p[c] equal ``gaps``."""
    gaps = np.asarray(gaps, dtype=np.float64)
    k = gaps.size
    own = (1.0 + gaps.sum()) / k
    return own - gaps


def increasing_store(n_samples=1, n_classes=3, epochs=10):
    labels = np.zeros(n_samples, dtype=int)
    store = GapHistory(labels, n_classes, epochs)
    for t in range(epochs):
        # own-label confidence rises linearly, the rest split evenly
        own = 0.4 + 0.05 * t
        rest = (1 - own) / (n_classes - 1)
        probs = np.tile([own] + [rest] * (n_classes - 1), (n_samples, 1))
        store.record_epoch(t, probs, np.arange(n_samples))
    return store


class TestRecord:
    def test_gap_values(self):
        store = GapHistory([0], 3, 4)
        store.record_epoch(0, [[0.5, 0.3, 0.2]], [0])
        np.testing.assert_allclose(store.gaps[0, 0], [0.0, 0.2, 0.3], atol=1e-7)

    def test_two_epochs_single_pair(self):
        store = GapHistory([0], 2, 4)
        for t, g in enumerate([0.1, 0.2]):
            store.record_epoch(t, [rows_with_gaps(0, [0.0, g])], [0])
        assert store.s_stats[0, 1] == 1

    def test_three_epochs(self):
        store = GapHistory([0], 2, 4)
        for t, g in enumerate([0.1, 0.2, 0.15]):
            store.record_epoch(t, [rows_with_gaps(0, [0.0, g])], [0])
        assert store.s_stats[0, 1] == 1

    def test_out_of_order(self):
        store = GapHistory([0, 1], 2, 4)
        with pytest.raises(OrderingError):
            store.record_epoch(1, [[0.5, 0.5]], [0])

    def test_capacity(self):
        store = GapHistory([0], 2, 1)
        store.record_epoch(0, [[0.5, 0.5]], [0])
        with pytest.raises(OrderingError):
            store.record_epoch(1, [[0.5, 0.5]], [0])

    def test_bad_index(self):
        store = GapHistory([0], 2, 2)
        with pytest.raises(IndexError):
            store.record_epoch(0, [[0.5, 0.5]], [3])

    def test_not_simplex(self):
        store = GapHistory([0], 2, 2)
        with pytest.raises(InvalidInputError):
            store.record_epoch(0, [[0.5, 0.6]], [0])

    def test_touches_only_named_rows(self):
        store = GapHistory([0, 1, 0], 2, 3)
        store.record_epoch(0, [[0.7, 0.3]], [1])
        assert store.counts.tolist() == [0, 1, 0]
        assert not store.gaps[[0, 2]].any()

    def test_storage_layout(self):
        store = GapHistory(np.zeros(5, dtype=int), 3, 7)
        assert store.gaps.shape == (5, 7, 3) and store.gaps.dtype == np.float32
        assert store.s_stats.shape == (5, 3) and store.s_stats.dtype == np.int64


class TestZ:
    def test_monotone_ten_epochs(self):
        assert increasing_store().z_min(0) == pytest.approx(Z_N10, abs=1e-9)

    def test_one_flat_off_label_series(self):
        store = GapHistory([0], 3, 6)
        for t in range(6):
            # dyadic values keep float32 gaps exact: p0 - p1 fixed, p0 - p2 grows
            p0 = 0.375 + t / 64
            p1 = p0 - 0.125
            store.record_epoch(t, [[p0, p1, 1 - p0 - p1]], [0])
        assert store.s_stats[0, 1] == 0
        assert store.s_stats[0, 2] == 15
        assert store.z_min(0) == 0.0

    def test_binary_label_one(self):
        store = GapHistory([1], 2, 3)
        for t, g in enumerate([0.1, 0.2, 0.3]):
            store.record_epoch(t, [rows_with_gaps(1, [g, 0.0])], [0])
        assert store.z_min(0) == pytest.approx(Z_N3, abs=1e-9)

    def test_insufficient(self):
        store = GapHistory([0], 2, 3)
        store.record_epoch(0, [[0.5, 0.5]], [0])
        with pytest.raises(InsufficientHistoryError):
            store.z_min(0)
        with pytest.raises(InsufficientHistoryError):
            store.snapshot_z()

    def test_snapshot_singleton(self):
        store = increasing_store()
        assert store.snapshot_z().tolist() == [store.z_min(0)]

    def test_snapshot_replicated(self):
        z = increasing_store(n_samples=4).snapshot_z()
        np.testing.assert_allclose(z, Z_N10, atol=1e-9)

    def test_snapshot_with_flat_sample(self):
        labels = np.zeros(3, dtype=int)
        store = GapHistory(labels, 3, 10)
        for t in range(10):
            own = 0.4 + 0.05 * t
            rest = (1 - own) / 2
            probs = np.array([[own, rest, rest], [0.5, 0.25, 0.25], [own, rest, rest]])
            store.record_epoch(t, probs, [0, 1, 2])
        np.testing.assert_allclose(store.snapshot_z(), [Z_N10, 0.0, Z_N10], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(2, 5).flatmap(
        lambda k: st.tuples(
            st.just(k),
            hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 12), st.just(k)),
                       elements=st.floats(0.01, 1.0)),
        )
    ),
    st.randoms(use_true_random=False),
)
def test_consistency_with_batch(k_and_raw, rnd):
    k, raw = k_and_raw
    n, t = raw.shape[0], raw.shape[1]
    # quantize so ties show up
    probs = np.round(raw, 1) + 0.01
    probs /= probs.sum(axis=2, keepdims=True)
    labels = np.array([rnd.randrange(k) for _ in range(n)])
    store = GapHistory(labels, k, t)
    for e in range(t):
        ids = list(range(n))
        rnd.shuffle(ids)
        half = len(ids) // 2
        for chunk in (ids[:half], ids[half:]):
            if chunk:
                store.record_epoch(e, probs[chunk, e], chunk)
    assert np.array_equal(store.s_stats, store.recompute_s())
    assert np.all(store.gaps[np.arange(n), :, labels] == 0)
    assert np.all(np.abs(store.gaps) <= 1)
