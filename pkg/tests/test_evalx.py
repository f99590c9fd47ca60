import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctrack.errors import InvalidInputError
from ctrack.evalx import accuracy, accuracy_from_probs, f1_score, format_report, selection_metrics
from ctrack.selectors import union
from ctrack.trainer import MLP


def test_perfect_mask():
    clean = np.array([1, 0, 1, 1, 0], bool)
    r = selection_metrics(clean, clean)
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)


def test_all_true_mask():
    clean = np.array([1, 0, 1, 1, 0], bool)
    r = selection_metrics(np.ones(5, bool), clean)
    assert r.precision == pytest.approx(0.6) and r.recall == 1.0


def test_half_clean():
    clean = np.array([1, 1, 1, 1, 0, 0], bool)
    r = selection_metrics([1, 1, 0, 0, 0, 0], clean)
    assert r.precision == 1.0 and r.recall == 0.5 and r.f1 == pytest.approx(2 / 3)


def test_empty_selection_flag():
    r = selection_metrics(np.zeros(4, bool), [1, 0, 1, 0])
    assert r.empty_selection and r.precision == 1.0 and r.recall == 0.0 and r.f1 == 0.0


def test_length_mismatch():
    with pytest.raises(InvalidInputError):
        selection_metrics([1, 0], [1, 0, 1])


@given(st.floats(0, 1), st.floats(0, 1))
def test_f1_symmetric(p, r):
    assert f1_score(p, r) == f1_score(r, p)


def test_union_recall_exhaustive_small():
    clean = np.array([1, 0, 1, 1], bool)
    masks = [np.array(bits, bool) for bits in itertools.product([0, 1], repeat=4)]
    for a, b in itertools.product(masks, masks):
        r = selection_metrics(union([a, b]), clean).recall
        assert r >= max(selection_metrics(a, clean).recall, selection_metrics(b, clean).recall)


def test_perfect_model_accuracy():
    model = MLP([3, 3], zero=True)
    model.weights[0][:] = 10 * np.eye(3)
    x = np.eye(3)[[0, 1, 2, 2]]
    assert accuracy(model, x, [0, 1, 2, 2]) == 1.0


def test_uniform_tie_break():
    # ties resolve to class 0, so balanced labels give exactly 1/K
    probs = np.full((4000, 4), 0.25)
    labels = np.repeat(np.arange(4), 1000)
    assert accuracy_from_probs(probs, labels) == pytest.approx(0.25)
    model = MLP([2, 4], zero=True)
    assert accuracy(model, np.random.default_rng(0).normal(size=(4000, 2)), labels) == pytest.approx(0.25)


def test_single_sample():
    assert accuracy_from_probs([[0.2, 0.8]], [1]) == 1.0
    assert accuracy_from_probs([[0.2, 0.8]], [0]) == 0.0


def test_empty_split():
    with pytest.raises(InvalidInputError):
        accuracy(MLP([2, 2]), np.zeros((0, 2)), [])


def test_format_report():
    text = format_report({"precision": 0.5, "n": 3, "empty": True})
    assert text == "precision=0.500000\nn=3\nempty=1\n"
