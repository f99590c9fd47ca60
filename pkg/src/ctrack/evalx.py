"""Selection precision/recall/F1 and classifier accuracy."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ctrack.errors import InvalidInputError


@dataclass(frozen=True)
class SelectionReport:
    precision: float
    recall: float
    f1: float
    selected_count: int
    clean_count: int
    empty_selection: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def f1_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


def selection_metrics(mask, clean_mask) -> SelectionReport:
    """Precision and recall of a selection against the true clean set.

    An empty selection has precision 1.0 by convention and sets
    ``empty_selection``.
    """
    m = np.asarray(mask, dtype=bool).ravel()
    c = np.asarray(clean_mask, dtype=bool).ravel()
    if m.size != c.size:
        raise InvalidInputError(f"mask length {m.size} != clean mask length {c.size}")
    hit = int(np.count_nonzero(m & c))
    n_sel = int(np.count_nonzero(m))
    n_clean = int(np.count_nonzero(c))
    precision = hit / n_sel if n_sel else 1.0
    recall = hit / n_clean if n_clean else 1.0
    return SelectionReport(
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        selected_count=n_sel,
        clean_count=n_clean,
        empty_selection=n_sel == 0,
    )


def accuracy_from_probs(probs, labels) -> float:
    probs = np.asarray(probs)
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise InvalidInputError("accuracy of an empty split is undefined")
    # np.argmax returns the first maximal index
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def accuracy(model, features, clean_labels) -> float:
    """Top-1 accuracy of ``model`` against clean labels."""
    if np.asarray(clean_labels).size == 0:
        raise InvalidInputError("accuracy of an empty split is undefined")
    _, probs, _ = model.forward(features)
    return accuracy_from_probs(probs, clean_labels)


def format_report(values: dict) -> str:
    """``key=value`` lines, floats at 6 decimals."""
    lines = []
    for key, val in values.items():
        if isinstance(val, (bool, np.bool_)):
            val = int(val)
        if isinstance(val, float):
            val = f"{val:.6f}"
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"
