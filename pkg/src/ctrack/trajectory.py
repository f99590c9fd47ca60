"""Per-sample confidence-gap trajectories with streaming Mann-Kendall counters."""

from __future__ import annotations

import numpy as np

from ctrack.errors import InsufficientHistoryError, InvalidInputError, OrderingError
from ctrack.mk_trend import mk_batch, mk_z

SIMPLEX_TOL = 1e-4


def check_simplex(probs: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise InvalidInputError(f"probabilities must be a 2-D matrix, got shape {probs.shape}")
    sums = probs.sum(axis=1, dtype=np.float64)
    bad = np.flatnonzero(~(np.abs(sums - 1.0) <= tol) | np.any(probs < -tol, axis=1))
    if bad.size:
        raise InvalidInputError(
            f"{bad.size} probability row(s) off the simplex, first at batch row {bad[0]} "
            f"(sum={sums[bad[0]]:.6f})"
        )


def check_ids(sample_ids, n_samples: int) -> np.ndarray:
    ids = np.asarray(sample_ids, dtype=np.int64).ravel()
    if ids.size and (ids.min() < 0 or ids.max() >= n_samples):
        raise IndexError(f"sample id out of range [0, {n_samples})")
    if np.unique(ids).size != ids.size:
        raise InvalidInputError("sample_ids must be unique within one call")
    return ids


class GapHistory:
    """Confidence gaps ``p[label] - p[c]`` for every sample, epoch and class.

    Gaps are stored as float32 in an ``[N, T, K]`` buffer allocated up front;
    ``s_stats[i, c]`` is the Mann-Kendall S of the series ``gaps[i, :t_i, c]``,
    updated incrementally as each epoch arrives.
    """

    def __init__(self, labels, n_classes: int, capacity_epochs: int):
        labels = np.asarray(labels, dtype=np.int64).ravel()
        if n_classes < 2:
            raise InvalidInputError(f"need at least 2 classes, got {n_classes}")
        if capacity_epochs < 1:
            raise InvalidInputError(f"capacity_epochs must be positive, got {capacity_epochs}")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise InvalidInputError(f"labels must lie in [0, {n_classes})")
        self.labels = labels
        self.n_samples = labels.size
        self.n_classes = n_classes
        self.capacity_epochs = capacity_epochs
        self.gaps = np.zeros((self.n_samples, capacity_epochs, n_classes), dtype=np.float32)
        self.s_stats = np.zeros((self.n_samples, n_classes), dtype=np.int64)
        self.counts = np.zeros(self.n_samples, dtype=np.int64)

    @property
    def epochs_recorded(self) -> int:
        """Number of epochs every sample has been recorded for."""
        return int(self.counts.min()) if self.n_samples else 0

    def record_epoch(self, epoch: int, probs, sample_ids) -> None:
        ids = check_ids(sample_ids, self.n_samples)
        probs = np.asarray(probs)
        if probs.shape != (ids.size, self.n_classes):
            raise InvalidInputError(
                f"probs shape {probs.shape} does not match ({ids.size}, {self.n_classes})"
            )
        check_simplex(probs)
        stale = ids[self.counts[ids] != epoch]
        if stale.size:
            i = stale[0]
            raise OrderingError(
                f"sample {i} has {self.counts[i]} recorded epochs, cannot record epoch {epoch}"
            )
        if epoch >= self.capacity_epochs:
            raise OrderingError(
                f"epoch {epoch} exceeds store capacity of {self.capacity_epochs} epochs"
            )
        p = probs.astype(np.float32)
        g = p[np.arange(ids.size), self.labels[ids]][:, None] - p  # [B, K]
        prev = self.gaps[ids, :epoch, :]  # [B, e, K]
        delta = (g[:, None, :] > prev).sum(axis=1) - (g[:, None, :] < prev).sum(axis=1)
        self.gaps[ids, epoch, :] = g
        self.s_stats[ids] += delta
        self.counts[ids] += 1

    def series(self, sample: int, cls: int) -> np.ndarray:
        return self.gaps[sample, : self.counts[sample], cls]

    def z_scores(self) -> np.ndarray:
        """Z for every (sample, class) series; the own-label column is 0."""
        if self.n_samples and self.counts.min() < 2:
            raise InsufficientHistoryError("every sample needs >= 2 recorded epochs")
        return mk_z(self.s_stats, self.counts[:, None])

    def z_min(self, sample: int) -> float:
        n = int(self.counts[sample])
        if n < 2:
            raise InsufficientHistoryError(f"sample {sample} has only {n} recorded epoch(s)")
        z = mk_z(self.s_stats[sample], np.full(self.n_classes, n))
        return float(np.delete(z, self.labels[sample]).min())

    def snapshot_z(self) -> np.ndarray:
        """Vector of ``z_min`` over all samples."""
        z = self.z_scores()
        z[np.arange(self.n_samples), self.labels] = np.inf
        return z.min(axis=1)

    def recompute_s(self) -> np.ndarray:
        """Batch S over stored gaps, for consistency checks."""
        out = np.zeros_like(self.s_stats)
        for i in range(self.n_samples):
            if self.counts[i] < 2:
                continue
            for c in range(self.n_classes):
                out[i, c] = mk_batch(self.series(i, c)).s_stat
        return out

    @classmethod
    def from_predlog(cls, log, capacity_epochs: int | None = None, n_epochs: int | None = None):
        """Rebuild a store by replaying a prediction log's epochs in order."""
        n_epochs = log.n_epochs if n_epochs is None else n_epochs
        store = cls(log.labels, log.n_classes, capacity_epochs or max(log.n_epochs, 1))
        ids = np.arange(log.n_samples)
        for t in range(n_epochs):
            store.record_epoch(t, log.probs[t], ids)
        return store
