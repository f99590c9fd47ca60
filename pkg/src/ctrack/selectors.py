"""Sample selectors: confidence tracking, small-loss GMM, AUM, DIST and FINE.

Each selector returns a boolean mask over sample indices where True marks
a sample kept for training.
"""

from __future__ import annotations

import math

import numpy as np

from ctrack.errors import DegenerateInputError, InvalidInputError, OrderingError
from ctrack.gmm1d import HIGH, LOW, EmConfig, fit_em, minmax_normalize, posterior_component
from ctrack.mk_trend import mk_threshold
from ctrack.trajectory import GapHistory, check_ids, check_simplex

GMM_TAU_GRID = (0.5, 0.7, 0.9, 0.95, 0.99)
AUM_K_GRID = (0.00, 0.05, 0.10)
DIST_LAMBDA_GRID = (0.90, 0.95, 0.99)
FINE_EM = EmConfig(max_iter=10, tol=1e-3, reg_covar=1e-6)


def ct_select(store: GapHistory, alpha: float = 0.01, z: np.ndarray | None = None) -> np.ndarray:
    """Keep samples whose every off-label gap series trends up at level ``alpha``.

    ``z`` may carry a precomputed ``store.snapshot_z()``.
    """
    threshold = mk_threshold(alpha)
    if z is None:
        z = store.snapshot_z()
    return z > threshold


def gmm_select(losses, tau: float = 0.5, em_cfg: EmConfig = EmConfig(), return_posterior=False):
    """Small-loss selection: posterior of the low-mean loss component above ``tau``."""
    x = np.asarray(losses, dtype=np.float64).ravel()
    if x.size < 2:
        raise InvalidInputError("GMM selection needs at least 2 samples")
    if not (0.0 < tau < 1.0):
        raise InvalidInputError(f"tau must lie in (0, 1), got {tau}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("losses must be finite")
    try:
        normed = minmax_normalize(x)
    except DegenerateInputError:
        raise DegenerateInputError("all losses are equal; the mixture fit is undefined") from None
    params = fit_em(normed, em_cfg)
    post = posterior_component(params, normed, LOW)
    mask = post > tau
    return (mask, post) if return_posterior else mask


class AumState:
    """Running sum of logit margins ``z[label] - max_{c != label} z[c]``."""

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=np.int64).ravel()
        self.margin_sums = np.zeros(self.labels.size, dtype=np.float64)
        self.counts = np.zeros(self.labels.size, dtype=np.int64)

    @property
    def epochs_counted(self) -> int:
        return int(self.counts.min()) if self.counts.size else 0

    @staticmethod
    def margins(logits, labels) -> np.ndarray:
        z = np.asarray(logits, dtype=np.float64)
        rows = np.arange(z.shape[0])
        own = z[rows, labels]
        other = z.copy()
        other[rows, labels] = -np.inf
        return own - other.max(axis=1)

    def update(self, logits, sample_ids, epoch: int | None = None) -> "AumState":
        ids = check_ids(sample_ids, self.labels.size)
        logits = np.asarray(logits)
        if logits.shape[0] != ids.size or logits.ndim != 2:
            raise InvalidInputError(f"logits shape {logits.shape} does not match {ids.size} ids")
        if epoch is not None and np.any(self.counts[ids] != epoch):
            raise OrderingError(f"AUM update for epoch {epoch} out of sequence")
        self.margin_sums[ids] += self.margins(logits, self.labels[ids])
        self.counts[ids] += 1
        return self

    def average(self) -> np.ndarray:
        if self.counts.size and self.counts.min() < 1:
            raise InvalidInputError("AUM needs at least one counted epoch per sample")
        return self.margin_sums / self.counts


def aum_select(state_or_margins, noise_rate: float, k_slack: float = 0.0) -> np.ndarray:
    """Keep the top ``ceil((1 - noise_rate - k_slack) * N)`` average margins.

    Accepts an :class:`AumState` or a vector of average margins. Ties go to
    the lower sample index.
    """
    if isinstance(state_or_margins, AumState):
        avg = state_or_margins.average()
    else:
        avg = np.asarray(state_or_margins, dtype=np.float64).ravel()
    if not (0.0 <= noise_rate < 1.0):
        raise InvalidInputError(f"noise_rate must lie in [0, 1), got {noise_rate}")
    keep = 1.0 - noise_rate - k_slack
    if not (0.0 < keep <= 1.0):
        raise InvalidInputError(f"keep fraction 1 - noise_rate - k_slack = {keep:.4f} is not in (0, 1]")
    n_keep = min(avg.size, math.ceil(round(keep * avg.size, 9)))
    order = np.lexsort((np.arange(avg.size), -avg))
    mask = np.zeros(avg.size, dtype=bool)
    mask[order[:n_keep]] = True
    return mask


class DistState:
    """Per-sample dynamic confidence thresholds, momentum-averaged max confidence."""

    def __init__(self, labels, n_classes: int, momentum: float = 0.9, init: float | None = None):
        if not (0.0 <= momentum <= 1.0):
            raise InvalidInputError(f"momentum must lie in [0, 1], got {momentum}")
        self.labels = np.asarray(labels, dtype=np.int64).ravel()
        self.momentum = momentum
        self.thresholds = np.full(self.labels.size, 1.0 / n_classes if init is None else init)
        self.selected = np.ones(self.labels.size, dtype=bool)

    def step(self, probs, sample_ids):
        """Select with the current thresholds, then fold in the new max confidence.

        Returns the batch mask; ``self.selected`` keeps the latest decision
        for every sample.
        """
        ids = check_ids(sample_ids, self.labels.size)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape[0] != ids.size:
            raise InvalidInputError(f"probs has {probs.shape[0]} rows for {ids.size} ids")
        check_simplex(probs)
        own = probs[np.arange(ids.size), self.labels[ids]]
        batch_mask = own >= self.thresholds[ids]
        lam = self.momentum
        self.thresholds[ids] = lam * self.thresholds[ids] + (1.0 - lam) * probs.max(axis=1)
        self.selected[ids] = batch_mask
        return self, batch_mask


def dist_step(state: DistState, probs, labels, sample_ids):
    """Functional wrapper around :meth:`DistState.step`; ``labels`` must match the state."""
    ids = np.asarray(sample_ids, dtype=np.int64)
    if labels is not None and not np.array_equal(np.asarray(labels), state.labels[ids]):
        raise InvalidInputError("labels disagree with the DIST state")
    return state.step(probs, ids)


def power_iteration(mat, n_iter: int = 100, rtol: float = 1e-8, seed=0) -> np.ndarray:
    """Dominant eigenvector of a symmetric PSD matrix, unit norm."""
    mat = np.asarray(mat, dtype=np.float64)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(mat.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(n_iter):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v
        w /= norm
        if np.linalg.norm(w - v) < rtol:
            v = w
            break
        v = w
    return v


def fine_scores(features, labels) -> np.ndarray:
    """Squared cosine between each feature and its class's principal Gram eigenvector."""
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if f.ndim != 2 or f.shape[0] != y.size or f.shape[1] < 1:
        raise InvalidInputError(f"features of shape {f.shape} do not match {y.size} labels")
    scores = np.zeros(y.size)
    norms = np.linalg.norm(f, axis=1)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if idx.size < 2:
            raise DegenerateInputError(f"class {c} has fewer than 2 samples")
        fc = f[idx]
        u = power_iteration(fc.T @ fc, seed=int(c))
        proj = fc @ u
        denom = np.where(norms[idx] > 0, norms[idx], 1.0)
        scores[idx] = (proj / denom) ** 2
    return scores


def fine_select(features, labels, tau: float = 0.5, em_cfg: EmConfig = FINE_EM, return_posterior=False):
    """Keep samples whose alignment score sits in the high-mean mixture component."""
    scores = fine_scores(features, labels)
    if np.ptp(scores) <= 1e-9:
        # no spread to split: decide on the score itself
        post = (scores > 0.5).astype(np.float64)
    else:
        params = fit_em(scores, em_cfg)
        post = posterior_component(params, scores, HIGH)
    mask = post > tau
    return (mask, post) if return_posterior else mask


def union(masks) -> np.ndarray:
    masks = [np.asarray(m, dtype=bool).ravel() for m in masks]
    if not masks:
        raise InvalidInputError("union of zero masks is undefined")
    n = masks[0].size
    if any(m.size != n for m in masks):
        raise InvalidInputError(f"mask lengths differ: {[m.size for m in masks]}")
    return np.logical_or.reduce(masks)
