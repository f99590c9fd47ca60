"""Small numpy MLP classifier with explicit backprop and SGD with momentum.

The per-batch loss follows the masked form used during sample selection:
``L = (1/|b|) * sum_{i in b} mask_i * CE_i``. Masked samples stay in the
denominator unless ``renormalize_mask`` is set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ctrack.errors import InvalidInputError, NumericFailureError

log = logging.getLogger(__name__)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class MLP:
    """Fully connected ReLU network with a softmax output.

    ``weights[l]`` has shape ``[in, out]``. With no hidden layers the model
    is multinomial logistic regression and its features are the inputs.
    ``zero_output`` zeroes the last layer so the untrained model predicts
    the uniform distribution.
    """

    def __init__(self, sizes, seed=0, zero=False, zero_output=False):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise InvalidInputError(f"invalid layer sizes {sizes}")
        self.sizes = sizes
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if zero:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        if zero_output:
            self.weights[-1][:] = 0.0

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.sizes = list(self.sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise InvalidInputError(
                f"input has shape {x.shape}, model expects [B, {self.n_inputs}]"
            )
        return x

    def _forward(self, x):
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if layer == last else np.maximum(z, 0.0)
            acts.append(h)
        return pre, acts

    def forward(self, x):
        """Return ``(logits, probs, features)``; features are the last hidden activations."""
        x = self._check(x)
        _, acts = self._forward(x)
        logits = acts[-1]
        return logits, softmax(logits), acts[-2]

    def backward(self, x, dlogits, cache=None):
        """Gradients of ``sum(dlogits * logits)`` w.r.t. parameters, in ``params()`` order."""
        pre, acts = cache if cache is not None else self._forward(self._check(x))
        grads = [None] * (2 * len(self.weights))
        delta = dlogits
        for layer in range(len(self.weights) - 1, -1, -1):
            grads[2 * layer] = acts[layer].T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer:
                delta = (delta @ self.weights[layer].T) * (pre[layer - 1] > 0)
        return grads

    def jvp(self, x, direction):
        """Directional derivative of the logits along a parameter-space ``direction``."""
        x = self._check(x)
        h, dh = x, np.zeros_like(x)
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            dw, db = direction[2 * layer], direction[2 * layer + 1]
            z = h @ w + b
            dz = dh @ w + h @ dw + db
            if layer == last:
                h, dh = z, dz
            else:
                active = z > 0
                h, dh = np.where(active, z, 0.0), np.where(active, dz, 0.0)
        return dh

    def loss_and_grads(self, x, y, weights=None, denom=None):
        """Weighted CE summed over the batch divided by ``denom`` (default: batch size)."""
        x = self._check(x)
        y = np.asarray(y, dtype=np.int64)
        pre, acts = self._forward(x)
        logits = acts[-1]
        lsm = log_softmax(logits)
        rows = np.arange(y.size)
        per_sample = -lsm[rows, y]
        w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=np.float64)
        denom = y.size if denom is None else denom
        denom = max(denom, 1)
        loss = float((w * per_sample).sum() / denom)
        dlogits = np.exp(lsm)
        dlogits[rows, y] -= 1.0
        dlogits *= (w / denom)[:, None]
        grads = self.backward(x, dlogits, cache=(pre, acts))
        return loss, grads, per_sample, logits, acts[-2]


def ce_losses(probs, labels) -> np.ndarray:
    """Per-sample cross-entropy from probability rows."""
    p = np.asarray(probs, dtype=np.float64)
    return -np.log(np.maximum(p[np.arange(p.shape[0]), labels], np.finfo(np.float64).tiny))


@dataclass
class OptConfig:
    lr_schedule: list = field(default_factory=lambda: [(0, 0.02), (80, 0.002)])
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 128
    epochs: int = 150
    warmup_epochs: int = 30
    seed: int = 0
    renormalize_mask: bool = False

    def __post_init__(self):
        steps = sorted((int(e), float(r)) for e, r in self.lr_schedule)
        if not steps or any(r <= 0 for _, r in steps):
            raise InvalidInputError("learning-rate schedule must be non-empty with positive rates")
        self.lr_schedule = steps
        if self.warmup_epochs > self.epochs or self.warmup_epochs < 0:
            raise InvalidInputError("warmup_epochs must lie in [0, epochs]")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be positive")

    def lr_at(self, epoch: int) -> float:
        rate = self.lr_schedule[0][1]
        for start, r in self.lr_schedule:
            if epoch >= start:
                rate = r
        return rate


@dataclass
class EpochStats:
    losses: np.ndarray
    probs: np.ndarray
    logits: np.ndarray
    features: np.ndarray
    mean_loss: float = 0.0
    alignment: np.ndarray | None = None


class SGD:
    """Heavy-ball SGD with coupled L2 weight decay: ``v = mu*v + g + wd*theta``."""

    def __init__(self, model: MLP, momentum=0.9, weight_decay=0.0):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in model.params()]

    def step(self, grads, lr):
        for p, g, v in zip(self.model.params(), grads, self.velocity):
            d = g + self.weight_decay * p if self.weight_decay else g
            v *= self.momentum
            v += d
            p -= lr * v


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def class_gradient_alignment(model: MLP, probe_x, direction) -> np.ndarray:
    """``<grad CE(c, x_j), direction>`` for every probe sample ``j`` and class ``c``.

    Uses ``grad CE(c, x) = J^T (p - e_c)`` so the whole ``[P, K]`` table
    costs one forward-mode pass.
    """
    probe_x = np.asarray(probe_x, dtype=np.float64)
    _, probs, _ = model.forward(probe_x)
    jd = model.jvp(probe_x, direction)  # [P, K]
    base = (probs * jd).sum(axis=1, keepdims=True)
    return base - jd


def class_gradient_alignment_explicit(model: MLP, probe_x, direction) -> np.ndarray:
    """Reference for :func:`class_gradient_alignment` via one backward pass per (j, c)."""
    probe_x = np.asarray(probe_x, dtype=np.float64)
    out = np.zeros((probe_x.shape[0], model.n_classes))
    for j in range(probe_x.shape[0]):
        for c in range(model.n_classes):
            _, g, *_ = model.loss_and_grads(probe_x[j : j + 1], [c])
            out[j, c] = sum(float((a * b).sum()) for a, b in zip(g, direction))
    return out


def alignment_margin(alignment, labels) -> np.ndarray:
    """Per class ``c``: mean A_y minus mean A_c over probe samples with ``y != c``.

    All entries positive means the batch gradients favored every sample's own
    label over each other class.
    """
    a = np.asarray(alignment, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    own = a[np.arange(y.size), y]
    out = np.full(a.shape[1], np.nan)
    for c in range(a.shape[1]):
        other = y != c
        if other.any():
            out[c] = own[other].mean() - a[other, c].mean()
    return out


def grad_alignment_probe(model: MLP, probe_x, batch_x, batch_y, batch_mask=None) -> np.ndarray:
    """Alignment of each probe sample's per-class CE gradient with one batch gradient."""
    _, g, *_ = model.loss_and_grads(batch_x, batch_y, weights=batch_mask)
    return class_gradient_alignment(model, probe_x, g)


class Trainer:
    """Runs masked minibatch epochs and reports per-sample training-pass statistics."""

    def __init__(self, model: MLP, opt: OptConfig):
        self.model = model
        self.opt = opt
        self.sgd = SGD(model, opt.momentum, opt.weight_decay)

    def train_epoch(self, x, y, mask, epoch: int, probe_x=None) -> EpochStats:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        n = y.size
        if mask.size != n or x.shape[0] != n:
            raise InvalidInputError(f"mask/features/labels lengths disagree ({mask.size}, {x.shape[0]}, {n})")
        k = self.model.n_classes
        losses = np.empty(n)
        probs = np.empty((n, k))
        logits = np.empty((n, k))
        feats = np.empty((n, self.model.sizes[-2]))
        align = np.zeros((0 if probe_x is None else len(probe_x), k))
        lr = self.opt.lr_at(epoch)
        order = epoch_permutation(self.opt.seed, epoch, n)
        bs = self.opt.batch_size
        n_batches = 0
        total = 0.0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start : start + bs]
            w = mask[idx].astype(np.float64)
            denom = w.sum() if self.opt.renormalize_mask else idx.size
            loss, grads, per_sample, z, h = self.model.loss_and_grads(x[idx], y[idx], w, denom)
            if not (np.isfinite(loss) and np.isfinite(z).all()):
                raise NumericFailureError(f"non-finite loss at epoch {epoch}, batch {b}")
            if probe_x is not None:
                align += class_gradient_alignment(self.model, probe_x, grads)
            losses[idx] = per_sample
            logits[idx] = z
            probs[idx] = softmax(z)
            feats[idx] = h
            self.sgd.step(grads, lr)
            total += loss
            n_batches += 1
        stats = EpochStats(losses=losses, probs=probs, logits=logits, features=feats,
                           mean_loss=total / max(n_batches, 1))
        if probe_x is not None:
            stats.alignment = align / max(n_batches, 1)
        return stats


def gradient_check(model: MLP, x, y, n_params: int = 20, step: float = 1e-4, seed=0) -> float:
    """Max relative error between backprop and central differences on random coordinates."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    _, grads, *_ = model.loss_and_grads(x, y)
    rng = np.random.default_rng(seed)
    params = model.params()
    worst = 0.0
    for _ in range(n_params):
        which = int(rng.integers(len(params)))
        p = params[which]
        pos = tuple(int(rng.integers(d)) for d in p.shape)
        old = p[pos]
        p[pos] = old + step
        up = model.loss_and_grads(x, y)[0]
        p[pos] = old - step
        down = model.loss_and_grads(x, y)[0]
        p[pos] = old
        numeric = (up - down) / (2 * step)
        analytic = grads[which][pos]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7)
        worst = max(worst, err)
    return worst
