"""Synthetic label-noise injectors.

Every injector returns ``(noisy_labels, clean_mask)`` where
``clean_mask[i]`` is True exactly when the label was left untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ctrack.errors import InvalidInputError

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"
INSTANCE = "instance"
KINDS = (SYMMETRIC, ASYMMETRIC, INSTANCE)


@dataclass
class NoiseSpec:
    kind: str
    rate: float
    seed: int = 0
    mapping: Mapping[int, int] | None = None
    group_size: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")


def _labels(labels) -> np.ndarray:
    return np.asarray(labels, dtype=np.int64).ravel()


def inject_symmetric(labels, rate: float, n_classes: int, seed=0):
    """Flip each label with probability ``rate`` to a uniformly drawn other class."""
    y = _labels(labels)
    if n_classes < 2:
        raise InvalidInputError("symmetric noise needs at least 2 classes")
    if not (0.0 <= rate < (n_classes - 1) / n_classes):
        raise InvalidInputError(
            f"rate must lie in [0, {(n_classes - 1) / n_classes:.4f}) to keep clean labels dominant"
        )
    rng = np.random.default_rng(seed)
    flip = rng.random(y.size) < rate
    # offset in 1..K-1 never maps a class onto itself
    offset = rng.integers(1, n_classes, size=y.size)
    noisy = np.where(flip, (y + offset) % n_classes, y)
    return noisy, noisy == y


def circular_mapping(n_classes: int, group_size: int) -> dict[int, int]:
    """Next class within consecutive groups of ``group_size`` classes, wrapping around."""
    if group_size < 2 or n_classes % group_size:
        raise InvalidInputError(
            f"group_size must be >= 2 and divide n_classes={n_classes}, got {group_size}"
        )
    return {c: (c // group_size) * group_size + (c + 1) % group_size for c in range(n_classes)}


def validate_mapping(mapping: Mapping[int, int]) -> dict[int, int]:
    out = {int(k): int(v) for k, v in mapping.items()}
    for src, dst in out.items():
        if src == dst:
            raise InvalidInputError(f"asymmetric mapping sends class {src} to itself")
        if src < 0 or dst < 0:
            raise InvalidInputError("class indices must be non-negative")
    return out


def inject_asymmetric(labels, rate: float, mapping: Mapping[int, int], seed=0):
    """Flip mapped classes ``c -> mapping[c]`` with probability ``rate``."""
    y = _labels(labels)
    if not (0.0 <= rate <= 1.0):
        raise InvalidInputError(f"rate must lie in [0, 1], got {rate}")
    table = validate_mapping(mapping)
    size = max([y.max(initial=-1) + 1, *(k + 1 for k in table), *(v + 1 for v in table.values())])
    lut = np.arange(size)
    mapped = np.zeros(size, dtype=bool)
    for src, dst in table.items():
        lut[src] = dst
        mapped[src] = True
    rng = np.random.default_rng(seed)
    flip = (rng.random(y.size) < rate) & mapped[y]
    noisy = np.where(flip, lut[y], y)
    return noisy, noisy == y


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def instance_flip_distribution(features, labels, n_classes: int, rng):
    """Per-sample off-label mass and target distribution from a random projection.

    Returns ``(mass, targets)``: ``mass[i]`` is the softmax mass of
    ``x_i W`` outside the annotated class, ``targets[i]`` that mass
    renormalized over the other classes.
    """
    x = np.asarray(features, dtype=np.float64)
    y = _labels(labels)
    mu, sd = x.mean(axis=0), x.std(axis=0)
    xs = (x - mu) / np.where(sd > 0, sd, 1.0)
    w = rng.standard_normal((x.shape[1], n_classes)) / np.sqrt(max(x.shape[1], 1))
    p = _softmax(xs @ w)
    p[np.arange(y.size), y] = 0.0
    mass = p.sum(axis=1)
    targets = p / np.where(mass > 0, mass, 1.0)[:, None]
    return mass, targets


def inject_instance(features, labels, rate: float, n_classes: int, seed=0, tol: float = 1e-6):
    """Feature-dependent noise, an approximation of part-dependent schemes.

    Flip probability is ``min(1, s * mass_i)`` with one uniform draw per
    sample fixed up front; the scale ``s`` is bisected so that the realized
    flip fraction matches ``rate`` as closely as the sample size permits.
    """
    y = _labels(labels)
    if not (0.0 <= rate < 0.5):
        raise InvalidInputError(f"instance noise rate must lie in [0, 0.5), got {rate}")
    if np.asarray(features).shape[0] != y.size:
        raise InvalidInputError("features and labels disagree on the number of samples")
    if rate == 0.0 or y.size == 0:
        return y.copy(), np.ones(y.size, dtype=bool)
    rng = np.random.default_rng(seed)
    mass, targets = instance_flip_distribution(features, y, n_classes, rng)
    u = rng.random(y.size)
    pick = rng.random(y.size)

    def realized(scale):
        return np.mean(u < np.minimum(1.0, scale * mass))

    lo, hi = 0.0, 1.0
    while realized(hi) < rate and hi < 1e12:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if realized(mid) < rate:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    flip = u < np.minimum(1.0, hi * mass)
    cdf = np.cumsum(targets, axis=1)
    choice = np.minimum((pick[:, None] >= cdf).sum(axis=1), n_classes - 1)
    # guard against rounding in the cdf landing on the annotated class
    choice = np.where(choice == y, (y + 1) % n_classes, choice)
    noisy = np.where(flip, choice, y)
    return noisy, noisy == y


def apply_noise(spec: NoiseSpec, labels, n_classes: int, features=None):
    if spec.kind == SYMMETRIC:
        return inject_symmetric(labels, spec.rate, n_classes, spec.seed)
    if spec.kind == ASYMMETRIC:
        mapping = spec.mapping
        if mapping is None:
            mapping = circular_mapping(n_classes, spec.group_size or n_classes)
        return inject_asymmetric(labels, spec.rate, mapping, spec.seed)
    if features is None:
        raise InvalidInputError("instance-dependent noise needs features")
    return inject_instance(features, labels, spec.rate, n_classes, spec.seed)
