"""Two-component 1-D Gaussian mixture fitted by EM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ctrack.errors import DegenerateInputError, InvalidInputError

LOW = "low"
HIGH = "high"


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 10
    tol: float = 1e-2
    reg_covar: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidInputError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol <= 0 or self.reg_covar <= 0:
            raise InvalidInputError("tol and reg_covar must be positive")


@dataclass(frozen=True)
class GMMParams:
    """Mixture parameters, components ordered by ascending mean."""

    means: tuple[float, float]
    variances: tuple[float, float]
    weights: tuple[float, float]
    n_iter: int = 0
    log_likelihoods: tuple[float, ...] = field(default=(), compare=False)

    def responsibilities(self, x) -> np.ndarray:
        """Posterior of each component, shape ``[len(x), 2]``."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        _, resp = _e_step(x, np.array(self.means), np.array(self.variances), np.array(self.weights))
        return resp


def minmax_normalize(data) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    lo, hi = x.min(initial=np.inf), x.max(initial=-np.inf)
    if not hi > lo:
        raise DegenerateInputError("cannot min-max normalize data with max == min")
    return (x - lo) / (hi - lo)


def _e_step(x, means, variances, weights):
    log_p = (
        np.log(weights)[None, :]
        - 0.5 * np.log(2 * np.pi * variances)[None, :]
        - 0.5 * (x[:, None] - means[None, :]) ** 2 / variances[None, :]
    )
    top = log_p.max(axis=1, keepdims=True)
    log_norm = top[:, 0] + np.log(np.exp(log_p - top).sum(axis=1))
    resp = np.exp(log_p - log_norm[:, None])
    return log_norm, resp


def fit_em(data, cfg: EmConfig = EmConfig(), seed=None) -> GMMParams:
    """Fit a two-component mixture to ``data``.

    Initialization is deterministic (means at the 10th/90th percentiles,
    equal weights, pooled variance), so ``seed`` is accepted for interface
    symmetry and unused. Iteration stops after ``cfg.max_iter`` EM steps or
    once the mean log-likelihood changes by less than ``cfg.tol`` relative
    to its previous value.
    """
    x = np.asarray(data, dtype=np.float64).ravel()
    if x.size < 2:
        raise InvalidInputError(f"need at least 2 points, got {x.size}")
    means = np.percentile(x, [10.0, 90.0])
    variances = np.full(2, max(x.var(), cfg.reg_covar))
    weights = np.full(2, 0.5)

    log_norm, resp = _e_step(x, means, variances, weights)
    trace = [float(log_norm.mean())]
    n_iter = 0
    for n_iter in range(1, cfg.max_iter + 1):
        nk = resp.sum(axis=0) + 10 * np.finfo(np.float64).eps
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = np.maximum(
            (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk, cfg.reg_covar
        )
        weights = nk / nk.sum()
        log_norm, resp = _e_step(x, means, variances, weights)
        trace.append(float(log_norm.mean()))
        prev, cur = trace[-2], trace[-1]
        if abs(cur - prev) < cfg.tol * max(abs(prev), np.finfo(np.float64).tiny):
            break

    order = np.argsort(means, kind="stable")
    means, variances, weights = means[order], variances[order], weights[order]
    return GMMParams(
        means=(float(means[0]), float(means[1])),
        variances=(float(variances[0]), float(variances[1])),
        weights=(float(weights[0]), float(weights[1])),
        n_iter=n_iter,
        log_likelihoods=tuple(trace),
    )


def posterior_component(params: GMMParams, x, which: str = LOW):
    """Responsibility of the low- or high-mean component at ``x``.

    Returns a float for scalar ``x`` and an array otherwise.
    """
    if which not in (LOW, HIGH):
        raise InvalidInputError(f"which must be {LOW!r} or {HIGH!r}, got {which!r}")
    resp = params.responsibilities(x)[:, 0 if which == LOW else 1]
    return float(resp[0]) if np.ndim(x) == 0 else resp
