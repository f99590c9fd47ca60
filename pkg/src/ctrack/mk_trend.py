"""Mann-Kendall trend test, batch and streaming.

The variance of S ignores tied ranks: ties contribute zero to S but still
count toward the series length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ctrack.errors import InvalidInputError


@dataclass(frozen=True)
class MKState:
    """Running statistic S over the first ``n`` observations of a series."""

    s_stat: int = 0
    n: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise InvalidInputError(f"n must be non-negative, got {self.n}")
        if abs(self.s_stat) > self.n * (self.n - 1) // 2:
            raise InvalidInputError(f"|S|={abs(self.s_stat)} exceeds n(n-1)/2 for n={self.n}")


@dataclass(frozen=True)
class MKResult:
    s_stat: int
    variance: float
    z: float
    n: int


def mk_variance(n):
    """Var(S) under the no-trend null, without tie correction."""
    return n * (n - 1) * (2 * n + 5) / 18.0


def mk_z(s_stat, n):
    """Standardized statistic with the +-1 continuity correction.

    Works element-wise on arrays of S for a common or broadcast ``n``.
    """
    if np.isscalar(s_stat) and np.isscalar(n):
        if n < 2:
            raise InvalidInputError(f"Z needs at least 2 observations, got n={n}")
        if s_stat == 0:
            return 0.0
        sd = math.sqrt(mk_variance(n))
        return (s_stat - 1) / sd if s_stat > 0 else (s_stat + 1) / sd
    s = np.asarray(s_stat, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 2):
        raise InvalidInputError("Z needs at least 2 observations per series")
    sd = np.sqrt(mk_variance(n))
    return np.where(s > 0, (s - 1) / sd, np.where(s < 0, (s + 1) / sd, 0.0))


def mk_batch(series: Sequence[float]) -> MKResult:
    """Compute S, Var(S) and Z over a whole series by pairwise comparison."""
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise InvalidInputError(f"series must have length >= 2, got {n}")
    # sign of x_j - x_k for all j > k
    diff = np.sign(x[:, None] - x[None, :])
    s = int(np.tril(diff, k=-1).sum())
    return MKResult(s_stat=s, variance=mk_variance(n), z=mk_z(s, n), n=n)


def mk_delta(history, new_value):
    """Change in S from appending ``new_value`` after ``history``."""
    h = np.asarray(history)
    return int(np.count_nonzero(new_value > h)) - int(np.count_nonzero(new_value < h))


def mk_update(state: MKState, history: Sequence[float], new_value: float) -> MKState:
    """Append one observation to a running Mann-Kendall statistic.

    ``history`` must hold the ``state.n`` previous observations in order.
    """
    if len(history) != state.n:
        raise InvalidInputError(
            f"history length {len(history)} does not match state.n={state.n}"
        )
    return MKState(s_stat=state.s_stat + mk_delta(history, new_value), n=state.n + 1)


def z_from_state(state: MKState) -> float:
    return mk_z(state.s_stat, state.n)


# Rational approximation to the inverse normal CDF (Acklam), followed by one
# Halley step against erfc.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _tail(p):
    q = math.sqrt(-2.0 * math.log(p))
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF."""
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise InvalidInputError(f"p must lie in (0, 1), got {p}")
    if p < _P_LOW:
        x = _tail(p)
    elif p > 1.0 - _P_LOW:
        x = -_tail(1.0 - p)
    else:
        q = p - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x = num / den
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def mk_threshold(alpha: float) -> float:
    """Upper-tail critical value Z_{1-alpha}."""
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    return normal_quantile(1.0 - alpha)
