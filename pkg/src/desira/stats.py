"""Numerical kernels: normal quantiles, empirical CVaR, Gini, seeded streams."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Acklam's rational approximation coefficients (central and tail regions).
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_cdf(x: float) -> float:
    """Standard normal CDF evaluated through ``erfc`` (accurate in both tails)."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )


def inv_norm_cdf(p: float) -> float:
    """Inverse of the standard normal CDF.

    A rational approximation (relative error ~1e-9) is polished with Halley
    steps against :func:`norm_cdf`, so ``|norm_cdf(result) - p|`` sits at
    floating-point round-off.

    Raises
    ------
    ValueError
        If ``p`` is not strictly inside (0, 1).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    # Work in the lower half so the residual is computed without cancellation.
    if p > 0.5:
        return -inv_norm_cdf(1.0 - p) if 1.0 - p > 0.0 else math.inf
    x = _acklam(p)
    for _ in range(2):
        err = norm_cdf(x) - p
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        if pdf == 0.0:
            break
        u = err / pdf
        x -= u / (1.0 + 0.5 * x * u)
    return x


def cvar_weights(m: int, alpha: float) -> np.ndarray:
    """Weights on descending-sorted samples that reproduce the RU minimum.

    ``cvar = weights @ sorted_desc(samples)``. The first ``floor(alpha*m)``
    samples get ``1/(alpha*m)``, the next one gets the fractional remainder.
    """
    if m < 1:
        raise ValueError("need at least one sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    k = alpha * m
    w = np.zeros(m)
    full = min(int(math.floor(k + 1e-12)), m)
    w[:full] = 1.0
    frac = k - full
    if full < m and frac > 1e-12:
        w[full] = frac
    return w / k


def cvar_empirical(samples, alpha: float) -> float:
    """Empirical CVaR at tail mass ``alpha`` (mean of the worst alpha-fraction).

    Equals ``min_eta eta + sum(max(0, s - eta)) / (M * alpha)``.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("cvar_empirical needs a nonempty sample")
    s_desc = np.sort(s)[::-1]
    return float(cvar_weights(s.size, alpha) @ s_desc)


def gini(values) -> float:
    """Gini coefficient ``sum_ij |x_i - x_j| / (2 n^2 mean)``; 0 for all-zero input."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        return 0.0
    if np.any(x < 0):
        raise ValueError("gini requires nonnegative values")
    total = x.sum()
    if total <= 0.0:
        return 0.0
    # Sorted form of the pairwise sum: sum_i (2i - n - 1) x_(i).
    xs = np.sort(x)
    n = xs.size
    idx = np.arange(1, n + 1)
    return float(np.sum((2 * idx - n - 1) * xs) / (n * total))


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by the counter-based Philox-4x64 generator with the 128-bit key
    set to ``(seed, stream_id)``, so substreams are independent and the
    sequence does not depend on platform or on how many other streams exist.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)
