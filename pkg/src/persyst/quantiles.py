"""Fixed-grid quantile summaries: exact at the leaves, estimated when merged.

A summary carries the count, the extrema and the nine interior deciles of a
set of per-core values. Exact summaries are computed from the sorted sample
with linear interpolation on ``(n - 1) * p``. Summaries of disjoint subsets
cannot in general be combined exactly, so :func:`merge_estimate` treats each
summary as an 11-point piecewise-linear CDF, mixes them by count and inverts
the mixture.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "LEVELS",
    "QuantileSummary",
    "EmptyInput",
    "NonFiniteInput",
    "exact_summary",
    "interpolated_quantiles",
    "cdf_eval",
    "merge_estimate",
]

LEVELS: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
_SUPPORT_P: tuple[float, ...] = (0.0,) + LEVELS + (1.0,)


class EmptyInput(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class QuantileSummary:
    count: int
    min: float
    deciles: tuple[float, ...]
    max: float

    def __post_init__(self):
        object.__setattr__(self, "deciles", tuple(float(d) for d in self.deciles))
        if len(self.deciles) != len(LEVELS):
            raise ValueError(f"expected {len(LEVELS)} deciles, got {len(self.deciles)}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        pts = self.support
        if not all(math.isfinite(v) for v in pts):
            raise NonFiniteInput("summary holds non-finite values")
        if any(a > b for a, b in zip(pts, pts[1:])):
            raise ValueError(f"summary is not monotone: {pts}")

    @property
    def support(self) -> tuple[float, ...]:
        """The 11 CDF support values: min, deciles, max."""
        return (self.min,) + self.deciles + (self.max,)

    @property
    def median(self) -> float:
        return self.deciles[4]

    @classmethod
    def constant(cls, value: float, count: int = 1) -> "QuantileSummary":
        return cls(count, value, (value,) * len(LEVELS), value)


def interpolated_quantiles(sorted_values: np.ndarray, levels: Sequence[float]) -> np.ndarray:
    """Quantiles of an ascending sample by linear interpolation at ``(n-1)*p``."""
    n = sorted_values.shape[0]
    h = (n - 1) * np.asarray(levels, dtype=float)
    lo = np.floor(h).astype(np.intp)
    frac = h - lo
    hi = np.minimum(lo + 1, n - 1)
    a = sorted_values[lo]
    return a + frac * (sorted_values[hi] - a)


def exact_summary(values: Iterable[float]) -> QuantileSummary:
    x = np.asarray(values if isinstance(values, np.ndarray) else list(values), dtype=float)
    x = x.ravel()
    if x.size == 0:
        raise EmptyInput("cannot summarize an empty sample")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("sample contains NaN or infinite values")
    x = np.sort(x)
    lo, hi = float(x[0]), float(x[-1])
    d = interpolated_quantiles(x, LEVELS)
    # rounding in the interpolation may step past a neighbour by an ulp
    d = np.clip(np.maximum.accumulate(d), lo, hi)
    return QuantileSummary(int(x.size), lo, tuple(d.tolist()), hi)


def cdf_eval(summary: QuantileSummary, v: float) -> float:
    """Piecewise-linear CDF through the summary's support points.

    Where several support values coincide the CDF jumps to the largest of
    their probabilities at that value.
    """
    return _cdf_at(summary.support, v)


def _cdf_at(xs: Sequence[float], v: float) -> float:
    if v < xs[0]:
        return 0.0
    if v >= xs[-1]:
        return 1.0
    k = bisect_right(xs, v)
    if xs[k - 1] == v:
        return _SUPPORT_P[k - 1]
    return _lerp(xs, k, v)


def _cdf_left(xs: Sequence[float], v: float) -> float:
    """Left limit of the CDF at ``v``."""
    if v <= xs[0]:
        return 0.0
    if v > xs[-1]:
        return 1.0
    k = bisect_left(xs, v)
    if xs[k] == v:
        return _SUPPORT_P[k]
    return _lerp(xs, k, v)


def _lerp(xs, k, v):
    x0, x1 = xs[k - 1], xs[k]
    p0, p1 = _SUPPORT_P[k - 1], _SUPPORT_P[k]
    return p0 + (p1 - p0) * (v - x0) / (x1 - x0)


def _sort_key(s: QuantileSummary):
    return (s.support, s.count)


def merge_estimate(summaries: Sequence[QuantileSummary]) -> QuantileSummary:
    """Estimate the summary of the union of the samples behind ``summaries``.

    Count and extrema are exact. Each decile is ``inf{v : F(v) >= p}`` for
    the count-weighted mixture ``F`` of the input CDFs. Inputs are put in a
    canonical order first so the result does not depend on list order.
    """
    if not summaries:
        raise EmptyInput("nothing to merge")
    if len(summaries) == 1:
        return summaries[0]
    parts = sorted(summaries, key=_sort_key)
    total = sum(s.count for s in parts)
    lo = min(s.min for s in parts)
    hi = max(s.max for s in parts)
    if lo == hi:
        return QuantileSummary.constant(lo, total)

    bps = sorted({v for s in parts for v in s.support})
    weights = [s.count / total for s in parts]
    supports = [s.support for s in parts]

    def mix(fn, v):
        return math.fsum(w * fn(xs, v) for w, xs in zip(weights, supports))

    at = [mix(_cdf_at, b) for b in bps]
    left = [mix(_cdf_left, b) for b in bps]

    out = []
    j = 0
    for p in LEVELS:
        while j < len(bps) - 1 and at[j] < p:
            j += 1
        if j == 0:
            out.append(bps[0])
            continue
        f0, f1 = at[j - 1], left[j]
        if f1 >= p:
            x0, x1 = bps[j - 1], bps[j]
            v = x0 + (p - f0) / (f1 - f0) * (x1 - x0)
            out.append(min(max(v, x0), x1))
        else:
            out.append(bps[j])
    d = np.clip(np.maximum.accumulate(out), lo, hi)
    return QuantileSummary(total, lo, tuple(d.tolist()), hi)

