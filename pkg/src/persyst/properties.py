"""Raw counter samples and the performance properties derived from them."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

__all__ = [
    "CounterSample",
    "PropertyKind",
    "PropertyValue",
    "ZeroDenominator",
    "derive",
    "PropertyDeriver",
]


class ZeroDenominator(ArithmeticError):
    """The window is idle or invalid for the requested property."""


class PropertyKind(enum.Enum):
    CPI = "CPI"
    BRANCH_MISPREDICT_RATIO = "BR_MISP_RATIO"
    FLOPS = "FLOPS"
    AVX_FLOPS = "AVX_FLOPS"
    AVX_FRACTION = "AVX_FRAC"

    @property
    def token(self) -> str:
        return self.value

    @property
    def unit(self) -> str:
        return _UNITS[self]

    @classmethod
    def from_token(cls, token: str) -> "PropertyKind":
        try:
            return cls(token)
        except ValueError:
            raise ValueError(f"unknown property token {token!r}") from None


_UNITS = {
    PropertyKind.CPI: "ratio",
    PropertyKind.BRANCH_MISPREDICT_RATIO: "ratio",
    PropertyKind.FLOPS: "ops/s",
    PropertyKind.AVX_FLOPS: "ops/s",
    PropertyKind.AVX_FRACTION: "ratio",
}

# canonical order; used for record ordering everywhere
KINDS: tuple[PropertyKind, ...] = tuple(PropertyKind)


@dataclass(frozen=True)
class CounterSample:
    cycles: int
    instructions: int
    branch_mispredictions: int
    fp_scalar_ops: int
    fp_avx_ops: int
    window: float = 1.0

    def __post_init__(self):
        counts = (
            self.cycles,
            self.instructions,
            self.branch_mispredictions,
            self.fp_scalar_ops,
            self.fp_avx_ops,
        )
        if any(c < 0 for c in counts):
            raise ValueError(f"negative counter in {self!r}")
        if not (self.window > 0 and math.isfinite(self.window)):
            raise ValueError(f"window must be positive, got {self.window}")
        if self.branch_mispredictions > self.instructions:
            raise ValueError("branch_mispredictions exceeds instructions")


@dataclass(frozen=True)
class PropertyValue:
    kind: PropertyKind
    value: float
    core_id: str
    cycle_ts: int

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite {self.kind.token} value")
        if self.kind is PropertyKind.AVX_FRACTION and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"AVX fraction out of [0, 1]: {self.value}")


def _ratio(num: float, den: float) -> float:
    if den == 0:
        raise ZeroDenominator
    return num / den


def derive_value(kind: PropertyKind, sample: CounterSample, avx_width: int = 1) -> float:
    """Return the bare property value; raises ZeroDenominator for idle windows."""
    s = sample
    if kind is PropertyKind.CPI:
        return _ratio(s.cycles, s.instructions)
    if kind is PropertyKind.BRANCH_MISPREDICT_RATIO:
        return _ratio(s.branch_mispredictions, s.instructions)
    if kind is PropertyKind.FLOPS:
        return (s.fp_scalar_ops + avx_width * s.fp_avx_ops) / s.window
    if kind is PropertyKind.AVX_FLOPS:
        return avx_width * s.fp_avx_ops / s.window
    if kind is PropertyKind.AVX_FRACTION:
        return _ratio(s.fp_avx_ops, s.fp_scalar_ops + s.fp_avx_ops)
    raise TypeError(f"not a PropertyKind: {kind!r}")


def derive(
    kind: PropertyKind,
    sample: CounterSample,
    core_id: str = "-",
    cycle_ts: int = 0,
    avx_width: int = 1,
) -> PropertyValue:
    """Derive one property from a counter sample.

    ``avx_width`` weights each vector operation in FLOPS and AVX_FLOPS; the
    default of 1 counts a vector instruction as a single operation. The AVX
    fraction is always a ratio of operation counts and ignores the width.
    """
    return PropertyValue(kind, derive_value(kind, sample, avx_width), core_id, cycle_ts)


class PropertyDeriver(TransformerMixin, BaseEstimator):
    """Turn a sequence of CounterSamples into a (n_samples, n_kinds) array.

    Windows that are idle for a property yield NaN in that column, so callers
    can mask them out per property.
    """

    def __init__(self, kinds=None, avx_width=1):
        self.kinds = kinds
        self.avx_width = avx_width

    def fit(self, X, y=None):
        if self.avx_width < 1:
            raise ValueError("avx_width must be >= 1")
        self.kinds_ = tuple(self.kinds) if self.kinds is not None else KINDS
        self.n_features_out_ = len(self.kinds_)
        return self

    def transform(self, X):
        kinds = getattr(self, "kinds_", None)
        if kinds is None:
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("PropertyDeriver is not fitted")
        out = np.full((len(X), len(kinds)), np.nan)
        for i, sample in enumerate(X):
            for j, kind in enumerate(kinds):
                try:
                    out[i, j] = derive_value(kind, sample, self.avx_width)
                except ZeroDenominator:
                    pass
        return out

    def get_feature_names_out(self, input_features=None):
        return np.asarray([k.token for k in self.kinds_], dtype=object)
