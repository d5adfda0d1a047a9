"""Extended reals: finite floats plus a +inf marker.

Values of convex-analysis objects (A, D, J) cross module boundaries as
ExtendedReal so that +inf is never carried as a float through arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ExtendedReal:
    value: float = 0.0
    infinite: bool = False

    def __post_init__(self):
        if not self.infinite and not math.isfinite(self.value):
            raise ValueError(f"finite ExtendedReal got {self.value!r}")

    @classmethod
    def finite(cls, x: float) -> "ExtendedReal":
        return cls(float(x), False)

    @classmethod
    def inf(cls) -> "ExtendedReal":
        return cls(0.0, True)

    @classmethod
    def from_float(cls, x: float) -> "ExtendedReal":
        # only +inf is representable; -inf and nan are bugs upstream
        if x == math.inf:
            return cls.inf()
        return cls.finite(x)

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    def __float__(self) -> float:
        return math.inf if self.infinite else self.value

    def __add__(self, other) -> "ExtendedReal":
        other = _coerce(other)
        if self.infinite or other.infinite:
            return ExtendedReal.inf()
        return ExtendedReal.finite(self.value + other.value)

    __radd__ = __add__

    def scale(self, c: float) -> "ExtendedReal":
        """Multiply by c > 0."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        if self.infinite:
            return self
        return ExtendedReal.finite(c * self.value)

    def __lt__(self, other):
        return float(self) < float(_coerce(other))

    def __le__(self, other):
        return float(self) <= float(_coerce(other))

    def __gt__(self, other):
        return float(self) > float(_coerce(other))

    def __ge__(self, other):
        return float(self) >= float(_coerce(other))

    def __repr__(self):
        return "ExtendedReal(+inf)" if self.infinite else f"ExtendedReal({self.value!r})"


def _coerce(x) -> ExtendedReal:
    if isinstance(x, ExtendedReal):
        return x
    return ExtendedReal.from_float(float(x))


def sup(values) -> ExtendedReal:
    out = None
    for v in values:
        v = _coerce(v)
        if v.infinite:
            return v
        if out is None or v.value > out.value:
            out = v
    if out is None:
        raise ValueError("sup of an empty collection")
    return out
