"""Vectorised interval arithmetic.

Every primitive works on a pair of numpy arrays ``(lo, hi)`` of identical
shape, so a whole batch of boxes is enclosed in one call. Results are widened
outward by ``REL_SLACK * |x| + ABS_SLACK`` instead of switching the FPU
rounding mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError

REL_SLACK = 1e-14
ABS_SLACK = 1e-300
SQRT_CLAMP = 1e-12

HALF_PI = math.pi / 2
TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, x) -> bool:
        return self.lo <= x <= self.hi

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))


def widen(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return lo - (np.abs(lo) * REL_SLACK + ABS_SLACK), hi + (np.abs(hi) * REL_SLACK + ABS_SLACK)


def add(a, b):
    return widen(a[0] + b[0], a[1] + b[1])


def sub(a, b):
    return widen(a[0] - b[1], a[1] - b[0])


def neg(a):
    return -a[1], -a[0]


def mul(a, b):
    p = np.stack([a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
    return widen(p.min(axis=0), p.max(axis=0))


def scale(a, c: float):
    if c >= 0:
        return widen(a[0] * c, a[1] * c)
    return widen(a[1] * c, a[0] * c)


def recip(a):
    lo, hi = np.asarray(a[0]), np.asarray(a[1])
    if np.any((lo <= 0) & (hi >= 0)):
        raise DomainError("interval divisor contains zero")
    return widen(1.0 / hi, 1.0 / lo)


def div(a, b):
    return mul(a, recip(b))


def mag(a):
    """Largest absolute value over the interval."""
    return np.maximum(np.abs(a[0]), np.abs(a[1]))


def mig(a):
    """Smallest absolute value over the interval (0 if it straddles 0)."""
    lo, hi = a
    return np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))


def abs_(a):
    return mig(a), mag(a)


def ipow(a, p: int):
    if p == 0:
        one = np.ones_like(np.asarray(a[0], dtype=float))
        return one, one
    if p < 0:
        return recip(ipow(a, -p))
    if p == 1:
        return a
    if p % 2 == 0:
        lo, hi = widen(mig(a) ** p, mag(a) ** p)
        return np.maximum(lo, 0.0), hi
    return widen(np.asarray(a[0], dtype=float) ** p, np.asarray(a[1], dtype=float) ** p)


def real_root_pow(x, num: int, den: int):
    """Real-valued x**(num/den) for odd den, defined for negative x."""
    r = np.cbrt(x) if den == 3 else np.sign(x) * np.abs(x) ** (1.0 / den)
    return r**num


def _root_pow_bounds(lo, hi, num: int, den: int):
    """Outward bounds for the monotone map x -> x**(num/den) at both ends.

    A float exponent 1/den is not exact, which costs about |ln x| ulps; that
    is absorbed by an extra relative slack.
    """
    rlo, rhi = widen(real_root_pow(lo, num, den), real_root_pow(hi, num, den))
    if den == 3:
        return rlo, rhi
    with np.errstate(divide="ignore"):
        k = lambda v: (np.abs(np.log(np.maximum(np.abs(v), 1e-320))) + 1.0) * abs(num) * 4e-16
    return rlo - np.abs(rlo) * k(lo), rhi + np.abs(rhi) * k(hi)


def rpow(a, q: Fraction):
    if q.denominator == 1:
        return ipow(a, int(q))
    if q.denominator % 2 == 0:
        raise DomainError(f"rational exponent {q} needs an odd denominator")
    if q < 0:
        return recip(rpow(a, -q))
    num, den = q.numerator, q.denominator
    if num % 2 == 0:
        # even numerator: function of |x|, monotone increasing in |x|
        m, big = abs_(a)
        lo, hi = _root_pow_bounds(m, big, num, den)
        return np.maximum(lo, 0.0), hi
    return _root_pow_bounds(np.asarray(a[0], dtype=float), np.asarray(a[1], dtype=float), num, den)


def sqrt(a):
    lo, hi = np.asarray(a[0], dtype=float), np.asarray(a[1], dtype=float)
    if np.any(lo < -SQRT_CLAMP):
        raise DomainError("sqrt of an interval with negative part")
    lo = np.maximum(lo, 0.0)
    if np.any(hi < 0):
        raise DomainError("sqrt of a negative interval")
    rlo, rhi = widen(np.sqrt(lo), np.sqrt(hi))
    return np.maximum(rlo, 0.0), rhi


def cbrt(a):
    return widen(np.cbrt(a[0]), np.cbrt(a[1]))


def cbrt_sq(a):
    """Tight enclosure of cbrt(x^2) = |x|^(2/3)."""
    m, big = abs_(a)
    # squaring after the root avoids underflow of x * x
    lo, hi = widen(np.cbrt(m) ** 2, np.cbrt(big) ** 2)
    return np.maximum(lo, 0.0), hi


def exp(a):
    lo, hi = widen(np.exp(a[0]), np.exp(a[1]))
    return np.maximum(lo, 0.0), hi


def _contains_point(lo, hi, phase):
    """True where [lo, hi] contains phase + 2k*pi for some integer k."""
    k = np.ceil((lo - phase) / TWO_PI - 1e-12)
    return phase + k * TWO_PI <= hi + np.abs(hi) * 1e-15 + 1e-12


def _trig(lo, hi, fn, max_phase, min_phase):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    flo, fhi = fn(lo), fn(hi)
    rlo, rhi = widen(np.minimum(flo, fhi), np.maximum(flo, fhi))
    full = (hi - lo) >= TWO_PI
    has_max = full | _contains_point(lo, hi, max_phase)
    has_min = full | _contains_point(lo, hi, min_phase)
    rhi = np.where(has_max, 1.0, np.minimum(rhi, 1.0))
    rlo = np.where(has_min, -1.0, np.maximum(rlo, -1.0))
    return rlo, rhi


def sin(a):
    return _trig(a[0], a[1], np.sin, HALF_PI, -HALF_PI)


def cos(a):
    return _trig(a[0], a[1], np.cos, 0.0, math.pi)


def hull(a, b):
    return np.minimum(a[0], b[0]), np.maximum(a[1], b[1])


def contains(a, x, tol: float = 0.0):
    return (a[0] - tol <= x) & (x <= a[1] + tol)
