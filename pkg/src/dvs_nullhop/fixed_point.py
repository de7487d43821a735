"""Qn.m fixed-point arithmetic with round-to-nearest-even and saturation.

A value is stored as an integer ``raw`` with ``value = raw / 2**frac_bits``.
Out-of-range results clamp to the format bounds and set ``saturated`` on the
result; they never wrap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_TOTAL_BITS = 48


class FixedPointError(ValueError):
    """Base class for contract violations in fixed-point operations."""


class FormatMismatchError(FixedPointError):
    pass


class FixedPointDomainError(FixedPointError):
    pass


class FixedPointZeroDivisionError(FixedPointError, ZeroDivisionError):
    pass


@dataclass(frozen=True)
class QFormat:
    int_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        if self.int_bits < 1:
            raise ValueError(f"int_bits must be >= 1, got {self.int_bits}")
        if self.frac_bits < 0:
            raise ValueError(f"frac_bits must be >= 0, got {self.frac_bits}")
        if self.int_bits + self.frac_bits > MAX_TOTAL_BITS:
            raise ValueError(
                f"Q{self.int_bits}.{self.frac_bits} exceeds {MAX_TOTAL_BITS} bits"
            )

    @property
    def total_bits(self) -> int:
        """Storage width including the sign bit."""
        return self.int_bits + self.frac_bits + int(self.signed)

    @property
    def raw_max(self) -> int:
        return (1 << (self.int_bits + self.frac_bits)) - 1

    @property
    def raw_min(self) -> int:
        return -(1 << (self.int_bits + self.frac_bits)) if self.signed else 0

    @property
    def one(self) -> int:
        return 1 << self.frac_bits

    @property
    def ulp(self) -> float:
        return 2.0 ** -self.frac_bits

    def clamp(self, raw: int) -> tuple[int, bool]:
        """Clamp ``raw`` into range; return ``(raw, saturated)``."""
        if raw > self.raw_max:
            return self.raw_max, True
        if raw < self.raw_min:
            return self.raw_min, True
        return raw, False

    def clamp_array(self, raw: np.ndarray) -> np.ndarray:
        return np.clip(raw, self.raw_min, self.raw_max)

    def __str__(self):
        return f"{'' if self.signed else 'U'}Q{self.int_bits}.{self.frac_bits}"


Q24_16 = QFormat(24, 16)
Q16_8 = QFormat(16, 8)


# -- integer rounding kernels ------------------------------------------------

def round_shift(n: int, shift: int) -> int:
    """``n / 2**shift`` rounded to nearest, ties to even. Negative shift scales up."""
    if shift <= 0:
        return n << -shift
    q = n >> shift  # floor
    rem = n - (q << shift)
    half = 1 << (shift - 1)
    if rem > half or (rem == half and q & 1):
        q += 1
    return q


def round_div(num: int, den: int) -> int:
    """Exact integer ``num / den`` rounded to nearest, ties to even."""
    if den == 0:
        raise FixedPointZeroDivisionError("division by zero")
    if den < 0:
        num, den = -num, -den
    q, rem = divmod(num, den)  # floor division, 0 <= rem < den
    twice = 2 * rem
    if twice > den or (twice == den and q & 1):
        q += 1
    return q


def isqrt_restoring(n: int) -> int:
    """Floor square root by the digit-by-digit (restoring) method.

    Processes two bits of ``n`` per step, as a hardware square-root core does.
    """
    if n < 0:
        raise FixedPointDomainError("square root of a negative number")
    if n < 2:
        return n
    bit = 1 << ((n.bit_length() - 1) & ~1)  # highest power of four <= n
    rem, root = n, 0
    while bit:
        trial = root + bit
        if rem >= trial:
            rem -= trial
            root = (root >> 1) + bit
        else:
            root >>= 1
        bit >>= 2
    return root


def round_shift_array(n: np.ndarray, shift: int) -> np.ndarray:
    """Vectorized :func:`round_shift` for integer (or object) arrays."""
    if shift <= 0:
        return n * (1 << -shift)
    q = n >> shift
    rem = n - (q << shift)
    half = 1 << (shift - 1)
    bump = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + bump.astype(q.dtype) if q.dtype != object else q + bump.astype(int)


# -- values ------------------------------------------------------------------

@dataclass(frozen=True)
class QVal:
    raw: int
    fmt: QFormat
    saturated: bool = field(default=False, compare=False)

    def __post_init__(self):
        raw, sat = self.fmt.clamp(int(self.raw))
        object.__setattr__(self, "raw", raw)
        if sat:
            object.__setattr__(self, "saturated", True)

    @classmethod
    def from_int(cls, n: int, fmt: QFormat) -> QVal:
        return cls(n << fmt.frac_bits, fmt)

    def to_real(self) -> float:
        return self.raw / self.fmt.one

    def __float__(self):
        return self.to_real()

    def __repr__(self):
        sat = ", saturated" if self.saturated else ""
        return f"QVal({self.to_real()!r}, raw={self.raw}, {self.fmt}{sat})"

    def __add__(self, other: QVal) -> QVal:
        return q_add(self, other)

    def __sub__(self, other: QVal) -> QVal:
        return q_sub(self, other)

    def __mul__(self, other: QVal) -> QVal:
        return q_mul(self, other)

    def __truediv__(self, other: QVal) -> QVal:
        return q_div(self, other)

    def __neg__(self) -> QVal:
        return QVal(-self.raw, self.fmt, self.saturated)

    def __lt__(self, other: QVal) -> bool:
        _check_same(self, other)
        return self.raw < other.raw

    def __le__(self, other: QVal) -> bool:
        _check_same(self, other)
        return self.raw <= other.raw


def from_real(x: float, fmt: QFormat) -> QVal:
    """Nearest representable value (ties to even), saturating."""
    if math.isnan(x):
        raise FixedPointDomainError("cannot represent NaN")
    if math.isinf(x):
        raw = fmt.raw_max + 1 if x > 0 else fmt.raw_min - 1
    else:
        raw = round(math.ldexp(x, fmt.frac_bits))
    return QVal(raw, fmt)


def to_real(v: QVal) -> float:
    return v.to_real()


def _check_same(a: QVal, b: QVal) -> None:
    if a.fmt != b.fmt:
        raise FormatMismatchError(f"format mismatch: {a.fmt} vs {b.fmt}")


def _sticky(*vals: QVal) -> bool:
    return any(v.saturated for v in vals)


def q_add(a: QVal, b: QVal) -> QVal:
    _check_same(a, b)
    r = QVal(a.raw + b.raw, a.fmt)
    return QVal(r.raw, r.fmt, r.saturated or _sticky(a, b))


def q_sub(a: QVal, b: QVal) -> QVal:
    _check_same(a, b)
    r = QVal(a.raw - b.raw, a.fmt)
    return QVal(r.raw, r.fmt, r.saturated or _sticky(a, b))


def q_mul(a: QVal, b: QVal) -> QVal:
    _check_same(a, b)
    r = QVal(round_shift(a.raw * b.raw, a.fmt.frac_bits), a.fmt)
    return QVal(r.raw, r.fmt, r.saturated or _sticky(a, b))


def q_div(num: QVal, den: QVal) -> QVal:
    _check_same(num, den)
    if den.raw == 0:
        raise FixedPointZeroDivisionError("fixed-point division by zero")
    r = QVal(round_div(num.raw << num.fmt.frac_bits, den.raw), num.fmt)
    return QVal(r.raw, r.fmt, r.saturated or _sticky(num, den))


def q_sqrt(x: QVal) -> QVal:
    """Square root rounded to the nearest representable value (error <= 1/2 ulp)."""
    if x.raw < 0:
        raise FixedPointDomainError(f"square root of negative value {x.to_real()}")
    n = x.raw << x.fmt.frac_bits
    r = isqrt_restoring(n)
    if n - r * r > r:  # sqrt(n) >= r + 1/2; an exact tie is impossible
        r += 1
    return QVal(r, x.fmt, x.saturated)


def q_convert(x: QVal, fmt: QFormat) -> QVal:
    """Re-quantize into another format, rounding to nearest even."""
    r = QVal(round_shift(x.raw, x.fmt.frac_bits - fmt.frac_bits), fmt)
    return QVal(r.raw, fmt, r.saturated or x.saturated)
