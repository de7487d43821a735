import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from dvs_nullhop.fixed_point import (
    Q16_8, Q24_16, FixedPointDomainError, FixedPointZeroDivisionError, FormatMismatchError,
    QFormat, QVal, from_real, isqrt_restoring, q_add, q_convert, q_div, q_mul, q_sqrt, q_sub,
    round_div, round_shift)

FORMATS = [Q24_16, Q16_8, QFormat(8, 8), QFormat(4, 12)]


def exact(v: QVal) -> Fraction:
    return Fraction(v.raw, v.fmt.one)


def raw_in(fmt):
    return st.integers(fmt.raw_min, fmt.raw_max).map(lambda r: QVal(r, fmt))


def test_format_bounds():
    assert Q24_16.raw_max == 2 ** 40 - 1
    assert Q24_16.raw_min == -(2 ** 40)
    assert Q16_8.total_bits == 25
    assert QFormat(8, 8, signed=False).raw_min == 0
    with pytest.raises(ValueError):
        QFormat(0, 8)
    with pytest.raises(ValueError):
        QFormat(8, -1)
    with pytest.raises(ValueError):
        QFormat(40, 9)


def test_from_real_examples():
    assert from_real(1.5, Q24_16).raw == 98304
    assert from_real(0.0, Q16_8).raw == 0
    big = from_real(2.0 ** 30, Q24_16)
    assert big.raw == Q24_16.raw_max and big.saturated
    assert from_real(-2.0 ** 30, Q24_16).raw == Q24_16.raw_min
    assert from_real(math.inf, Q16_8).raw == Q16_8.raw_max
    with pytest.raises(FixedPointDomainError):
        from_real(math.nan, Q16_8)


def test_from_real_ties_to_even():
    # 2.5 and 3.5 ulps
    assert from_real(2.5 / 256, Q16_8).raw == 2
    assert from_real(3.5 / 256, Q16_8).raw == 4
    assert from_real(-2.5 / 256, Q16_8).raw == -2


def test_construction_saturates_not_wraps():
    v = QVal(2 ** 45, Q24_16)
    assert v.raw == Q24_16.raw_max and v.saturated
    assert not QVal(5, Q24_16).saturated


def test_arith_examples():
    q = lambda x, f=Q24_16: from_real(x, f)
    assert q_mul(q(2.0), q(3.0)).to_real() == 6.0
    top = QVal(Q24_16.raw_max, Q24_16)
    s = q_add(top, q(1.0))
    assert s.raw == Q24_16.raw_max and s.saturated
    assert q_mul(q(0.5, Q16_8), q(0.5, Q16_8)).to_real() == 0.25
    assert q_div(q(12.0), q(3.0)).to_real() == 4.0
    with pytest.raises(FixedPointZeroDivisionError):
        q_div(q(1.0), q(0.0))
    with pytest.raises(FormatMismatchError):
        q_add(q(1.0), q(1.0, Q16_8))


def test_div_one_third():
    # nearest multiple of 2^-16, by exact integer rounding
    oracle = (2 * 2 ** 16 + 3) // (2 * 3)
    assert oracle == 21845
    assert q_div(from_real(1.0, Q24_16), from_real(3.0, Q24_16)).raw == oracle


def test_sqrt_examples():
    assert q_sqrt(from_real(4.0, Q24_16)).to_real() == 2.0
    assert q_sqrt(from_real(0.0, Q24_16)).raw == 0
    r = q_sqrt(from_real(2.0, Q24_16))
    floor_root = math.isqrt(2 * 2 ** 32)
    assert r.raw in (floor_root, floor_root + 1)
    assert abs(r.to_real() - math.sqrt(2)) <= 2 ** -16
    assert f"{r.to_real():.6f}" == "1.414215"
    with pytest.raises(FixedPointDomainError):
        q_sqrt(from_real(-1.0, Q24_16))


@given(st.integers(0, 2 ** 100))
def test_restoring_isqrt_matches_math(n):
    assert isqrt_restoring(n) == math.isqrt(n)


@given(st.integers(-2 ** 70, 2 ** 70), st.integers(0, 40))
def test_round_shift_is_nearest_even(n, s):
    exact_q = Fraction(n, 2 ** s)
    r = round_shift(n, s)
    assert abs(r - exact_q) <= Fraction(1, 2)
    if abs(r - exact_q) == Fraction(1, 2):
        assert r % 2 == 0


@given(st.integers(-2 ** 60, 2 ** 60), st.integers(-2 ** 30, 2 ** 30).filter(bool))
def test_round_div_is_nearest_even(n, d):
    r = round_div(n, d)
    assert r == round(Fraction(n, d))  # Fraction rounding is half-to-even


@pytest.mark.parametrize("fmt", FORMATS, ids=str)
@given(data=st.data())
def test_add_sub_exact_without_saturation(fmt, data):
    a, b = data.draw(raw_in(fmt)), data.draw(raw_in(fmt))
    for op, ref in ((q_add, exact(a) + exact(b)), (q_sub, exact(a) - exact(b))):
        r = op(a, b)
        if fmt.raw_min <= ref * fmt.one <= fmt.raw_max:
            assert exact(r) == ref and not r.saturated
        else:
            assert r.saturated


@pytest.mark.parametrize("fmt", FORMATS, ids=str)
@given(data=st.data())
def test_mul_div_within_one_ulp(fmt, data):
    a, b = data.draw(raw_in(fmt)), data.draw(raw_in(fmt))
    ulp = Fraction(1, fmt.one)
    prod = exact(a) * exact(b)
    r = q_mul(a, b)
    if not r.saturated:
        assert abs(exact(r) - prod) <= ulp
    if b.raw:
        quot = exact(a) / exact(b)
        r = q_div(a, b)
        if not r.saturated:
            assert abs(exact(r) - quot) <= ulp


@pytest.mark.parametrize("fmt", FORMATS, ids=str)
@given(data=st.data())
def test_sqrt_within_one_ulp(fmt, data):
    a = data.draw(st.integers(0, fmt.raw_max).map(lambda r: QVal(r, fmt)))
    r = q_sqrt(a)
    assert abs(r.to_real() - math.sqrt(a.to_real())) <= fmt.ulp


@given(st.floats(-1e9, 1e9), st.floats(-1e9, 1e9))
def test_from_real_monotone(x, y):
    if x > y:
        x, y = y, x
    for fmt in (Q24_16, Q16_8):
        assert from_real(x, fmt).raw <= from_real(y, fmt).raw


@given(st.floats(-2 ** 23, 2 ** 23, allow_nan=False))
def test_from_real_roundtrip_within_ulp(x):
    assert abs(from_real(x, Q24_16).to_real() - x) <= 2 ** -16


def test_convert_q24_to_q16_8_rounds_half_even():
    assert q_convert(QVal(0x80, Q24_16), Q16_8).raw == 0     # 0.5 ulp -> even 0
    assert q_convert(QVal(0x180, Q24_16), Q16_8).raw == 2    # 1.5 ulp -> 2
    assert q_convert(QVal(0x181, Q24_16), Q16_8).raw == 2
    assert q_convert(from_real(0.5, Q24_16), Q16_8).raw == 128


def test_operators_delegate():
    a, b = from_real(1.25, Q24_16), from_real(0.5, Q24_16)
    assert (a + b).to_real() == 1.75
    assert (a - b).to_real() == 0.75
    assert (a * b).to_real() == 0.625
    assert (a / b).to_real() == 2.5
    assert b < a and (-a).to_real() == -1.25
