"""Histogram normalization: ``(F + 3*sigma) / (6*sigma)`` per pixel.

``mean`` is taken over the non-zero pixels only, while the squared-deviation
sum runs over every pixel (zeros included) and is divided by the non-zero
count. Two paths are provided: a double-precision reference and a
fixed-point path (Q24.16 internally, Q16.8 output) mirroring the hardware.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .fixed_point import (Q16_8, Q24_16, QFormat, QVal, q_add, q_convert, q_div,
                          q_mul, q_sqrt, q_sub, round_div)
from .histogram import EventHistogram

NORM_LANES = 22
NORM_LANE_LATENCY_CYCLES = 47  # 470 ns @ 100 MHz, 783 ns @ 60 MHz

NORM_MAGIC = b"NRM1"
_NORM_HEADER = struct.Struct("<4sHHIB")


class Degenerate(enum.IntEnum):
    NONE = 0
    EMPTY = 1
    ZERO_SIGMA = 2


class EmptyFrame(ValueError):
    """The histogram has no non-zero pixel, so the mean is undefined."""


@dataclass(frozen=True)
class NormVariant:
    subtract_mean: bool = False
    variance_over_nonzero_only: bool = False

    @classmethod
    def from_name(cls, name: str) -> NormVariant:
        try:
            return {"literal": cls(), "subtract-mean": cls(subtract_mean=True),
                    "nz-variance": cls(variance_over_nonzero_only=True)}[name]
        except KeyError:
            raise ValueError(f"unknown normalization variant {name!r}") from None


DEFAULT_VARIANT = NormVariant()


@dataclass(frozen=True)
class NormStats:
    S: float
    c: int
    mean: float
    sigma: float
    # raw Q24.16 values on the fixed-point path
    mean_raw: Optional[int] = None
    variance_raw: Optional[int] = None
    sigma_raw: Optional[int] = None
    saturated: bool = False


@dataclass
class NormalizedFrame:
    width: int
    height: int
    values: np.ndarray  # float64, rows x cols
    stats: Optional[NormStats]
    degenerate: Degenerate = Degenerate.NONE
    raw: Optional[np.ndarray] = None  # Q16.8 raw (int32), set on the fixed path
    frame_seq: int = 0
    nz_mask: Optional[np.ndarray] = None  # support of the source histogram

    def q16_8(self) -> np.ndarray:
        """Q16.8 raw pixel values; the float path is rounded half-to-even."""
        if self.raw is not None:
            return self.raw
        scaled = np.rint(np.ldexp(self.values, Q16_8.frac_bits))
        return Q16_8.clamp_array(scaled).astype(np.int32)


def _counts_of(h) -> tuple[np.ndarray, int, Optional[np.ndarray]]:
    if isinstance(h, EventHistogram):
        return h.counts.astype(np.int64), h.frame_seq, h.nz_mask
    c = np.asarray(h, dtype=np.int64)
    if c.ndim != 2:
        raise ValueError("histogram must be 2D")
    return c, 0, c != 0


def compute_stats(h, variant: NormVariant = DEFAULT_VARIANT) -> NormStats:
    """Double-precision statistics: S, c, mean and sigma."""
    F, _, _ = _counts_of(h)
    nz = F != 0
    c = int(nz.sum())
    if c == 0:
        raise EmptyFrame("histogram has no non-zero pixels")
    S = int(F.sum())
    mean = S / c
    dev = (F[nz] if variant.variance_over_nonzero_only else F) - mean
    sigma = math.sqrt(float(np.sum(dev * dev)) / c)
    return NormStats(float(S), c, mean, sigma)


def _flat_frame(F, seq, mask, degenerate, stats, fixed: bool) -> NormalizedFrame:
    h, w = F.shape
    values = np.full((h, w), 0.5)
    raw = np.full((h, w), Q16_8.one // 2, np.int32) if fixed else None
    return NormalizedFrame(w, h, values, stats, degenerate, raw, seq, mask)


def normalize_float(h, variant: NormVariant = DEFAULT_VARIANT) -> NormalizedFrame:
    F, seq, mask = _counts_of(h)
    try:
        st = compute_stats(h, variant)
    except EmptyFrame:
        return _flat_frame(F, seq, mask, Degenerate.EMPTY, None, fixed=False)
    if st.sigma == 0.0:
        return _flat_frame(F, seq, mask, Degenerate.ZERO_SIGMA, st, fixed=False)
    num = (F - st.mean if variant.subtract_mean else F) + 3.0 * st.sigma
    values = num / (6.0 * st.sigma)
    return NormalizedFrame(F.shape[1], F.shape[0], values, st, Degenerate.NONE, None, seq, mask)


def _q(n: int, fmt: QFormat = Q24_16) -> QVal:
    return QVal.from_int(n, fmt)


def fixed_stats(h, variant: NormVariant = DEFAULT_VARIANT) -> NormStats:
    """Statistics on the Q24.16 path.

    The squared-deviation sum is accumulated exactly in a wide integer and
    rounded once when divided by ``c``.
    """
    F, _, _ = _counts_of(h)
    values, mult = np.unique(F, return_counts=True)
    nz = values != 0
    c = int(mult[nz].sum())
    if c == 0:
        raise EmptyFrame("histogram has no non-zero pixels")
    S = _q(int(F.sum()))
    mean = q_div(S, _q(c))
    wide = 0
    for v, n in zip(values.tolist(), mult.tolist()):
        if variant.variance_over_nonzero_only and v == 0:
            continue
        d = q_sub(_q(v), mean).raw
        wide += n * d * d  # frac bits: 2 * 16
    var = QVal(round_div(wide, c << Q24_16.frac_bits), Q24_16)
    sigma = q_sqrt(var)
    sat = S.saturated or mean.saturated or var.saturated
    return NormStats(S.to_real(), c, mean.to_real(), sigma.to_real(),
                     mean.raw, var.raw, sigma.raw, sat)


def normalize_fixed(h, variant: NormVariant = DEFAULT_VARIANT) -> NormalizedFrame:
    F, seq, mask = _counts_of(h)
    try:
        st = fixed_stats(h, variant)
    except EmptyFrame:
        return _flat_frame(F, seq, mask, Degenerate.EMPTY, None, fixed=True)
    sigma = QVal(st.sigma_raw, Q24_16)
    if sigma.raw < 1:  # below one LSB counts as zero
        return _flat_frame(F, seq, mask, Degenerate.ZERO_SIGMA, st, fixed=True)
    three_sigma = q_mul(_q(3), sigma)
    six_sigma = q_mul(_q(6), sigma)
    mean = QVal(st.mean_raw, Q24_16)
    # the histogram holds few distinct counts: evaluate each once, then scatter
    values, inverse = np.unique(F, return_inverse=True)
    lut = np.empty(len(values), np.int32)
    sat = st.saturated
    for i, v in enumerate(values.tolist()):
        x = _q(v)
        if variant.subtract_mean:
            x = q_sub(x, mean)
        out = q_convert(q_div(q_add(x, three_sigma), six_sigma), Q16_8)
        sat |= out.saturated
        lut[i] = out.raw
    raw = lut[inverse.reshape(F.shape)]
    if sat and not st.saturated:
        st = NormStats(st.S, st.c, st.mean, st.sigma, st.mean_raw, st.variance_raw,
                       st.sigma_raw, True)
    return NormalizedFrame(F.shape[1], F.shape[0], raw / Q16_8.one, st, Degenerate.NONE,
                           raw, seq, mask)


def norm_pipeline_cycles(pixel_count: int, lane_latency_cycles: int = NORM_LANE_LATENCY_CYCLES,
                         lanes: int = NORM_LANES,
                         initiation_interval: Optional[int] = None) -> int:
    """Cycles to stream ``pixel_count`` pixels through replicated NORM blocks.

    One pixel is issued per clock, round-robin over ``lanes`` blocks; a block
    accepts a new pixel every ``initiation_interval`` cycles (default: its
    full latency, i.e. not internally pipelined). With enough lanes to cover
    the interval the bank returns one pixel per cycle after the first-result
    latency; otherwise issue stalls until the next lane frees up.
    """
    if lanes < 1 or lane_latency_cycles < 1:
        raise ValueError("lanes and lane_latency_cycles must be >= 1")
    if pixel_count <= 0:
        return 0
    ii = lane_latency_cycles if initiation_interval is None else initiation_interval
    if lanes >= ii:
        return lane_latency_cycles + pixel_count - 1
    last = pixel_count - 1
    return (last // lanes) * ii + last % lanes + lane_latency_cycles


def cycles_to_seconds(cycles: int, clock_hz: float) -> float:
    return cycles / clock_hz


# -- NRM1 dump ---------------------------------------------------------------

def write_normalized(nf: NormalizedFrame, sink) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            return write_normalized(nf, f)
    sink.write(_NORM_HEADER.pack(NORM_MAGIC, nf.width, nf.height, nf.frame_seq, int(nf.degenerate)))
    sink.write(np.ascontiguousarray(nf.q16_8(), dtype="<i4").tobytes())


def read_normalized(source) -> NormalizedFrame:
    if isinstance(source, (str, Path)):
        source = Path(source).read_bytes()
    elif hasattr(source, "read"):
        source = source.read()
    if len(source) < _NORM_HEADER.size:
        raise ValueError("truncated NRM1 header")
    magic, w, h, seq, flag = _NORM_HEADER.unpack_from(source)
    if magic != NORM_MAGIC:
        raise ValueError(f"bad normalized-frame magic {magic!r}")
    body = source[_NORM_HEADER.size:]
    if len(body) != 4 * w * h:
        raise ValueError(f"expected {4 * w * h} pixel bytes, found {len(body)}")
    raw = np.frombuffer(body, "<i4").reshape(h, w).astype(np.int32)
    return NormalizedFrame(w, h, raw / Q16_8.one, None, Degenerate(flag), raw, seq, None)
