"""Sparsity Map + Non-Zero Value List compression of 3D feature maps.

Feature maps are integer arrays of Q16.8 raw values with shape
``(channels, height, width)``. Element order (channel-major, then row-major)
is the flat C order of that array; the sparsity map packs one bit per
element, LSB-first, into little-endian 32-bit words.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .fixed_point import Q16_8

VALUE_BITS = 32
CFM_MAGIC = b"CFM1"
_CFM_HEADER = struct.Struct("<4sHHHHI")


class CorruptStream(ValueError):
    pass


@dataclass(frozen=True)
class CompressedFeatureMap:
    height: int
    width: int
    channels: int
    sm: np.ndarray    # uint32 words
    nzvl: np.ndarray  # int32 Q16.8 raw

    def __post_init__(self):
        for a in (self.sm, self.nzvl):
            a.flags.writeable = False

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.height, self.width, self.channels

    @property
    def shape(self) -> tuple[int, int, int]:
        """Dense array shape ``(channels, height, width)``."""
        return self.channels, self.height, self.width

    @property
    def n_elements(self) -> int:
        return self.height * self.width * self.channels

    @property
    def nnz(self) -> int:
        return len(self.nzvl)


def sm_words(n_bits: int) -> int:
    return -(-n_bits // 32)


def _pack(bits: np.ndarray) -> np.ndarray:
    packed = np.packbits(bits.astype(np.uint8), bitorder="little")
    pad = (-len(packed)) % 4
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, np.uint8)])
    return packed.view("<u4").astype(np.uint32)


def _unpack(sm: np.ndarray, n_bits: int) -> tuple[np.ndarray, np.ndarray]:
    bits = np.unpackbits(np.asarray(sm, "<u4").view(np.uint8), bitorder="little")
    return bits[:n_bits].astype(bool), bits[n_bits:]


def encode(t: np.ndarray) -> CompressedFeatureMap:
    t = np.asarray(t)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3 or min(t.shape) < 1:
        raise ValueError(f"feature map must be (channels, height, width), got {t.shape}")
    flat = t.reshape(-1)
    bits = flat != 0
    ch, h, w = t.shape
    return CompressedFeatureMap(h, w, ch, _pack(bits), flat[bits].astype(np.int32))


def _positions(c: CompressedFeatureMap, strict: bool) -> np.ndarray:
    n = c.n_elements
    if len(c.sm) != sm_words(n):
        raise CorruptStream(f"expected {sm_words(n)} sparsity-map words, got {len(c.sm)}")
    bits, tail = _unpack(c.sm, n)
    if tail.any():
        raise CorruptStream("sparsity-map padding bits are set")
    idx = np.flatnonzero(bits)
    if len(idx) != len(c.nzvl):
        raise CorruptStream(f"sparsity map has {len(idx)} set bits but NZVL has {len(c.nzvl)} values")
    if strict and np.any(c.nzvl == 0):
        raise CorruptStream("NZVL contains a zero value")
    return idx


def decode(c: CompressedFeatureMap, strict: bool = True) -> np.ndarray:
    """Dense ``(channels, height, width)`` int32 array.

    ``strict=False`` tolerates zero entries in the value list.
    """
    idx = _positions(c, strict)
    out = np.zeros(c.n_elements, np.int32)
    out[idx] = c.nzvl
    return out.reshape(c.shape)


def nonzero_coords(c: CompressedFeatureMap, strict: bool = True):
    """Arrays ``(row, col, channel, value)`` of the non-zero entries, storage order."""
    idx = _positions(c, strict)
    ch, rem = np.divmod(idx, c.height * c.width)
    row, col = np.divmod(rem, c.width)
    return row, col, ch, np.asarray(c.nzvl)


def iter_nonzero(c: CompressedFeatureMap, strict: bool = True) -> Iterator[tuple[int, int, int, int]]:
    """Stream ``(row, col, channel, raw)`` by walking the sparsity-map words.

    The dense tensor is never built; all-zero words are skipped whole.
    """
    _positions(c, strict)  # validates framing and popcount
    plane = c.height * c.width
    k = 0
    for wi, word in enumerate(c.sm.tolist()):
        while word:
            low = word & -word
            i = wi * 32 + low.bit_length() - 1
            word ^= low
            ch, rem = divmod(i, plane)
            row, col = divmod(rem, c.width)
            yield row, col, ch, int(c.nzvl[k])
            k += 1


def compressed_size_bits(c: CompressedFeatureMap) -> int:
    return 32 * sm_words(c.n_elements) + VALUE_BITS * c.nnz


def dense_size_bits(n_elements: int) -> int:
    return VALUE_BITS * n_elements


def compression_ratio(t) -> float:
    c = t if isinstance(t, CompressedFeatureMap) else encode(t)
    return dense_size_bits(c.n_elements) / compressed_size_bits(c)


def frame_to_feature_map(nf, masked: bool = True) -> np.ndarray:
    """Turn a normalized frame into a 1-channel Q16.8 feature map.

    With ``masked`` only pixels set in the source histogram's non-zero mask
    keep their value; this is the sparsity the accelerator sees.
    """
    raw = nf.q16_8().astype(np.int32)
    if masked:
        if nf.nz_mask is None:
            raise ValueError("frame has no non-zero mask to apply")
        raw = np.where(nf.nz_mask, raw, 0).astype(np.int32)
    return raw[None]


def to_real(t: np.ndarray) -> np.ndarray:
    return np.asarray(t) / Q16_8.one


# -- CFM1 file ---------------------------------------------------------------

def write_cfm(c: CompressedFeatureMap, sink) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            return write_cfm(c, f)
    sink.write(_CFM_HEADER.pack(CFM_MAGIC, c.height, c.width, c.channels, 0, c.nnz))
    sink.write(np.asarray(c.sm, "<u4").tobytes())
    sink.write(np.asarray(c.nzvl, "<i4").tobytes())


def read_cfm(source) -> CompressedFeatureMap:
    if isinstance(source, (str, Path)):
        source = Path(source).read_bytes()
    elif hasattr(source, "read"):
        source = source.read()
    if len(source) < _CFM_HEADER.size:
        raise CorruptStream("truncated CFM1 header")
    magic, h, w, ch, _, nnz = _CFM_HEADER.unpack_from(source)
    if magic != CFM_MAGIC:
        raise CorruptStream(f"bad CFM magic {magic!r}")
    nw = sm_words(h * w * ch)
    body = source[_CFM_HEADER.size:]
    if len(body) != 4 * (nw + nnz):
        raise CorruptStream(f"expected {4 * (nw + nnz)} payload bytes, found {len(body)}")
    sm = np.frombuffer(body[:4 * nw], "<u4").astype(np.uint32)
    nzvl = np.frombuffer(body[4 * nw:], "<i4").astype(np.int32)
    return CompressedFeatureMap(h, w, ch, sm, nzvl)
