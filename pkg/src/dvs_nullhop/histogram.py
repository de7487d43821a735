"""Fixed-event-count histogram collection with a ping-pong double buffer.

Each emitted frame is an :class:`EventHistogram` holding per-pixel event
counts and the parallel non-zero mask used later as the sparsity map.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .aer_stream import DAVIS240, AerEvent, EventsLike, SensorGeometry, as_event_array

DEFAULT_K_EVENTS = 2000
DEFAULT_RESOLUTION = (64, 64)  # (width, height)

HIST_MAGIC = b"HST1"
_HIST_HEADER = struct.Struct("<4sHHII")


class BufferState(enum.Enum):
    IDLE = "idle"
    COLLECTING = "collecting"
    READY = "ready"
    NORMALIZING = "normalizing"


class BackpressureStall(RuntimeError):
    """Raised (in ``on_stall='raise'`` mode) when no buffer is free to collect into."""


_COUNTER_LIMITS = {"count": (0, np.iinfo(np.uint16).max), "signed": (-32767, 32767)}
_COUNTER_DTYPE = {"count": np.uint16, "signed": np.int16}


@dataclass
class EventHistogram:
    width: int = 64
    height: int = 64
    polarity_mode: str = "count"
    frame_seq: int = 0
    events_in: int = 0
    saturated: bool = False
    state: BufferState = BufferState.IDLE
    counts: np.ndarray = field(default=None, repr=False)
    nz_mask: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.polarity_mode not in _COUNTER_LIMITS:
            raise ValueError(f"polarity_mode must be 'count' or 'signed', got {self.polarity_mode!r}")
        if self.counts is None:
            self.counts = np.zeros((self.height, self.width), _COUNTER_DTYPE[self.polarity_mode])
        if self.nz_mask is None:
            self.nz_mask = self.counts != 0

    def add(self, col: int, row: int, polarity: int = 1) -> None:
        lo, hi = _COUNTER_LIMITS[self.polarity_mode]
        step = 1 if self.polarity_mode == "count" or polarity else -1
        v = int(self.counts[row, col]) + step
        if v > hi or v < lo:
            self.saturated = True
            v = min(max(v, lo), hi)
        self.counts[row, col] = v
        self.nz_mask[row, col] = v != 0
        self.events_in += 1

    def copy(self) -> EventHistogram:
        return EventHistogram(self.width, self.height, self.polarity_mode, self.frame_seq,
                              self.events_in, self.saturated, self.state,
                              self.counts.copy(), self.nz_mask.copy())

    @classmethod
    def from_counts(cls, counts, frame_seq: int = 0) -> EventHistogram:
        """Wrap an existing 2D count grid (rows x cols)."""
        c = np.asarray(counts)
        signed = np.any(c < 0)
        mode = "signed" if signed else "count"
        arr = c.astype(_COUNTER_DTYPE[mode])
        h, w = arr.shape
        return cls(w, h, mode, frame_seq, int(np.abs(c).sum()), False,
                   BufferState.READY, arr, arr != 0)


def reset_buffer(h: EventHistogram) -> None:
    h.counts[...] = 0
    h.nz_mask[...] = False
    h.events_in = 0
    h.saturated = False


# -- coordinate mapping ------------------------------------------------------

def _crop_box(geometry: SensorGeometry, crop) -> tuple[int, int, int, int]:
    if crop is None:
        return 0, 0, geometry.width, geometry.height
    x0, y0, cw, ch = crop
    if cw < 1 or ch < 1 or x0 < 0 or y0 < 0 or x0 + cw > geometry.width or y0 + ch > geometry.height:
        raise ValueError(f"crop {crop} does not fit in {geometry}")
    return x0, y0, cw, ch


def map_coordinate(x: int, y: int, geometry: SensorGeometry = DAVIS240,
                   target: tuple[int, int] = DEFAULT_RESOLUTION,
                   crop=None) -> Optional[tuple[int, int]]:
    """Down-sample a sensor address to ``(col, row)`` in the target grid.

    Floor scaling: ``col = floor(x * target_w / sensor_w)``. With a crop box
    ``(x0, y0, w, h)`` the box is scaled instead and events outside it map
    to ``None``.
    """
    x0, y0, cw, ch = _crop_box(geometry, crop)
    dx, dy = x - x0, y - y0
    if not (0 <= dx < cw and 0 <= dy < ch):
        return None
    tw, th = target
    return dx * tw // cw, dy * th // ch


def map_coordinates(x: np.ndarray, y: np.ndarray, geometry: SensorGeometry = DAVIS240,
                    target: tuple[int, int] = DEFAULT_RESOLUTION, crop=None):
    """Vectorized :func:`map_coordinate`; returns ``(col, row, inside_mask)``."""
    x0, y0, cw, ch = _crop_box(geometry, crop)
    dx = x.astype(np.int64) - x0
    dy = y.astype(np.int64) - y0
    inside = (dx >= 0) & (dx < cw) & (dy >= 0) & (dy < ch)
    tw, th = target
    return dx * tw // cw, dy * th // ch, inside


# -- double buffer -----------------------------------------------------------

class DoubleBuffer:
    """Ping-pong pair of histograms driven one event at a time.

    The buffer returned by :meth:`accumulate` belongs to the caller until it
    is handed back with :meth:`release`. If both buffers are out when the
    next frame must start, incoming events are dropped and counted in
    ``stalled_events`` (or :class:`BackpressureStall` is raised).
    """

    def __init__(self, k_events: int = DEFAULT_K_EVENTS,
                 resolution: tuple[int, int] = DEFAULT_RESOLUTION,
                 geometry: SensorGeometry = DAVIS240, polarity_mode: str = "count",
                 crop=None, on_stall: str = "drop"):
        if k_events < 1:
            raise ValueError("k_events must be >= 1")
        if on_stall not in ("drop", "raise"):
            raise ValueError("on_stall must be 'drop' or 'raise'")
        self.k_events = k_events
        self.resolution = resolution
        self.geometry = geometry
        self.crop = crop
        self.on_stall = on_stall
        w, h = resolution
        self.buffers = (EventHistogram(w, h, polarity_mode), EventHistogram(w, h, polarity_mode))
        self.buffers[0].state = BufferState.COLLECTING
        self.active: Optional[int] = 0
        self.next_seq = 0
        self.stalled_events = 0
        self.dropped_outside = 0

    @property
    def collecting(self) -> Optional[EventHistogram]:
        return None if self.active is None else self.buffers[self.active]

    def _start_collecting(self, idx: int) -> None:
        buf = self.buffers[idx]
        reset_buffer(buf)
        buf.frame_seq = self.next_seq
        buf.state = BufferState.COLLECTING
        self.active = idx

    def accumulate(self, ev: AerEvent) -> Optional[EventHistogram]:
        t, x, y, p = ev
        if self.active is None:
            self.stalled_events += 1
            if self.on_stall == "raise":
                raise BackpressureStall("both histogram buffers are busy")
            return None
        pix = map_coordinate(int(x), int(y), self.geometry, self.resolution, self.crop)
        if pix is None:
            self.dropped_outside += 1
            return None
        buf = self.buffers[self.active]
        buf.add(pix[0], pix[1], int(p))
        if buf.events_in < self.k_events:
            return None
        return self._emit()

    def _emit(self) -> EventHistogram:
        full = self.buffers[self.active]
        full.state = BufferState.READY
        self.next_seq += 1
        other = 1 - self.active
        self.active = None
        if self.buffers[other].state is BufferState.IDLE:
            self._start_collecting(other)
        return full

    def claim(self, h: EventHistogram) -> None:
        """Mark a handed-out buffer as being normalized."""
        h.state = BufferState.NORMALIZING

    def release(self, h: EventHistogram) -> None:
        idx = next(i for i, b in enumerate(self.buffers) if b is h)
        if h.state not in (BufferState.READY, BufferState.NORMALIZING):
            raise ValueError(f"buffer {idx} is not handed out (state {h.state.value})")
        h.state = BufferState.IDLE
        if self.active is None:
            self._start_collecting(idx)


def collect_frames(events: EventsLike, k_events: int = DEFAULT_K_EVENTS,
                   resolution: tuple[int, int] = DEFAULT_RESOLUTION,
                   geometry: SensorGeometry = DAVIS240, polarity_mode: str = "count",
                   crop=None) -> Iterator[EventHistogram]:
    """Yield one histogram per ``k_events`` events, consumer always keeping up.

    Equivalent to feeding :class:`DoubleBuffer` event by event and releasing
    each frame immediately; yields independent copies. A trailing partial
    frame is discarded.
    """
    arr = as_event_array(events)
    if polarity_mode != "count":
        db = DoubleBuffer(k_events, resolution, geometry, polarity_mode, crop)
        for ev in arr.tolist():
            frame = db.accumulate(ev)
            if frame is not None:
                out = frame.copy()
                db.release(frame)
                yield out
        return
    col, row, inside = map_coordinates(arr["x"], arr["y"], geometry, resolution, crop)
    flat = (row * resolution[0] + col)[inside]
    w, h = resolution
    limit = _COUNTER_LIMITS["count"][1]
    for seq, start in enumerate(range(0, len(flat) - k_events + 1, k_events)):
        raw = np.bincount(flat[start:start + k_events], minlength=w * h).reshape(h, w)
        counts = np.minimum(raw, limit).astype(np.uint16)
        yield EventHistogram(w, h, "count", seq, k_events, bool(raw.max() > limit),
                             BufferState.READY, counts, counts != 0)


# -- HST1 dump ---------------------------------------------------------------

def write_histogram(h: EventHistogram, sink) -> None:
    if h.polarity_mode != "count":
        raise ValueError("HST1 stores unsigned counters; signed histograms are not dumpable")
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            return write_histogram(h, f)
    sink.write(_HIST_HEADER.pack(HIST_MAGIC, h.width, h.height, h.frame_seq, h.events_in))
    sink.write(np.ascontiguousarray(h.counts, dtype="<u2").tobytes())


def read_histogram(source) -> EventHistogram:
    if isinstance(source, (str, Path)):
        source = Path(source).read_bytes()
    elif hasattr(source, "read"):
        source = source.read()
    if len(source) < _HIST_HEADER.size:
        raise ValueError("truncated HST1 header")
    magic, w, h, seq, n = _HIST_HEADER.unpack_from(source)
    if magic != HIST_MAGIC:
        raise ValueError(f"bad histogram magic {magic!r}")
    body = source[_HIST_HEADER.size:]
    if len(body) != 2 * w * h:
        raise ValueError(f"expected {2 * w * h} counter bytes, found {len(body)}")
    counts = np.frombuffer(body, "<u2").reshape(h, w).astype(np.uint16)
    return EventHistogram(w, h, "count", seq, n, False, BufferState.READY, counts, counts != 0)
