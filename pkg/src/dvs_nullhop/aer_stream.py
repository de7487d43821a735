"""Address-event streams: data model, CSV/BIN file I/O and synthetic generators.

Streams are held as numpy structured arrays with dtype :data:`EVENT_DTYPE`
(packed, 9 bytes per record, identical to the BIN record layout).
"""
from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, NamedTuple, Union

import numpy as np

ON = 1
OFF = 0

EVENT_DTYPE = np.dtype(
    [("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")], align=False
)
assert EVENT_DTYPE.itemsize == 9

CSV_HEADER = "timestamp_us,x,y,polarity"
BIN_MAGIC = b"EVT1"
_BIN_HEADER = struct.Struct("<4sHHQ")  # magic, width, height, count -> 16 bytes


class AerEvent(NamedTuple):
    timestamp_us: int
    x: int
    y: int
    polarity: int  # ON=1, OFF=0


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 240
    height: int = 180

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"invalid sensor geometry {self.width}x{self.height}")


DAVIS240 = SensorGeometry(240, 180)


class EventParseError(ValueError):
    """Malformed record; ``location`` is the 1-based line (CSV) or byte offset (BIN)."""

    def __init__(self, msg: str, location: int):
        super().__init__(f"{msg} (at {location})")
        self.location = location


class EventRangeError(EventParseError):
    pass


class NonMonotonicTimestampWarning(UserWarning):
    pass


EventsLike = Union[np.ndarray, Iterable[AerEvent]]


def as_event_array(events: EventsLike) -> np.ndarray:
    """Coerce a sequence of :class:`AerEvent` (or a structured array) to an event array."""
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    rows = [tuple(e) for e in events]
    return np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)


def to_events(arr: np.ndarray) -> list[AerEvent]:
    return [AerEvent(int(t), int(x), int(y), int(p)) for t, x, y, p in arr.tolist()]


def make_events(t, x, y, p) -> np.ndarray:
    out = np.empty(len(t), dtype=EVENT_DTYPE)
    out["t"], out["x"], out["y"], out["p"] = t, x, y, p
    return out


def _check_monotone(t: np.ndarray) -> None:
    if t.size > 1 and np.any(np.diff(t.astype(np.int64)) < 0):
        n = int(np.count_nonzero(np.diff(t.astype(np.int64)) < 0))
        warnings.warn(f"{n} non-monotone timestamp(s) in stream; events kept",
                      NonMonotonicTimestampWarning, stacklevel=3)


# -- CSV ---------------------------------------------------------------------

def _read_csv(text: Iterable[str], geometry: SensorGeometry) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text, start=1):
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and line.replace(" ", "") == CSV_HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventParseError(f"expected 4 fields, got {len(parts)}", lineno)
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise EventParseError(f"non-integer field in {line!r}", lineno) from None
        if not 0 <= t < 2**32:
            raise EventRangeError(f"timestamp {t} outside u32", lineno)
        if p not in (0, 1):
            raise EventParseError(f"polarity must be 0 or 1, got {p}", lineno)
        if not (0 <= x < geometry.width and 0 <= y < geometry.height):
            raise EventRangeError(
                f"event ({x},{y}) outside {geometry.width}x{geometry.height} sensor", lineno)
        rows.append((t, x, y, p))
    return np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)


def _write_csv(arr: np.ndarray, sink) -> None:
    sink.write(CSV_HEADER + "\n")
    for t, x, y, p in arr.tolist():
        sink.write(f"{t},{x},{y},{p}\n")


# -- BIN ---------------------------------------------------------------------

def _read_bin(data: bytes, geometry: SensorGeometry | None) -> tuple[np.ndarray, SensorGeometry]:
    if not data:
        return np.zeros(0, EVENT_DTYPE), geometry or DAVIS240
    if len(data) < _BIN_HEADER.size:
        raise EventParseError("truncated header", len(data))
    magic, width, height, count = _BIN_HEADER.unpack_from(data)
    if magic != BIN_MAGIC:
        raise EventParseError(f"bad magic {magic!r}", 0)
    hdr_geom = SensorGeometry(width, height)
    if geometry is not None and geometry != hdr_geom:
        raise EventParseError(f"file geometry {width}x{height} does not match {geometry}", 4)
    body = data[_BIN_HEADER.size:]
    need = count * EVENT_DTYPE.itemsize
    if len(body) != need:
        raise EventParseError(f"expected {need} record bytes, found {len(body)}",
                              _BIN_HEADER.size + min(len(body), need))
    arr = np.frombuffer(body, dtype=EVENT_DTYPE).copy()
    bad = (arr["x"] >= width) | (arr["y"] >= height) | (arr["p"] > 1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EventRangeError(f"record {i} out of range: {tuple(arr[i].tolist())}",
                              _BIN_HEADER.size + i * EVENT_DTYPE.itemsize)
    return arr, hdr_geom


def _write_bin(arr: np.ndarray, sink: BinaryIO, geometry: SensorGeometry) -> None:
    sink.write(_BIN_HEADER.pack(BIN_MAGIC, geometry.width, geometry.height, len(arr)))
    sink.write(np.ascontiguousarray(arr, dtype=EVENT_DTYPE).tobytes())


# -- public I/O --------------------------------------------------------------

def _guess_format(path: Path) -> str:
    return "bin" if path.suffix.lower() in (".bin", ".evt") else "csv"


def read_events(source, fmt: str | None = None,
                geometry: SensorGeometry | None = None) -> np.ndarray:
    """Read an event stream from a path, bytes, or a file object.

    CSV carries no geometry, so records are range-checked against ``geometry``
    (default DAVIS240C, 240x180). BIN files carry their own geometry.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        fmt = fmt or _guess_format(path)
        source = path.read_bytes()
    elif hasattr(source, "read"):
        source = source.read()
    if isinstance(source, str):
        source = source.encode()
    fmt = (fmt or "csv").lower()
    if fmt == "csv":
        arr = _read_csv(io.StringIO(source.decode("ascii")), geometry or DAVIS240)
    elif fmt == "bin":
        arr, _ = _read_bin(source, geometry)
    else:
        raise ValueError(f"unknown event format {fmt!r}")
    _check_monotone(arr["t"])
    return arr


def read_bin_geometry(path) -> SensorGeometry:
    with open(path, "rb") as f:
        head = f.read(_BIN_HEADER.size)
    if len(head) < _BIN_HEADER.size:
        return DAVIS240
    _, w, h, _ = _BIN_HEADER.unpack(head)
    return SensorGeometry(w, h)


def write_events(events: EventsLike, sink, fmt: str | None = None,
                 geometry: SensorGeometry = DAVIS240) -> None:
    """Write a stream so that :func:`read_events` returns it bit-exactly."""
    arr = as_event_array(events)
    if isinstance(sink, (str, Path)):
        path = Path(sink)
        fmt = fmt or _guess_format(path)
        with open(path, "wb") as f:
            write_events(arr, f, fmt, geometry)
        return
    fmt = (fmt or "csv").lower()
    if fmt == "bin":
        _write_bin(arr, sink, geometry)
    elif fmt == "csv":
        if isinstance(sink, io.TextIOBase):
            _write_csv(arr, sink)
        else:
            buf = io.StringIO()
            _write_csv(arr, buf)
            sink.write(buf.getvalue().encode("ascii"))
    else:
        raise ValueError(f"unknown event format {fmt!r}")


# -- generators --------------------------------------------------------------

def _arrival_times(n: int, duration_us: int, rng: np.random.Generator) -> np.ndarray:
    # exactly n arrivals, placed as a Poisson process conditioned on its count
    return np.sort(rng.integers(0, duration_us, size=n, dtype=np.int64))


def gen_moving_edge(geometry: SensorGeometry, speed_px_per_s: float, rate_eps: float,
                    duration_us: int, rng_seed: int = 0, *, bar_width: int | None = None,
                    edge_jitter_px: float = 1.0) -> np.ndarray:
    """A bright bar sweeping left-to-right across the sensor, wrapping around.

    ON events fire along the leading edge and OFF events along the trailing
    edge, like a hand moving in front of the retina. The event count is
    ``round(rate_eps * duration)``, so the mean rate matches ``rate_eps``.
    """
    if rate_eps <= 0:
        raise ValueError("rate_eps must be positive")
    rng = np.random.default_rng(rng_seed)
    n = int(round(rate_eps * duration_us * 1e-6))
    if duration_us <= 0 or n == 0:
        return np.zeros(0, EVENT_DTYPE)
    bar = bar_width if bar_width is not None else max(1, geometry.width // 8)
    t = _arrival_times(n, duration_us, rng)
    lead = (speed_px_per_s * t * 1e-6) % geometry.width
    pol = rng.integers(0, 2, size=n)
    edge = np.where(pol == ON, lead, lead - bar)
    x = np.rint(edge + rng.normal(0.0, edge_jitter_px, size=n)).astype(np.int64) % geometry.width
    # the stimulus spans the middle half of the rows
    y0, y1 = geometry.height // 4, max(geometry.height // 4 + 1, 3 * geometry.height // 4)
    y = rng.integers(y0, y1, size=n)
    return make_events(t, x, y, pol)


def gen_uniform_noise(geometry: SensorGeometry, rate_eps: float, duration_us: int,
                      rng_seed: int = 0) -> np.ndarray:
    """Background-activity-like noise: uniform positions and polarities."""
    if rate_eps <= 0:
        raise ValueError("rate_eps must be positive")
    rng = np.random.default_rng(rng_seed)
    n = int(round(rate_eps * duration_us * 1e-6))
    if duration_us <= 0 or n == 0:
        return np.zeros(0, EVENT_DTYPE)
    t = _arrival_times(n, duration_us, rng)
    return make_events(t, rng.integers(0, geometry.width, n),
                       rng.integers(0, geometry.height, n), rng.integers(0, 2, n))
