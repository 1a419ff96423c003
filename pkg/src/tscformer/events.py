"""Event streams: parsing, serialization, and frame binning.

An event is the quadruple (x, y, t, p): pixel column, pixel row, timestamp
in microseconds, polarity in {+1, -1}. Streams are nondecreasing in t.

Two wire formats:

  CSV    rows ``x,y,t,p``, header optional.
  evbin  magic ``EVB1``, u16 width, u16 height, u64 count, then `count`
         packed little-endian records (u16 x, u16 y, u64 t, i8 p).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import OrderingError, ParseError, ValidationError
from .tensor import Tensor

EVBIN_MAGIC = b"EVB1"
_HEADER = struct.Struct("<4sHHQ")
_RECORD = struct.Struct("<HHQb")


@dataclass(frozen=True)
class EventPoint:
    x: int
    y: int
    t: int
    p: int


class EventStream:
    """Ordered event sequence bounded by a sensor size."""

    __slots__ = ("points", "width", "height")

    def __init__(self, points: Iterable[EventPoint], width: int, height: int):
        points = list(points)
        if width < 1 or height < 1:
            raise ValidationError(f"sensor size {width}x{height} invalid")
        last_t = None
        for i, e in enumerate(points):
            if not (0 <= e.x < width and 0 <= e.y < height):
                raise ValidationError(
                    f"event {i} at ({e.x}, {e.y}) outside sensor {width}x{height}"
                )
            if e.p not in (1, -1):
                raise ValidationError(f"event {i} polarity {e.p} not in {{+1, -1}}")
            if e.t < 0:
                raise ValidationError(f"event {i} timestamp {e.t} negative")
            if last_t is not None and e.t < last_t:
                raise OrderingError(f"event {i} timestamp {e.t} decreases (previous {last_t})")
            last_t = e.t
        self.points = points
        self.width = width
        self.height = height

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EventStream)
            and self.width == other.width
            and self.height == other.height
            and self.points == other.points
        )


def parse_events(
    data: bytes,
    fmt: str,
    width: int | None = None,
    height: int | None = None,
) -> EventStream:
    """Parse a byte stream in the given format into an EventStream.

    For CSV the sensor size is taken from `width`/`height` when given,
    otherwise inferred as max coordinate + 1 (1x1 for an empty stream).
    evbin carries its size in the header; explicit arguments must agree.
    """
    if fmt == "csv":
        return _parse_csv(data, width, height)
    if fmt == "evbin":
        stream = _parse_evbin(data)
        if width is not None and width != stream.width:
            raise ValidationError(f"evbin width {stream.width} != requested {width}")
        if height is not None and height != stream.height:
            raise ValidationError(f"evbin height {stream.height} != requested {height}")
        return stream
    raise ValidationError(f"unknown event format {fmt!r} (expected csv or evbin)")


def _parse_csv(data: bytes, width: int | None, height: int | None) -> EventStream:
    text = data.decode("utf-8")
    points: list[EventPoint] = []
    last_t = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if lineno == 1 and not _numeric_row(fields):
            continue  # optional header
        if len(fields) != 4:
            raise ParseError(f"line {lineno}: expected 4 fields x,y,t,p, got {len(fields)}")
        try:
            x, y, t, p = (int(f) for f in fields)
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer field in {line!r}") from None
        if p not in (1, -1):
            raise ValidationError(f"line {lineno}: polarity {p} not in {{+1, -1}}")
        if x < 0 or y < 0 or t < 0:
            raise ValidationError(f"line {lineno}: negative coordinate or timestamp")
        if width is not None and x >= width:
            raise ValidationError(f"line {lineno}: x={x} out of bounds for width {width}")
        if height is not None and y >= height:
            raise ValidationError(f"line {lineno}: y={y} out of bounds for height {height}")
        if last_t is not None and t < last_t:
            raise OrderingError(f"line {lineno}: timestamp {t} decreases (previous {last_t})")
        last_t = t
        points.append(EventPoint(x, y, t, p))
    if width is None:
        width = max((e.x for e in points), default=0) + 1
    if height is None:
        height = max((e.y for e in points), default=0) + 1
    return EventStream(points, width, height)


def _numeric_row(fields: Sequence[str]) -> bool:
    try:
        for f in fields:
            int(f)
    except ValueError:
        return False
    return True


def _parse_evbin(data: bytes) -> EventStream:
    if len(data) < _HEADER.size:
        raise ParseError("evbin data truncated before header")
    magic, width, height, count = _HEADER.unpack_from(data, 0)
    if magic != EVBIN_MAGIC:
        raise ParseError(f"bad evbin magic {magic!r}")
    expected = _HEADER.size + count * _RECORD.size
    if len(data) != expected:
        raise ParseError(f"evbin length {len(data)} != {expected} for {count} records")
    points = []
    offset = _HEADER.size
    last_t = None
    for i in range(count):
        x, y, t, p = _RECORD.unpack_from(data, offset)
        offset += _RECORD.size
        if p not in (1, -1):
            raise ValidationError(f"record {i}: polarity {p} not in {{+1, -1}}")
        if not (x < width and y < height):
            raise ValidationError(f"record {i}: ({x}, {y}) outside sensor {width}x{height}")
        if last_t is not None and t < last_t:
            raise OrderingError(f"record {i}: timestamp {t} decreases (previous {last_t})")
        last_t = t
        points.append(EventPoint(x, y, t, p))
    return EventStream(points, width, height)


def serialize_events(stream: EventStream) -> bytes:
    """Encode a stream as evbin; parse_events inverts this bit-exactly."""
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise ValidationError(f"sensor {stream.width}x{stream.height} exceeds u16 extents")
    out = bytearray(_HEADER.pack(EVBIN_MAGIC, stream.width, stream.height, len(stream)))
    for e in stream:
        out += _RECORD.pack(e.x, e.y, e.t, e.p)
    return bytes(out)


def bin_events(stream: EventStream, frame_times: Sequence[int], height: int, width: int) -> Tensor:
    """Accumulate events into per-frame polarity count images.

    Frame i collects events with t in [frame_times[i], frame_times[i+1]);
    the last frame is open-ended. Events before frame_times[0] are dropped.
    Channel 0 counts p=+1, channel 1 counts p=-1, at sensor coordinates
    rescaled to height x width by nearest-neighbor index mapping (which
    keeps the total count conserved).
    """
    frame_times = [int(t) for t in frame_times]
    if len(frame_times) < 1:
        raise ValidationError("need at least one frame time")
    if any(b <= a for a, b in zip(frame_times, frame_times[1:])):
        raise ValidationError(f"frame_times must be strictly increasing, got {frame_times}")
    t_count = len(frame_times)
    counts = np.zeros((t_count, 2, height, width), dtype=np.float64)
    for e in stream:
        if e.t < frame_times[0]:
            continue
        frame = _window_index(e.t, frame_times)
        row = (e.y * height) // stream.height
        col = (e.x * width) // stream.width
        channel = 0 if e.p == 1 else 1
        counts[frame, channel, row, col] += 1.0
    return Tensor(counts)


def _window_index(t: int, frame_times: list[int]) -> int:
    # rightmost window whose start is <= t
    lo, hi = 0, len(frame_times) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if frame_times[mid] <= t:
            lo = mid
        else:
            hi = mid - 1
    return lo


def render_event_frames(counts: Tensor) -> Tensor:
    """Binary red/blue rendering of polarity counts: (T,2,H,W) -> (T,3,H,W).

    Channel 0 marks pixels with any positive-polarity event, channel 2 any
    negative-polarity event, channel 1 stays zero.
    """
    arr = counts.data
    if arr.ndim != 4 or arr.shape[1] != 2:
        raise ValidationError(f"expected (T, 2, H, W) counts, got {counts.shape}")
    if np.any(arr < 0):
        raise ValidationError("event counts must be non-negative")
    t, _, h, w = arr.shape
    frames = np.zeros((t, 3, h, w), dtype=np.float64)
    frames[:, 0] = np.minimum(arr[:, 0], 1.0)
    frames[:, 2] = np.minimum(arr[:, 1], 1.0)
    return Tensor(frames)
