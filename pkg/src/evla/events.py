"""Event datum, sensor geometry and the validated, immutable event stream."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from evla import kernels
from evla.errors import (
    EmptyInterval,
    InvalidGeometry,
    InvalidPolarity,
    InvalidTimestamp,
    OutOfBounds,
    UnsortedTimestamps,
)

US_PER_S = 1_000_000

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")

COORD_DTYPE = np.uint16
TIME_DTYPE = np.uint64
POLARITY_DTYPE = np.int8


class Polarity(IntEnum):
    ON = 1
    OFF = -1


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class SensorGeometry:
    """Pixel array size and the colour of the top-left Bayer site.

    Defaults to the DAVIS346 array (346 x 260).
    """

    width: int = 346
    height: int = 260
    bayer_origin: str = "RGGB"

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidGeometry("width and height must be integers")
        if self.width < 2 or self.height < 2:
            raise InvalidGeometry(f"sensor must be at least 2x2, got {self.width}x{self.height}")
        if self.width > 0xFFFF or self.height > 0xFFFF:
            raise InvalidGeometry("sensor dimensions must fit in 16 bits")
        if self.bayer_origin not in BAYER_PATTERNS:
            raise InvalidGeometry(
                f"bayer_origin must be one of {BAYER_PATTERNS}, got {self.bayer_origin!r}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width), the numpy order."""
        return (self.height, self.width)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class EventStream:
    """Timestamp-ordered events on one sensor, stored column-wise.

    Instances are only produced by :func:`validate_stream` (or readers that
    call it), so every stream in circulation satisfies: non-decreasing ``t``,
    all coordinates in bounds, polarities in {+1, -1}.  Columns are read-only.
    """

    __slots__ = ("x", "y", "t", "p", "geometry")

    def __init__(self, x, y, t, p, geometry: SensorGeometry, *, _trusted: bool = False):
        if not _trusted:
            raise TypeError("construct EventStream via validate_stream()")
        self.x = _readonly(x)
        self.y = _readonly(y)
        self.t = _readonly(t)
        self.p = _readonly(p)
        self.geometry = geometry

    def __len__(self) -> int:
        return self.t.shape[0]

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None

    def __repr__(self) -> str:
        g = self.geometry
        span = f", t=[{int(self.t[0])}..{int(self.t[-1])}]" if len(self) else ""
        return f"EventStream({len(self)} events, {g.width}x{g.height}{span})"

    def slice(self, start: int, stop: int) -> "EventStream":
        """Zero-copy contiguous sub-stream; invariants are inherited."""
        return EventStream(self.x[start:stop], self.y[start:stop], self.t[start:stop],
                           self.p[start:stop], self.geometry, _trusted=True)

    def to_records(self) -> list[Event]:
        return list(self)


def _columns(events) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(events, EventStream):
        return events.x, events.y, events.t, events.p
    if isinstance(events, dict):
        return (np.asarray(events["x"]), np.asarray(events["y"]),
                np.asarray(events["t"]), np.asarray(events["p"]))
    if isinstance(events, np.ndarray) and events.dtype.names:
        return events["x"], events["y"], events["t"], events["p"]
    if isinstance(events, tuple) and len(events) == 4 and all(
        isinstance(c, np.ndarray) for c in events
    ):
        return events
    rows = list(events)
    if not rows:
        return (np.empty(0, np.int64),) * 4
    arr = np.asarray(rows, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise TypeError("events must be (x, y, t, p) records")
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def _integral(col) -> np.ndarray:
    col = np.asarray(col)
    if col.dtype.kind in "iu":
        return col
    if col.size == 0:
        return col.astype(np.int64)
    if col.dtype.kind == "f" and np.all(np.isfinite(col)) and np.all(col == np.floor(col)):
        return col.astype(np.int64)
    raise TypeError("event coordinates, timestamps and polarities must be integers")


def _first_negative(col: np.ndarray) -> int:
    if col.dtype.kind == "u" or col.size == 0:
        return -1
    neg = col < 0
    i = int(np.argmax(neg))
    return i if neg[i] else -1


def validate_stream(events, geometry: SensorGeometry | None = None) -> EventStream:
    """Check a raw event sequence and wrap it as an :class:`EventStream`.

    ``events`` may be an iterable of ``(x, y, t, p)`` tuples, a structured
    array with those fields, a dict of columns, a 4-tuple of column arrays or
    an existing stream.  Input order is preserved; nothing is sorted.

    Raises UnsortedTimestamps or OutOfBounds on the first offending event.
    """
    if geometry is None:
        geometry = events.geometry if isinstance(events, EventStream) else SensorGeometry()
    if isinstance(events, EventStream) and events.geometry == geometry:
        return events

    x, y, t, p = (_integral(c) for c in _columns(events))
    n = len(t)
    if not (len(x) == len(y) == len(p) == n):
        raise ValueError("event columns have different lengths")

    i = _first_negative(t)
    if i >= 0:
        raise InvalidTimestamp(i, int(t[i]))
    t = t.astype(TIME_DTYPE, copy=False)
    i = kernels.first_unsorted(t)
    if i >= 0:
        raise UnsortedTimestamps(i, int(t[i - 1]), int(t[i]))

    negs = [j for j in (_first_negative(x), _first_negative(y)) if j >= 0]
    i = min(negs) if negs else kernels.first_out_of_bounds(x, y, geometry.width, geometry.height)
    if i >= 0:
        raise OutOfBounds(i, Event(int(x[i]), int(y[i]), int(t[i]), int(p[i])),
                          geometry.width, geometry.height)

    if n:
        bad = (p != 1) & (p != -1)
        j = int(np.argmax(bad))
        if bad[j]:
            raise InvalidPolarity(j, p[j].item())

    return EventStream(
        np.array(x, dtype=COORD_DTYPE, copy=True),
        np.array(y, dtype=COORD_DTYPE, copy=True),
        np.array(t, dtype=TIME_DTYPE, copy=True),
        np.array(p, dtype=POLARITY_DTYPE, copy=True),
        geometry,
        _trusted=True,
    )


def empty_stream(geometry: SensorGeometry | None = None) -> EventStream:
    return validate_stream([], geometry or SensorGeometry())


def _count_le(t: np.ndarray, bound: int) -> int:
    """Number of timestamps <= bound (bound may be negative)."""
    if bound < 0:
        return 0
    return int(np.searchsorted(t, np.uint64(bound), side="right"))


def event_rate(stream: EventStream, t0: int, t1: int) -> float:
    """Events per second over the half-open interval (t0, t1] in microseconds."""
    if t1 <= t0:
        raise EmptyInterval(f"t1 ({t1}) must exceed t0 ({t0})")
    count = _count_le(stream.t, int(t1)) - _count_le(stream.t, int(t0))
    return count * US_PER_S / (t1 - t0)


def iter_events(events: Iterable) -> Iterator[Event]:
    for e in events:
        yield Event(*map(int, e))
