"""Selecting the events that belong to one RGB observation.

Two families are provided: the recent-count window (the last ``N`` events at
or before the exposure-end time) and the fixed-duration window over
``(t_e - delta, t_e]``.  Both return a :class:`Window`, which is an index range
into the parent stream and never copies event data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from evla.events import Event, EventStream, SensorGeometry


@dataclass(frozen=True)
class RecentCount:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"recent-count window needs N >= 1, got {self.n}")


@dataclass(frozen=True)
class Duration:
    delta_us: int

    def __post_init__(self):
        if self.delta_us < 0:
            raise ValueError(f"window duration must be non-negative, got {self.delta_us}")


WindowPolicy = Union[RecentCount, Duration]


@dataclass(frozen=True, eq=False)
class Window:
    stream: EventStream
    start: int
    stop: int
    t_query: int
    policy: WindowPolicy
    shortfall: bool = False

    def __len__(self) -> int:
        return self.stop - self.start

    @property
    def geometry(self) -> SensorGeometry:
        return self.stream.geometry

    @property
    def x(self) -> np.ndarray:
        return self.stream.x[self.start:self.stop]

    @property
    def y(self) -> np.ndarray:
        return self.stream.y[self.start:self.stop]

    @property
    def t(self) -> np.ndarray:
        return self.stream.t[self.start:self.stop]

    @property
    def p(self) -> np.ndarray:
        return self.stream.p[self.start:self.stop]

    @property
    def span_us(self) -> int:
        """Time covered by the selected events; 0 for empty or single-event windows."""
        if len(self) == 0:
            return 0
        return int(self.stream.t[self.stop - 1]) - int(self.stream.t[self.start])

    def events(self) -> list[Event]:
        return [self.stream[i] for i in range(self.start, self.stop)]

    def to_stream(self) -> EventStream:
        return self.stream.slice(self.start, self.stop)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Window):
            return NotImplemented
        return (
            self.stream is other.stream
            and (self.start, self.stop, self.t_query, self.policy, self.shortfall)
            == (other.start, other.stop, other.t_query, other.policy, other.shortfall)
        )

    __hash__ = None


def _prefix_end(t: np.ndarray, bound: int) -> int:
    """Index one past the last timestamp <= bound."""
    if bound < 0:
        return 0
    return int(np.searchsorted(t, np.uint64(bound), side="right"))


def recent_count_window(stream: EventStream, t_e: int, n: int) -> Window:
    policy = RecentCount(int(n))
    stop = _prefix_end(stream.t, int(t_e))
    start = max(0, stop - policy.n)
    return Window(stream, start, stop, int(t_e), policy, shortfall=stop < policy.n)


def duration_window(stream: EventStream, t_e: int, delta_us: int) -> Window:
    policy = Duration(int(delta_us))
    stop = _prefix_end(stream.t, int(t_e))
    start = min(stop, _prefix_end(stream.t, int(t_e) - policy.delta_us))
    return Window(stream, start, stop, int(t_e), policy)


def make_window(stream: EventStream, t_e: int, policy: WindowPolicy) -> Window:
    if isinstance(policy, RecentCount):
        return recent_count_window(stream, t_e, policy.n)
    if isinstance(policy, Duration):
        return duration_window(stream, t_e, policy.delta_us)
    raise TypeError(f"unknown window policy {policy!r}")


def parse_policy(text: str) -> WindowPolicy:
    """Parse ``count:N`` or ``duration:MS`` (milliseconds, may be fractional)."""
    kind, _, value = text.partition(":")
    kind = kind.strip().lower()
    if kind == "count":
        return RecentCount(int(value))
    if kind == "duration":
        us = round(float(value) * 1000)
        return Duration(int(us))
    raise ValueError(f"window policy must be count:N or duration:MS, got {text!r}")
