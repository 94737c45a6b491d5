"""Exception hierarchy shared by every evla module."""

from __future__ import annotations


class EvlaError(Exception):
    """Base class for all rejected-input errors raised by evla."""


# -- event model -------------------------------------------------------------

class InvalidStream(EvlaError, ValueError):
    pass


class UnsortedTimestamps(InvalidStream):
    def __init__(self, index: int, previous: int, current: int):
        self.index = index
        super().__init__(
            f"timestamps decrease at index {index}: {previous} -> {current}"
        )


class OutOfBounds(InvalidStream):
    def __init__(self, index: int, event, width: int, height: int):
        self.index = index
        self.event = event
        super().__init__(
            f"event {index} {event} lies outside the {width}x{height} sensor"
        )


class InvalidPolarity(InvalidStream):
    def __init__(self, index: int, value):
        self.index = index
        super().__init__(f"event {index} has polarity {value!r}, expected +1 or -1")


class InvalidTimestamp(InvalidStream):
    def __init__(self, index: int, value):
        self.index = index
        super().__init__(f"event {index} has negative timestamp {value}")


class InvalidGeometry(EvlaError, ValueError):
    pass


class EmptyInterval(EvlaError, ValueError):
    pass


# -- representation / fusion -------------------------------------------------

class InvalidTau(EvlaError, ValueError):
    pass


class GeometryMismatch(EvlaError, ValueError):
    pass


class IndivisibleResolution(EvlaError, ValueError):
    pass


class ShapeMismatch(EvlaError, ValueError):
    def __init__(self, name: str, expected, actual):
        self.name = name
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{name}: expected shape {self.expected}, got {self.actual}")


class InvalidRate(EvlaError, ValueError):
    pass


class NonFiniteGradient(EvlaError, ArithmeticError):
    pass


class InvalidConfig(EvlaError, ValueError):
    pass


# -- simulator ---------------------------------------------------------------

class ObjectOutOfBounds(EvlaError, ValueError):
    pass


class NonPositiveThreshold(EvlaError, ValueError):
    pass


class ExposureOutsideSequence(EvlaError, ValueError):
    pass


# -- storage -----------------------------------------------------------------

class StorageError(EvlaError):
    pass


class BadMagic(StorageError, ValueError):
    pass


class UnsupportedVersion(StorageError, ValueError):
    pass


class TruncatedFile(StorageError, ValueError):
    def __init__(self, offset: int, message: str = ""):
        self.offset = offset
        super().__init__(f"file truncated at byte offset {offset}" + (f": {message}" if message else ""))


class SinkFailure(StorageError, OSError):
    pass


class MalformedHeader(StorageError, ValueError):
    pass


class UnsupportedMaxval(StorageError, ValueError):
    pass


class MalformedRecord(StorageError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class NonMonotoneFrames(StorageError, ValueError):
    pass
