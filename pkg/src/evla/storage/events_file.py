"""Fixed-width binary event files.

Layout (all little-endian)::

    offset  size  field
    0       4     magic "EVLA"
    4       2     version (u16) = 1
    6       2     width (u16)
    8       2     height (u16)
    10      1     bayer origin code (u8): 0 RGGB, 1 BGGR, 2 GRBG, 3 GBRG
    11      5     reserved, zero (pads the count to an 8-byte boundary)
    16      8     event count (u64)
    24      16*n  records: t (u64 us), x (u16), y (u16), p (i8, +1/-1), 3 zero bytes
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from evla.errors import BadMagic, SinkFailure, TruncatedFile, UnsupportedVersion
from evla.events import BAYER_PATTERNS, EventStream, SensorGeometry, validate_stream

MAGIC = b"EVLA"
VERSION = 1
HEADER = struct.Struct("<4sHHHB5xQ")
HEADER_SIZE = HEADER.size
RECORD_DTYPE = np.dtype(
    {"names": ["t", "x", "y", "p"],
     "formats": ["<u8", "<u2", "<u2", "i1"],
     "offsets": [0, 8, 10, 12],
     "itemsize": 16}
)
RECORD_SIZE = RECORD_DTYPE.itemsize

assert HEADER_SIZE == 24 and RECORD_SIZE == 16


def encode_header(geometry: SensorGeometry, count: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, geometry.width, geometry.height,
                       BAYER_PATTERNS.index(geometry.bayer_origin), count)


def encode_events(stream: EventStream) -> bytes:
    records = np.zeros(len(stream), dtype=RECORD_DTYPE)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    return encode_header(stream.geometry, len(stream)) + records.tobytes()


def write_events(stream: EventStream, sink) -> int:
    """Write ``stream`` to a path or binary file object; returns bytes written."""
    data = encode_events(stream)
    try:
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "wb") as fh:
                fh.write(data)
        else:
            sink.write(data)
    except OSError as exc:
        raise SinkFailure(f"could not write events: {exc}") from exc
    return len(data)


def decode_header(buf: bytes) -> tuple[SensorGeometry, int]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < 6:
        raise TruncatedFile(len(buf), "incomplete header")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"event file version {version} (supported: {VERSION})")
    if len(buf) < HEADER_SIZE:
        raise TruncatedFile(len(buf), "incomplete header")
    _, _, width, height, bayer, count = HEADER.unpack_from(buf, 0)
    if bayer >= len(BAYER_PATTERNS):
        raise BadMagic(f"unknown bayer origin code {bayer}")
    return SensorGeometry(width, height, BAYER_PATTERNS[bayer]), count


def decode_events(buf: bytes) -> EventStream:
    geometry, count = decode_header(buf)
    payload = len(buf) - HEADER_SIZE
    complete = payload // RECORD_SIZE
    if complete < count:
        raise TruncatedFile(HEADER_SIZE + complete * RECORD_SIZE,
                            f"header announces {count} events, {complete} complete records present")
    if payload != count * RECORD_SIZE:
        raise TruncatedFile(HEADER_SIZE + count * RECORD_SIZE,
                            f"{payload - count * RECORD_SIZE} unexpected trailing bytes")
    records = np.frombuffer(buf, dtype=RECORD_DTYPE, count=count, offset=HEADER_SIZE)
    return validate_stream(
        (records["x"].astype(np.uint16), records["y"].astype(np.uint16),
         records["t"].astype(np.uint64), records["p"].astype(np.int8)),
        geometry,
    )


def read_events(source) -> EventStream:
    """Read and validate an event file from a path, bytes or binary file object."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        buf = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            buf = fh.read()
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        buf = source.read()
    else:
        raise TypeError(f"cannot read events from {type(source).__name__}")
    return decode_events(buf)
