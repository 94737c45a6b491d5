"""Binary portable pixmaps: P6 for RGB, P5 for single-channel maps (maxval 255)."""

from __future__ import annotations

import os

import numpy as np

from evla.errors import MalformedHeader, UnsupportedMaxval

_WHITESPACE = b" \t\r\n\v\f"


def to_gray8(values: np.ndarray) -> np.ndarray:
    """Quantise a [0, 1] map to 8 bits as round(v * 255), halves rounded up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def encode_pixmap(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise TypeError(f"pixmaps hold 8-bit data, got {img.dtype}; use to_gray8() for real maps")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot store an array of shape {img.shape} as a pixmap")
    h, w = img.shape[:2]
    return b"%s\n%d %d\n255\n" % (magic, w, h) + np.ascontiguousarray(img).tobytes()


def write_image(path, image: np.ndarray) -> None:
    """Write uint8 (H, W, 3) as P6 or uint8 (H, W) as P5.  Real maps: see write_map."""
    data = encode_pixmap(image)
    with open(path, "wb") as fh:
        fh.write(data)


def write_map(path, values: np.ndarray) -> None:
    """Write a [0, 1] single-channel map as P5."""
    write_image(path, to_gray8(values))


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` header tokens (comments skipped) and the offset after them."""
    out: list[bytes] = []
    i, n = 0, len(buf)
    while len(out) < count:
        while i < n and buf[i] in _WHITESPACE:
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i] not in b"\r\n":
                i += 1
            continue
        start = i
        while i < n and buf[i] not in _WHITESPACE and buf[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise MalformedHeader("header ends early")
        out.append(buf[start:i])
    return out, i


def decode_pixmap(buf: bytes) -> np.ndarray:
    if buf[:2] not in (b"P5", b"P6"):
        raise MalformedHeader(f"not a binary P5/P6 pixmap (magic {buf[:2]!r})")
    tokens, end = _tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedHeader(f"non-numeric header field: {exc}") from exc
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxval(f"only maxval 255 is supported, got {maxval}")
    if end >= len(buf) or buf[end] not in _WHITESPACE:
        raise MalformedHeader("missing whitespace after maxval")
    channels = 3 if tokens[0] == b"P6" else 1
    size = width * height * channels
    data = buf[end + 1:end + 1 + size]
    if len(data) != size:
        raise MalformedHeader(f"expected {size} payload bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape(height, width, 3).copy() if channels == 3 else arr.reshape(height, width).copy()


def read_image(path) -> np.ndarray:
    """uint8 (H, W, 3) for P6, uint8 (H, W) for P5."""
    if isinstance(path, (str, os.PathLike)):
        with open(path, "rb") as fh:
            return decode_pixmap(fh.read())
    return decode_pixmap(path.read())
