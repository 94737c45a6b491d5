"""Named-tensor container for adapter parameters.

Layout (little-endian)::

    magic "EVLP" | version u16 = 1 | reserved u16 = 0 | tensor count u32
    per tensor, in store order:
        name length u16 | name (UTF-8) | ndim u8 | ndim x u32 dims | float32 data, row-major
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict

import numpy as np

from evla.errors import BadMagic, SinkFailure, TruncatedFile, UnsupportedVersion
from evla.fusion.adapter import AdapterConfig, AdapterParams

MAGIC = b"EVLP"
VERSION = 1
_HEAD = struct.Struct("<4sHHI")


def encode_params(params: AdapterParams) -> bytes:
    parts = [_HEAD.pack(MAGIC, VERSION, 0, len(params))]
    for name, tensor in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{tensor.ndim}I", tensor.ndim, *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


def write_params(params: AdapterParams, sink) -> int:
    """Store as float32; float64 stores are rounded on the way out."""
    data = encode_params(params)
    try:
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "wb") as fh:
                fh.write(data)
        else:
            sink.write(data)
    except OSError as exc:
        raise SinkFailure(f"could not write parameters: {exc}") from exc
    return len(data)


def decode_params(buf: bytes, config: AdapterConfig | None = None) -> AdapterParams:
    if buf[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _HEAD.size:
        raise TruncatedFile(len(buf), "incomplete header")
    _, version, _, count = _HEAD.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"parameter file version {version} (supported: {VERSION})")
    off = _HEAD.size
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def need(n: int) -> None:
        if off + n > len(buf):
            raise TruncatedFile(off, f"tensor {len(tensors)} incomplete")

    for _ in range(count):
        need(2)
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        need(name_len + 1)
        name = buf[off:off + name_len].decode("utf-8")
        off += name_len
        ndim = buf[off]
        off += 1
        need(4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        need(4 * n)
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
    if off != len(buf):
        raise TruncatedFile(off, f"{len(buf) - off} unexpected trailing bytes")
    params = AdapterParams.from_tensors(tensors, dtype=np.float32)
    if config is not None:
        params.check(config)
    return params


def read_params(source, config: AdapterConfig | None = None) -> AdapterParams:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return decode_params(bytes(source), config)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return decode_params(fh.read(), config)
    return decode_params(source.read(), config)
