"""MFFT binary tensor files and the named-entry checkpoint container.

Tensor layout (all integers little-endian)::

    b"MFFT" | version u8 (=1) | dtype u8 (1=f32, 2=f64) | rank u8 | rank x u32 dims | payload

The container wraps a JSON header and a sequence of MFFT tensors::

    b"MFFC" | version u8 (=1) | header length u32 | UTF-8 JSON header | MFFT blob per entry

The header lists entry names in blob order.
"""

from __future__ import annotations

import io
import json
import os
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"MFFT"
CONTAINER_MAGIC = b"MFFC"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class FormatError(ValueError):
    """Malformed or unsupported MFFT data."""


def encode_tensor(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype.kind == "f" and arr.dtype.byteorder not in ("=", "|"):
        arr = arr.astype(arr.dtype.newbyteorder("="))
    if arr.dtype not in _CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}; MFFT stores float32 or float64")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    code = _CODES[arr.dtype]
    head = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated MFFT data while reading {what}")
    return buf


def read_tensor(stream: BinaryIO) -> np.ndarray:
    magic = stream.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
    version, code, rank = struct.unpack("<BBB", _read_exact(stream, 3, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported MFFT version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, "dims"))
    dtype = _DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    payload = _read_exact(stream, count * dtype.itemsize, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def decode_tensor(blob: bytes) -> np.ndarray:
    stream = io.BytesIO(blob)
    arr = read_tensor(stream)
    if stream.read(1):
        raise FormatError("trailing bytes after MFFT payload")
    return arr


def save_tensor(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def encode_container(header: dict, entries: dict[str, np.ndarray]) -> bytes:
    header = dict(header, entries=list(entries))
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [CONTAINER_MAGIC, struct.pack("<BI", VERSION, len(text)), text]
    out.extend(encode_tensor(entries[name]) for name in entries)
    return b"".join(out)


def decode_container(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    stream = io.BytesIO(blob)
    if stream.read(4) != CONTAINER_MAGIC:
        raise FormatError("not an MFFC checkpoint container")
    version, length = struct.unpack("<BI", _read_exact(stream, 5, "container header"))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    try:
        header = json.loads(_read_exact(stream, length, "JSON header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt container header: {exc}") from None
    entries = {name: read_tensor(stream) for name in header.get("entries", [])}
    if stream.read(1):
        raise FormatError("trailing bytes after last container entry")
    return header, entries
