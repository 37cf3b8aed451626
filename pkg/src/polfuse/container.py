"""PFC3 raster container.

Layout (little-endian)::

    0-3    b"PFC3"
    4-5    version, u16 (= 1)
    6      dtype code: 0 float32, 1 float64
    7      channel count: 1, 3 or 9
    8-11   height, u32
    12-15  width, u32
    16-19  metadata length in bytes, u32
    20-    UTF-8 metadata (JSON), then channel-planar row-major samples
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PFC3"
VERSION = 1
HEADER = struct.Struct("<4sHBBIII")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CHANNEL_COUNTS = (1, 3, 9)


class ContainerError(ValueError):
    """Base class for unreadable or unwritable PFC3 files."""


class BadMagicError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class UnsupportedFormatError(ContainerError):
    """Unknown version, dtype code or channel count."""


def _dtype_code(dtype) -> int:
    dt = np.dtype(dtype)
    for code, known in DTYPES.items():
        if known == dt.newbyteorder("<"):
            return code
    raise UnsupportedFormatError(f"unsupported sample dtype {dt}")


def write_raster(path, raster: np.ndarray, metadata: dict | None = None, dtype=None) -> None:
    arr = np.asarray(raster)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ContainerError(f"raster must be (C, H, W), got shape {arr.shape}")
    c, h, w = arr.shape
    if c not in CHANNEL_COUNTS:
        raise UnsupportedFormatError(f"channel count {c} not in {CHANNEL_COUNTS}")
    dt = np.dtype(dtype) if dtype is not None else (arr.dtype if arr.dtype.kind == "f" else np.dtype("f8"))
    code = _dtype_code(dt)
    if not np.all(np.isfinite(arr)):
        raise ContainerError("refusing to write non-finite samples")
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, code, c, h, w, len(meta)))
        fh.write(meta)
        fh.write(payload)


def read_raster(path) -> tuple[np.ndarray, dict]:
    """Return ``(array (C, H, W), metadata)``; samples keep their stored dtype."""
    blob = Path(path).read_bytes()
    if len(blob) < HEADER.size:
        if blob[:4] != MAGIC[:len(blob[:4])]:
            raise BadMagicError(f"{path}: not a PFC3 file")
        raise TruncatedError(f"{path}: header is {len(blob)} bytes, need {HEADER.size}")
    magic, version, code, c, h, w, meta_len = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedFormatError(f"{path}: unknown version {version}")
    if code not in DTYPES:
        raise UnsupportedFormatError(f"{path}: unknown dtype code {code}")
    if c not in CHANNEL_COUNTS:
        raise UnsupportedFormatError(f"{path}: channel count {c} not in {CHANNEL_COUNTS}")
    dt = DTYPES[code]
    start = HEADER.size + meta_len
    need = start + c * h * w * dt.itemsize
    if len(blob) < need:
        raise TruncatedError(f"{path}: {len(blob)} bytes, header promises {need}")
    try:
        meta = json.loads(blob[HEADER.size:start].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: unreadable metadata ({exc})") from None
    data = np.frombuffer(blob, dtype=dt, count=c * h * w, offset=start).reshape(c, h, w)
    return data.astype(dt.newbyteorder("="), copy=True), meta
