"""Raw float32 plane dumps and 8-bit preview images."""

import struct
from pathlib import Path

import numpy as np
from PIL import Image

RAW_MAGIC = b"LRPCARAW"
_HEADER = struct.Struct("<8sII")  # 16 bytes: magic, H, W


class RawFormatError(ValueError):
    pass


def write_raw(path, plane):
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {plane.shape}")
    h, w = plane.shape
    Path(path).write_bytes(_HEADER.pack(RAW_MAGIC, h, w) + np.ascontiguousarray(plane, dtype="<f4").tobytes())


def read_raw(path):
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise RawFormatError(f"{path}: truncated header")
    magic, h, w = _HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise RawFormatError(f"{path}: bad magic {magic!r}")
    if len(blob) != _HEADER.size + 4 * h * w:
        raise RawFormatError(f"{path}: expected {4 * h * w} payload bytes, got {len(blob) - _HEADER.size}")
    return np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(h, w).astype(np.float32)


def to_uint8(plane):
    """Min-max scale to 0..255; a constant plane maps to all zeros."""
    plane = np.asarray(plane, dtype=np.float64)
    lo, hi = plane.min(), plane.max()
    if hi <= lo:
        return np.zeros(plane.shape, dtype=np.uint8)
    return np.round((plane - lo) / (hi - lo) * 255).astype(np.uint8)


def write_png8(path, plane):
    Image.fromarray(to_uint8(plane)).save(path)
