"""Bit-exact tensor files (DPT) and 8-bit PGM label-map export.

DPT layout, all little-endian: magic "DPT1", version u8 = 1, dtype u8 = 0
(float64), ndim u8, reserved u8 = 0, then ndim u64 dimensions, then the
row-major float64 payload.  Reads validate every header field with a
distinct error; writes go through a temp file + rename so interrupted
runs never leave torn files.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"DPT1"
VERSION = 1
DTYPE_F64 = 0


class DptFormatError(ValueError):
    """Base class for malformed DPT files."""


class DptBadMagic(DptFormatError):
    pass


class DptUnsupportedVersion(DptFormatError):
    pass


class DptUnsupportedDtype(DptFormatError):
    pass


class DptTruncated(DptFormatError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_tensor(path, tensor) -> None:
    """Serialize a float64 array; read_tensor(write_tensor(t)) is bit-exact."""
    t = np.ascontiguousarray(tensor, dtype="<f8")
    header = struct.pack("<4sBBBB", MAGIC, VERSION, DTYPE_F64, t.ndim, 0)
    dims = struct.pack(f"<{t.ndim}Q", *t.shape) if t.ndim else b""
    atomic_write_bytes(path, header + dims + t.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise DptTruncated(f"header needs 8 bytes, file has {len(blob)}")
    magic, version, dtype, ndim, _reserved = struct.unpack_from("<4sBBBB", blob)
    if magic != MAGIC:
        raise DptBadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DptUnsupportedVersion(f"unsupported version {version}, expected {VERSION}")
    if dtype != DTYPE_F64:
        raise DptUnsupportedDtype(f"unsupported dtype code {dtype}, expected {DTYPE_F64}")
    offset = 8
    if len(blob) < offset + 8 * ndim:
        raise DptTruncated(
            f"dims need {8 * ndim} bytes, file has {len(blob) - offset} after the header"
        )
    dims = struct.unpack_from(f"<{ndim}Q", blob, offset) if ndim else ()
    offset += 8 * ndim
    count = 1
    for d in dims:
        count *= d
    expected = count * 8
    actual = len(blob) - offset
    if actual != expected:
        raise DptTruncated(f"payload expected {expected} bytes, found {actual}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return data.reshape(dims).copy()


def export_pgm(labels, num_classes: int, path) -> None:
    """Write a (H, W) class-index map as binary PGM (P5, maxval 255).

    Pixel value is floor(class * 255 / (C - 1)) so the C classes spread
    over the full 8-bit range; a single-class map is all zeros.
    """
    if num_classes > 256:
        raise ValueError(f"PGM export supports at most 256 classes, got {num_classes}")
    a = np.asarray(labels)
    if a.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {a.shape}")
    if a.size and (a.min() < 0 or a.max() >= num_classes):
        raise ValueError("class indices out of range for the stated class count")
    if num_classes > 1:
        pixels = (a.astype(np.int64) * 255) // (num_classes - 1)
    else:
        pixels = np.zeros_like(a, dtype=np.int64)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Minimal P5 reader for round-trip tests (no comment support)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h = (int(x) for x in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError(f"expected maxval 255, got {maxval}")
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w)
    return data.reshape(h, w).copy()


def labels_from_pgm(pixels, num_classes: int) -> np.ndarray:
    """Invert the export quantization for C <= 16 round-trip checks."""
    if num_classes > 1:
        return np.rint(pixels.astype(np.float64) * (num_classes - 1) / 255.0).astype(np.int64)
    return np.zeros_like(pixels, dtype=np.int64)
