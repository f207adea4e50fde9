"""Reader for the big-endian IDX files used by digit datasets.

Image files carry magic 0x00000803 (unsigned bytes, rank 3), label
files 0x00000801.  Files ending in .gz are decompressed on the fly.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from .errors import IdxFormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _open(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise IdxFormatError(f"truncated idx file while reading {what}")
    return buf


def read_idx_images(path) -> np.ndarray:
    """Load an image file into a (count, rows, cols) uint8 array."""
    with _open(path) as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "header"))
        if magic != IMAGES_MAGIC:
            raise IdxFormatError(
                f"bad magic 0x{magic:08x} in {path}, expected 0x{IMAGES_MAGIC:08x}")
        if count == 0 or rows == 0 or cols == 0:
            raise IdxFormatError(f"empty idx image file {path}")
        data = _read_exact(fh, count * rows * cols, "pixels")
        if fh.read(1):
            raise IdxFormatError(f"trailing bytes in {path}")
    return np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols).copy()


def read_idx_labels(path) -> np.ndarray:
    """Load a label file into a (count,) uint8 array."""
    with _open(path) as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, "header"))
        if magic != LABELS_MAGIC:
            raise IdxFormatError(
                f"bad magic 0x{magic:08x} in {path}, expected 0x{LABELS_MAGIC:08x}")
        data = _read_exact(fh, count, "labels")
        if fh.read(1):
            raise IdxFormatError(f"trailing bytes in {path}")
    return np.frombuffer(data, dtype=np.uint8).copy()


def write_idx_images(path, images: np.ndarray):
    """Inverse of read_idx_images, mainly for building test fixtures."""
    arr = np.asarray(images, dtype=np.uint8)
    if arr.ndim != 3:
        raise IdxFormatError(f"images must be rank 3, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, *arr.shape))
        fh.write(arr.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    arr = np.asarray(labels, dtype=np.uint8)
    if arr.ndim != 1:
        raise IdxFormatError(f"labels must be rank 1, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, arr.shape[0]))
        fh.write(arr.tobytes())
